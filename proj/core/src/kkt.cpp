#include "exssnet/kkt.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "exssnet/errors.hpp"

namespace exssnet {

void KktConfig::validate() const {
  if (!(sample_fraction > 0.0) || sample_fraction > 1.0) {
    throw std::domain_error("probe sample fraction must be in (0, 1]");
  }
  if (knn_k < 1) throw std::domain_error("knn k must be positive");
  if (!(probe_train_ratio > 0.0) || !(probe_train_ratio < 1.0)) {
    throw std::domain_error("probe train ratio must be in (0, 1)");
  }
  if (margin < 0.0) throw std::domain_error("margin must be non-negative");
}

Matrix extract_features(const ModelState& model, const Supermask& mask,
                        const Matrix& samples) {
  if (model.layer_count() < 2) {
    throw StateError("feature extraction needs at least one hidden layer");
  }
  ActivationCache cache;
  forward_masked(model, mask, samples, &cache);
  return cache.out[static_cast<std::size_t>(model.layer_count()) - 2];
}

std::vector<int> knn_classify(const Matrix& train_features,
                              const std::vector<int>& train_labels,
                              const Matrix& query_features, int k) {
  if (train_features.rows() != static_cast<int>(train_labels.size())) {
    throw ShapeError("knn: feature/label counts differ");
  }
  if (train_features.rows() == 0) {
    throw std::domain_error("knn: no training rows");
  }
  if (train_features.cols() != query_features.cols()) {
    throw ShapeError("knn: train and query feature widths differ");
  }
  if (k < 1) throw std::domain_error("knn: k must be positive");
  const int n = train_features.rows();
  const int use_k = std::min(k, n);

  std::vector<int> predictions;
  predictions.reserve(static_cast<std::size_t>(query_features.rows()));
  std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(n));
  for (int q = 0; q < query_features.rows(); ++q) {
    const float* qv = query_features.row(q);
    for (int r = 0; r < n; ++r) {
      const float* tv = train_features.row(r);
      double acc = 0.0;
      for (int c = 0; c < train_features.cols(); ++c) {
        const double d = static_cast<double>(qv[c]) - static_cast<double>(tv[c]);
        acc += d * d;
      }
      dist[static_cast<std::size_t>(r)] = {acc, r};
    }
    // Equal distances resolve toward the lower training-row index; the pair
    // ordering does exactly that.
    std::partial_sort(dist.begin(), dist.begin() + use_k, dist.end());
    std::map<int, int> votes;
    for (int i = 0; i < use_k; ++i) {
      ++votes[train_labels[static_cast<std::size_t>(dist[static_cast<std::size_t>(i)].second)]];
    }
    int best_label = -1;
    int best_votes = -1;
    for (const auto& [label, count] : votes) {
      if (count > best_votes) {  // map iterates labels ascending: ties keep
        best_votes = count;      // the lower label
        best_label = label;
      }
    }
    predictions.push_back(best_label);
  }
  return predictions;
}

TransferDecision select_transfer_task(const ModelState& model,
                                      const MaskRegistry& registry,
                                      const TaskData& task,
                                      const KktConfig& config, Rng& rng) {
  config.validate();
  task.validate();
  TransferDecision decision;
  decision.random_baseline = 1.0 / static_cast<double>(task.class_count());
  if (registry.task_count() == 0) return decision;

  // Draw the probe set from the task's training pool, then split it into a
  // fit part and a held-out part. One draw serves every candidate task, so
  // candidates are compared on identical probe data.
  std::vector<int> pool_positions(task.train_indices.size());
  for (std::size_t i = 0; i < pool_positions.size(); ++i) {
    pool_positions[i] = static_cast<int>(i);
  }
  rng.shuffle(pool_positions);
  const auto probe_n = std::max<std::int64_t>(
      2, std::llround(config.sample_fraction *
                      static_cast<double>(task.train_indices.size())));
  const auto take = std::min<std::int64_t>(
      probe_n, static_cast<std::int64_t>(pool_positions.size()));
  if (take < 2) {
    throw std::domain_error("probe needs at least two samples");
  }
  const auto fit_n = std::max<std::int64_t>(
      1, std::llround(config.probe_train_ratio * static_cast<double>(take)));
  const auto eval_n = take - fit_n;
  if (eval_n < 1) {
    throw std::domain_error("probe split left no evaluation samples");
  }

  std::vector<int> fit_rows, eval_rows;
  std::vector<int> fit_labels, eval_labels;
  for (std::int64_t i = 0; i < take; ++i) {
    const auto pos = static_cast<std::size_t>(pool_positions[static_cast<std::size_t>(i)]);
    if (i < fit_n) {
      fit_rows.push_back(task.train_indices[pos]);
      fit_labels.push_back(task.train_slots[pos]);
    } else {
      eval_rows.push_back(task.train_indices[pos]);
      eval_labels.push_back(task.train_slots[pos]);
    }
  }
  const Matrix fit_batch = gather_rows(*task.inputs, fit_rows);
  const Matrix eval_batch = gather_rows(*task.inputs, eval_rows);

  for (const auto& [candidate_id, candidate_mask] :
       registry.entries_before(task.task_id)) {
    const Matrix fit_features =
        extract_features(model, *candidate_mask, fit_batch);
    const Matrix eval_features =
        extract_features(model, *candidate_mask, eval_batch);
    const std::vector<int> predicted =
        knn_classify(fit_features, fit_labels, eval_features, config.knn_k);
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      if (predicted[i] == eval_labels[i]) ++hits;
    }
    const double accuracy =
        static_cast<double>(hits) / static_cast<double>(predicted.size());
    decision.probe_accuracies.emplace_back(candidate_id, accuracy);
  }

  double best = -1.0;
  for (const auto& [task_id, accuracy] : decision.probe_accuracies) {
    if (accuracy > best) {  // strict: ties keep the earlier task
      best = accuracy;
      decision.chosen_task = task_id;
    }
  }
  if (!(best > decision.random_baseline + config.margin)) {
    decision.chosen_task.reset();  // nothing beat chance by enough
  }
  return decision;
}

ScoreTensor scores_from_mask(const Supermask& mask, const ScoreTensor& base) {
  if (mask.layers.size() != base.layers.size()) {
    throw ShapeError("mask and score layer counts differ");
  }
  ScoreTensor scores = base;
  for (std::size_t l = 0; l < scores.layers.size(); ++l) {
    Matrix& layer = scores.layers[l];
    const BitMask& bits = mask.layers[l];
    if (bits.rows() != layer.rows() || bits.cols() != layer.cols()) {
      throw ShapeError("mask layer does not match score shape");
    }
    float* v = layer.values().data();
    for (std::int64_t i = 0; i < layer.size(); ++i) {
      if (bits.test(i)) v[i] += 1.0f;
    }
  }
  return scores;
}

}  // namespace exssnet
