#include "exssnet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

#include "exssnet/errors.hpp"

namespace exssnet {

void TrainConfig::validate() const {
  if (!(mask_density > 0.0) || mask_density > 1.0) {
    throw std::domain_error("mask_density must be in (0, 1]");
  }
  if (mask_epochs < 0 || weight_epochs < 0) {
    throw std::domain_error("epoch counts must be non-negative");
  }
  if (!(lr > 0.0) || !(score_lr > 0.0)) {
    throw std::domain_error("learning rates must be positive");
  }
  if (batch_size < 1) throw std::domain_error("batch_size must be positive");
  if (forced_overlap > 1.0) {
    throw std::domain_error("forced_overlap cannot exceed 1");
  }
}

OptimizerState OptimizerState::for_shapes(
    const std::vector<std::pair<int, int>>& shapes) {
  OptimizerState state;
  state.first_moment.reserve(shapes.size());
  state.second_moment.reserve(shapes.size());
  for (const auto& [rows, cols] : shapes) {
    state.first_moment.emplace_back(rows, cols, 0.0f);
    state.second_moment.emplace_back(rows, cols, 0.0f);
  }
  return state;
}

void OptimizerState::reset() {
  for (auto& m : first_moment) m.fill(0.0f);
  for (auto& v : second_moment) v.fill(0.0f);
  step = 0;
}

LossGrad cross_entropy_grad(const Matrix& logits, HeadRange head,
                            const std::vector<int>& slot_labels) {
  if (logits.rows() != static_cast<int>(slot_labels.size())) {
    throw ShapeError("cross entropy: batch and label counts differ");
  }
  if (head.begin < 0 || head.end > logits.cols() || head.begin >= head.end) {
    throw ShapeError("cross entropy: head slice out of range");
  }
  if (logits.rows() == 0) {
    throw std::domain_error("cross entropy over an empty batch");
  }

  LossGrad result;
  result.grad = Matrix(logits.rows(), logits.cols(), 0.0f);
  const auto inv_batch = 1.0f / static_cast<float>(logits.rows());
  double loss_sum = 0.0;
  for (int r = 0; r < logits.rows(); ++r) {
    const int label = slot_labels[static_cast<std::size_t>(r)];
    if (label < 0 || label >= head.width()) {
      throw std::out_of_range("cross entropy: label outside the head slice");
    }
    const float* row = logits.row(r);
    float max_logit = row[head.begin];
    for (int c = head.begin + 1; c < head.end; ++c) {
      max_logit = std::max(max_logit, row[c]);
    }
    if (!std::isfinite(max_logit)) {
      throw NumericError("cross entropy: non-finite logits");
    }
    double denom = 0.0;
    for (int c = head.begin; c < head.end; ++c) {
      denom += std::exp(static_cast<double>(row[c] - max_logit));
    }
    const double log_denom = std::log(denom);
    const int target = head.begin + label;
    loss_sum += log_denom - static_cast<double>(row[target] - max_logit);

    float* grow = result.grad.row(r);
    for (int c = head.begin; c < head.end; ++c) {
      const auto p = static_cast<float>(
          std::exp(static_cast<double>(row[c] - max_logit)) / denom);
      grow[c] = (c == target ? p - 1.0f : p) * inv_batch;
    }
  }
  result.loss = loss_sum / static_cast<double>(logits.rows());
  return result;
}

double cosine_lr(double base, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) throw std::domain_error("total_steps must be positive");
  if (step < 0 || step > total_steps) {
    throw std::domain_error("step outside [0, total_steps]");
  }
  const double phase = std::numbers::pi * static_cast<double>(step) /
                       static_cast<double>(total_steps);
  return base * 0.5 * (1.0 + std::cos(phase));
}

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

double scheduled_lr(const TrainConfig& config, double base, std::int64_t step,
                    std::int64_t total) {
  return config.lr_schedule == LrSchedule::kCosine ? cosine_lr(base, step, total)
                                                   : base;
}

// One Adam step over a single tensor, optionally gated: positions where the
// gate bit is clear are skipped outright, which is equivalent to feeding them
// zero gradients forever (their moments never leave zero) but also leaves
// their parameter bytes untouched.
void adam_tensor_step(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v,
                      double lr, std::int64_t step, const BitMask* gate) {
  const auto b1 = static_cast<float>(kAdamBeta1);
  const auto b2 = static_cast<float>(kAdamBeta2);
  const auto c1 = static_cast<float>(
      1.0 / (1.0 - std::pow(kAdamBeta1, static_cast<double>(step))));
  const auto c2 = static_cast<float>(
      1.0 / (1.0 - std::pow(kAdamBeta2, static_cast<double>(step))));
  const auto lrf = static_cast<float>(lr);
  const auto eps = static_cast<float>(kAdamEps);

  float* p = param.values().data();
  const float* g = grad.values().data();
  float* mp = m.values().data();
  float* vp = v.values().data();
  const std::int64_t n = param.size();
  for (std::int64_t i = 0; i < n; ++i) {
    if (gate && !gate->test(i)) continue;
    mp[i] = b1 * mp[i] + (1.0f - b1) * g[i];
    vp[i] = b2 * vp[i] + (1.0f - b2) * g[i] * g[i];
    const float mhat = mp[i] * c1;
    const float vhat = vp[i] * c2;
    p[i] -= lrf * mhat / (std::sqrt(vhat) + eps);
  }
}

void sgd_tensor_step(Matrix& param, const Matrix& grad, double lr,
                     const BitMask* gate) {
  float* p = param.values().data();
  const float* g = grad.values().data();
  const auto lrf = static_cast<float>(lr);
  for (std::int64_t i = 0; i < param.size(); ++i) {
    if (gate && !gate->test(i)) continue;
    p[i] -= lrf * g[i];
  }
}

void check_optimizer_shapes(const OptimizerState& state,
                            const std::vector<Matrix>& params,
                            const std::vector<Matrix>& grads) {
  if (state.first_moment.size() != params.size() ||
      grads.size() != params.size()) {
    throw ShapeError("optimizer: tensor counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i]) ||
        !params[i].same_shape(state.first_moment[i])) {
      throw ShapeError("optimizer: tensor shapes differ");
    }
  }
}

// Shared mini-batch iteration: shuffled positions each epoch, fixed batch
// carving, one callback per batch with the gathered inputs and labels.
template <typename StepFn, typename EpochEndFn>
void run_epochs(const TaskData& task, const TrainConfig& config, int epochs,
                Rng& shuffle_rng, StepFn&& on_batch, EpochEndFn&& on_epoch_end) {
  const auto n = static_cast<std::int64_t>(task.train_indices.size());
  std::vector<int> positions(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    positions[static_cast<std::size_t>(i)] = static_cast<int>(i);
  }
  std::vector<int> batch_rows;
  std::vector<int> batch_slots;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    shuffle_rng.shuffle(positions);
    double loss_sum = 0.0;
    for (std::int64_t start = 0; start < n; start += config.batch_size) {
      const std::int64_t stop = std::min<std::int64_t>(n, start + config.batch_size);
      batch_rows.clear();
      batch_slots.clear();
      for (std::int64_t i = start; i < stop; ++i) {
        const auto pos = static_cast<std::size_t>(positions[static_cast<std::size_t>(i)]);
        batch_rows.push_back(task.train_indices[pos]);
        batch_slots.push_back(task.train_slots[pos]);
      }
      const Matrix batch = gather_rows(*task.inputs, batch_rows);
      const double loss = on_batch(batch, batch_slots);
      loss_sum += loss * static_cast<double>(batch_rows.size());
    }
    on_epoch_end(epoch, loss_sum / static_cast<double>(n));
  }
}

}  // namespace

void adam_update(OptimizerState& state, std::vector<Matrix>& params,
                 const std::vector<Matrix>& grads, double lr) {
  check_optimizer_shapes(state, params, grads);
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_tensor_step(params[i], grads[i], state.first_moment[i],
                     state.second_moment[i], lr, state.step, nullptr);
  }
}

Supermask learn_supermask(const ModelState& model, const TaskData& task,
                          const TrainConfig& config, ScoreTensor score_init,
                          std::vector<double>* val_curve) {
  config.validate();
  task.validate();
  if (task.train_indices.empty()) {
    throw std::domain_error("cannot learn a mask from an empty task");
  }
  const auto shapes = model.weight_shapes();
  if (score_init.layers.size() != shapes.size()) {
    throw ShapeError("score tensor layer count does not match the model");
  }
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    if (score_init.layers[l].rows() != shapes[l].first ||
        score_init.layers[l].cols() != shapes[l].second) {
      throw ShapeError("score tensor shape does not match the model");
    }
  }

  ScoreTensor scores = std::move(score_init);
  const auto n = static_cast<std::int64_t>(task.train_indices.size());
  const std::int64_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::int64_t total_steps = steps_per_epoch * config.mask_epochs;

  OptimizerState score_state = OptimizerState::for_shapes(shapes);
  Rng shuffle_rng(derive_seed(config.seed, RngStream::kMaskEpochShuffle,
                              static_cast<std::uint64_t>(task.task_id)));

  std::int64_t step = 0;
  std::vector<Matrix> grads(shapes.size());
  run_epochs(
      task, config, config.mask_epochs, shuffle_rng,
      [&](const Matrix& batch, const std::vector<int>& slots) {
        const Supermask mask = threshold_topk(scores, config.mask_density);
        ActivationCache cache;
        const Matrix logits = forward_masked(model, mask, batch, &cache);
        const LossGrad lg = cross_entropy_grad(logits, task.head, slots);
        const std::vector<Matrix> pre_grads =
            backprop_pre_grads(model, cache, lg.grad);
        for (std::size_t l = 0; l < grads.size(); ++l) {
          grads[l] = ste_score_gradient(pre_grads[l], model.weights[l],
                                        cache.layer_input(static_cast<int>(l)));
        }
        const double lr_t =
            scheduled_lr(config, config.score_lr, step, total_steps);
        if (config.adam_on_scores) {
          adam_update(score_state, scores.layers, grads, lr_t);
        } else {
          score_update_step(scores, grads, static_cast<float>(lr_t));
        }
        ++step;
        return lg.loss;
      },
      [&](int /*epoch*/, double /*mean_loss*/) {
        if (val_curve && !task.val_indices.empty()) {
          const Supermask mask = threshold_topk(scores, config.mask_density);
          val_curve->push_back(slot_accuracy(model, mask, *task.inputs,
                                             task.val_indices, task.val_slots,
                                             task.head));
        }
      });
  return threshold_topk(scores, config.mask_density);
}

namespace {

// Weight-phase core shared by the exclusive and the interfering variants:
// forward/backward through `forward_mask`, updates gated by `trainable`.
void train_weights_impl(ModelState& model, const Supermask& forward_mask,
                        const Supermask& trainable, const TaskData& task,
                        const TrainConfig& config,
                        std::vector<double>* val_curve, double* final_loss) {
  config.validate();
  task.validate();
  if (task.train_indices.empty()) {
    throw std::domain_error("cannot train weights on an empty task");
  }
  if (trainable.popcount() == 0) {
    return;  // nothing trainable: the phase is a no-op by construction
  }

  const auto n = static_cast<std::int64_t>(task.train_indices.size());
  const std::int64_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::int64_t total_steps = steps_per_epoch * config.weight_epochs;

  OptimizerState state = OptimizerState::for_shapes(model.weight_shapes());
  Rng shuffle_rng(derive_seed(config.seed, RngStream::kWeightEpochShuffle,
                              static_cast<std::uint64_t>(task.task_id)));

  std::int64_t step = 0;
  run_epochs(
      task, config, config.weight_epochs, shuffle_rng,
      [&](const Matrix& batch, const std::vector<int>& slots) {
        ActivationCache cache;
        const Matrix logits = forward_masked(model, forward_mask, batch, &cache);
        const LossGrad lg = cross_entropy_grad(logits, task.head, slots);
        const BackwardResult back =
            backward_masked(model, forward_mask, cache, lg.grad);
        const double lr_t = scheduled_lr(config, config.lr, step, total_steps);
        ++state.step;
        for (std::size_t l = 0; l < model.weights.size(); ++l) {
          const BitMask& gate = trainable.layers[l];
          if (config.optimizer == OptimizerKind::kAdam) {
            adam_tensor_step(model.weights[l], back.weight_grads[l],
                             state.first_moment[l], state.second_moment[l],
                             lr_t, state.step, &gate);
          } else {
            sgd_tensor_step(model.weights[l], back.weight_grads[l], lr_t, &gate);
          }
        }
        ++step;
        return lg.loss;
      },
      [&](int /*epoch*/, double mean_loss) {
        if (final_loss) *final_loss = mean_loss;
        if (val_curve && !task.val_indices.empty()) {
          // Validation always runs through the full task mask: that is how
          // the task will be evaluated after training.
          val_curve->push_back(slot_accuracy(model, forward_mask, *task.inputs,
                                             task.val_indices, task.val_slots,
                                             task.head));
        }
      });
}

void require_subset(const Supermask& inner, const Supermask& outer,
                    const char* what) {
  if (mask_and_not(inner, outer).popcount() != 0) {
    throw StateError(what);
  }
}

}  // namespace

void train_exclusive_weights(ModelState& model, const Supermask& task_mask,
                             const Supermask& trainable, const TaskData& task,
                             const TrainConfig& config,
                             std::vector<double>* val_curve,
                             double* final_loss) {
  require_subset(trainable, task_mask,
                 "trainable weights must lie inside the task mask");
  const Supermask& fwd = config.train_forward_mask == TrainForwardMask::kTask
                             ? task_mask
                             : trainable;
  train_weights_impl(model, fwd, trainable, task, config, val_curve,
                     final_loss);
}

void train_overlapping_weights(ModelState& model, const Supermask& task_mask,
                               const TaskData& task, const TrainConfig& config,
                               std::vector<double>* val_curve,
                               double* final_loss) {
  train_weights_impl(model, task_mask, task_mask, task, config, val_curve,
                     final_loss);
}

void pin_scores_for_overlap(ScoreTensor& scores, const Supermask& used_union,
                            double density, double fraction, Rng& rng) {
  if (!(fraction >= 0.0) || fraction > 1.0) {
    throw std::domain_error("overlap fraction must be in [0, 1]");
  }
  if (scores.layers.size() != used_union.layers.size()) {
    throw ShapeError("score and mask layer counts differ");
  }
  // Pinned positions get the same +1.0 offset transfer uses: base scores live
  // in (0, 1), so every pinned position outranks every unpinned one and the
  // first thresholding selects exactly the pinned set (its size equals the
  // per-layer keep count).
  constexpr float kPin = 1.0f;
  for (std::size_t l = 0; l < scores.layers.size(); ++l) {
    Matrix& layer = scores.layers[l];
    const BitMask& used = used_union.layers[l];
    const std::int64_t n = layer.size();
    const auto keep = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::llround(density * static_cast<double>(n))));

    std::vector<std::int64_t> used_idx;
    std::vector<std::int64_t> fresh_idx;
    for (std::int64_t i = 0; i < n; ++i) {
      (used.test(i) ? used_idx : fresh_idx).push_back(i);
    }
    auto want_used = std::min<std::int64_t>(
        static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(keep))),
        static_cast<std::int64_t>(used_idx.size()));
    auto want_fresh = std::min<std::int64_t>(
        keep - want_used, static_cast<std::int64_t>(fresh_idx.size()));
    // If fresh territory ran out, backfill from used so the pinned set still
    // has `keep` elements whenever the layer allows it.
    want_used = std::min<std::int64_t>(
        keep - want_fresh, static_cast<std::int64_t>(used_idx.size()));

    rng.shuffle(used_idx);
    rng.shuffle(fresh_idx);
    float* v = layer.values().data();
    for (std::int64_t i = 0; i < want_used; ++i) {
      v[used_idx[static_cast<std::size_t>(i)]] += kPin;
    }
    for (std::int64_t i = 0; i < want_fresh; ++i) {
      v[fresh_idx[static_cast<std::size_t>(i)]] += kPin;
    }
  }
}

TaskOutcome learn_task(ModelState& model, MaskRegistry& registry,
                       const TaskData& task, const TrainConfig& config,
                       const KktConfig* kkt) {
  config.validate();
  task.validate();
  if (registry.has(task.task_id)) {
    throw StateError("task was already learned");
  }

  TaskOutcome outcome;
  outcome.task_id = task.task_id;

  // Fresh scores are always drawn (same stream, same count) so that toggling
  // transfer or pinning never shifts any other random stream.
  Rng score_rng(derive_seed(config.seed, RngStream::kScoreInit,
                            static_cast<std::uint64_t>(task.task_id)));
  ScoreTensor scores = random_scores(model.weight_shapes(), score_rng);

  if (kkt && registry.task_count() > 0) {
    Rng probe_rng(derive_seed(config.seed, RngStream::kTransferProbe,
                              static_cast<std::uint64_t>(task.task_id)));
    outcome.transfer =
        select_transfer_task(model, registry, task, *kkt, probe_rng);
    if (outcome.transfer->chosen_task) {
      // Output-layer picks serve the source task's own head rows, which are
      // disjoint from this task's; reuse only the shared hidden layers and
      // let the new head's selection start from the fresh scores.
      ScoreTensor boosted = scores_from_mask(
          registry.task_mask(*outcome.transfer->chosen_task), scores);
      for (std::size_t l = 0; l + 1 < boosted.layers.size(); ++l) {
        scores.layers[l] = std::move(boosted.layers[l]);
      }
    }
  }

  if (config.forced_overlap >= 0.0 && registry.task_count() > 0) {
    Rng pin_rng(derive_seed(config.seed, RngStream::kScorePinning,
                            static_cast<std::uint64_t>(task.task_id)));
    const Supermask used = registry.used_union(zeros_mask_for(model));
    pin_scores_for_overlap(scores, used, config.mask_density,
                           config.forced_overlap, pin_rng);
  }

  using Clock = std::chrono::steady_clock;
  const auto seconds_since = [](Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
  };

  std::vector<double>* mask_curve =
      config.record_val_curves ? &outcome.mask_val_curve : nullptr;
  const auto mask_start = Clock::now();
  outcome.task_mask =
      learn_supermask(model, task, config, std::move(scores), mask_curve);
  outcome.mask_seconds = seconds_since(mask_start);

  const std::vector<const Supermask*> previous =
      registry.masks_before(task.task_id);
  outcome.free = free_mask(outcome.task_mask, previous);
  outcome.overlap = sparse_overlap(task.task_id, outcome.task_mask, previous);

  std::vector<double>* weight_curve =
      config.record_val_curves ? &outcome.weight_val_curve : nullptr;
  const auto weight_start = Clock::now();
  switch (config.mode) {
    case Mode::kMaskOnly:
      break;
    case Mode::kMaskAndAll:
      train_overlapping_weights(model, outcome.task_mask, task, config,
                                weight_curve, &outcome.final_train_loss);
      break;
    case Mode::kMaskAndExclusive: {
      const Supermask gate =
          config.force_empty_free ? zeros_like(outcome.free) : outcome.free;
      train_exclusive_weights(model, outcome.task_mask, gate, task, config,
                              weight_curve, &outcome.final_train_loss);
      break;
    }
  }
  outcome.weight_seconds = seconds_since(weight_start);

  registry.add(task.task_id, outcome.task_mask, outcome.free);
  return outcome;
}

}  // namespace exssnet
