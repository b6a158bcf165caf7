#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "exssnet/masking.hpp"
#include "exssnet/network.hpp"
#include "exssnet/rng.hpp"

namespace exssnet {

// Settings for nearest-neighbour transfer selection between tasks.
struct KktConfig {
  double sample_fraction = 0.05;  // share of the task's train pool to probe
  int knn_k = 5;
  double probe_train_ratio = 0.7;  // probe split: fit vs. evaluate
  double margin = 0.0;             // required edge over the random baseline

  void validate() const;
};

// Outcome of probing earlier tasks' subnetworks with the new task's data.
struct TransferDecision {
  std::optional<int> chosen_task;  // empty when nothing beat the baseline
  std::vector<std::pair<int, double>> probe_accuracies;  // (task id, accuracy)
  double random_baseline = 0.0;    // 1 / classes of the probing task
};

// Penultimate-layer representation of `samples` under `mask`: the activations
// feeding the output layer. Models with a single layer have no hidden
// representation, so this is rejected.
Matrix extract_features(const ModelState& model, const Supermask& mask,
                        const Matrix& samples);

// Plain k-nearest-neighbour classification with Euclidean distance.
// Neighbour ties at equal distance prefer the lower training-row index;
// vote ties prefer the lower label. k is clamped to the number of rows.
std::vector<int> knn_classify(const Matrix& train_features,
                              const std::vector<int>& train_labels,
                              const Matrix& query_features, int k);

// Probes every earlier task's subnetwork with a small labelled sample of the
// new task: features are extracted under the old task's mask, a kNN model is
// fit on the probe-train part and scored on the probe-eval part. The task
// with the best accuracy is chosen if it clears 1/classes + margin strictly;
// accuracy ties prefer the earlier task id.
TransferDecision select_transfer_task(const ModelState& model,
                                      const MaskRegistry& registry,
                                      const TaskData& task,
                                      const KktConfig& config, Rng& rng);

// Score re-initialization used when transfer fires: take fresh base scores
// and add a constant offset of 1.0 wherever the chosen mask is set. Since
// base scores live in (0, 1), every offset position outranks every other
// position, so the first thresholding reproduces the chosen mask exactly
// while later updates remain free to move away from it.
ScoreTensor scores_from_mask(const Supermask& mask, const ScoreTensor& base);

}  // namespace exssnet
