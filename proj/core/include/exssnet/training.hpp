#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "exssnet/kkt.hpp"
#include "exssnet/masking.hpp"
#include "exssnet/network.hpp"

namespace exssnet {

// The three continual-learning variants share one pipeline and differ only in
// which weights (if any) the weight phase may touch:
//   kMaskOnly        - learn a mask per task, never train weights
//   kMaskAndAll      - train every weight the task's mask selects
//   kMaskAndExclusive- train only mask weights no earlier task claimed
enum class Mode { kMaskOnly, kMaskAndAll, kMaskAndExclusive };

enum class OptimizerKind { kSgd, kAdam };
enum class LrSchedule { kConstant, kCosine };

// Which subnetwork the weight-training forward pass runs through: just the
// trainable (exclusive) weights, or the task's full mask.
enum class TrainForwardMask { kFree, kTask };

struct TrainConfig {
  Mode mode = Mode::kMaskAndExclusive;
  double mask_density = 0.1;
  int mask_epochs = 30;
  int weight_epochs = 30;
  double lr = 1e-3;        // weight phase
  double score_lr = 0.1;   // mask phase (scores move on a very different scale)
  int batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  bool adam_on_scores = false;  // scores default to plain SGD
  LrSchedule lr_schedule = LrSchedule::kCosine;
  TrainForwardMask train_forward_mask = TrainForwardMask::kFree;
  std::uint64_t seed = 1;

  // Diagnostics/ablation knobs:
  double forced_overlap = -1.0;  // >= 0: steer this overlap fraction on purpose
  bool force_empty_free = false; // ablation: give the weight phase nothing
  bool record_val_curves = false;

  void validate() const;
};

// Adam accumulators, one pair of moment tensors per parameter tensor.
struct OptimizerState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;

  static OptimizerState for_shapes(const std::vector<std::pair<int, int>>& shapes);
  void reset();
};

// Mean cross-entropy over the batch, restricted to the head slice: softmax
// runs over [head.begin, head.end) only, and the returned gradient is the
// mean d(loss)/d(logit), zero outside the slice.
struct LossGrad {
  double loss = 0.0;
  Matrix grad;
};

LossGrad cross_entropy_grad(const Matrix& logits, HeadRange head,
                            const std::vector<int>& slot_labels);

// Cosine decay from `base` to 0 over `total_steps` (no restarts, no floor).
double cosine_lr(double base, std::int64_t step, std::int64_t total_steps);

// One Adam step with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
void adam_update(OptimizerState& state, std::vector<Matrix>& params,
                 const std::vector<Matrix>& grads, double lr);

// Phase 1: learn a task's supermask by score optimization with straight-
// through gradients. Weights are frozen (model is const). `score_init` seeds
// the search; pass scores_from_mask(...) output to start from an earlier
// task's subnetwork. Returns the thresholded mask of the final scores.
Supermask learn_supermask(const ModelState& model, const TaskData& task,
                          const TrainConfig& config, ScoreTensor score_init,
                          std::vector<double>* val_curve = nullptr);

// Phase 2 (exclusive): gradient-train only the weights in `trainable`, which
// must be a subset of `task_mask`. The forward pass runs through the mask
// selected by config.train_forward_mask. Weights outside `trainable` are
// bit-for-bit unchanged on return.
void train_exclusive_weights(ModelState& model, const Supermask& task_mask,
                             const Supermask& trainable, const TaskData& task,
                             const TrainConfig& config,
                             std::vector<double>* val_curve = nullptr,
                             double* final_loss = nullptr);

// Phase 2 (interfering baseline): train every weight under the task's mask,
// including weights earlier tasks rely on.
void train_overlapping_weights(ModelState& model, const Supermask& task_mask,
                               const TaskData& task, const TrainConfig& config,
                               std::vector<double>* val_curve = nullptr,
                               double* final_loss = nullptr);

// Raise the scores of a deliberate fraction of already-used positions so the
// first thresholding claims roughly `fraction` of the mask from used
// territory and the rest from untouched territory. Ablation tool for mapping
// overlap against forgetting.
void pin_scores_for_overlap(ScoreTensor& scores, const Supermask& used_union,
                            double density, double fraction, Rng& rng);

// Everything learn_task produces for one task.
struct TaskOutcome {
  int task_id = 0;
  Supermask task_mask;
  Supermask free;  // exclusive part (always the true one, even when the
                   // force_empty_free ablation skips training it)
  OverlapReport overlap;
  double final_train_loss = 0.0;
  double mask_seconds = 0.0;    // wall clock spent in the mask phase
  double weight_seconds = 0.0;  // wall clock spent in the weight phase
  std::optional<TransferDecision> transfer;
  std::vector<double> mask_val_curve;
  std::vector<double> weight_val_curve;
};

// Orchestrates one task end to end: optional transfer selection, score init,
// mask phase, free-mask computation, mode-dependent weight phase, and
// registry update.
TaskOutcome learn_task(ModelState& model, MaskRegistry& registry,
                       const TaskData& task, const TrainConfig& config,
                       const KktConfig* kkt = nullptr);

}  // namespace exssnet
