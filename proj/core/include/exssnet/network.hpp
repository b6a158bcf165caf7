#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "exssnet/masking.hpp"
#include "exssnet/matrix.hpp"
#include "exssnet/rng.hpp"

namespace exssnet {

enum class Activation { kRelu, kTanh, kIdentity };

struct LayerSpec {
  int fan_in = 0;
  int fan_out = 0;
  Activation activation = Activation::kRelu;
};

// Contiguous slice [begin, end) of the shared output layer owned by one task.
struct HeadRange {
  int begin = 0;
  int end = 0;
  int width() const { return end - begin; }
};

// Fully-connected model: one weight matrix per layer (fan_out x fan_in), no
// biases anywhere, plus the registered per-task output slices. The network
// itself is task-agnostic; masks select subnetworks and heads select logits.
struct ModelState {
  std::vector<LayerSpec> specs;
  std::vector<Matrix> weights;  // weights[l] has shape fan_out x fan_in
  std::map<int, HeadRange> task_heads;

  int layer_count() const { return static_cast<int>(specs.size()); }
  int input_width() const { return specs.empty() ? 0 : specs.front().fan_in; }
  int output_width() const { return specs.empty() ? 0 : specs.back().fan_out; }
  std::int64_t param_count() const;

  std::vector<std::pair<int, int>> weight_shapes() const;

  const HeadRange& head(int task_id) const;  // out_of_range if unregistered
  void register_head(int task_id, HeadRange range);

  void validate() const;  // adjacent fan_in/fan_out must chain, heads in range
};

// Layer-shaped helpers that need the model's shapes.
Supermask ones_mask_for(const ModelState& model);
Supermask zeros_mask_for(const ModelState& model);

// Signed constant init: every weight is +c or -c with equal probability,
// where c = sqrt(2 / fan_in) for that layer. The magnitude carries the usual
// fan-in scaling while the sign carries all the variation, which suits
// networks whose expressiveness comes from masking rather than tuning.
ModelState init_signed_kaiming(const std::vector<LayerSpec>& specs,
                               std::uint64_t seed);

// Intermediate products of one forward pass, kept for the backward pass.
struct ActivationCache {
  Matrix input;                    // the batch fed in
  std::vector<Matrix> pre;         // pre-activation I per layer (batch x fan_out)
  std::vector<Matrix> out;         // post-activation Z per layer
  std::vector<Matrix> masked_w;    // effective (masked) weights per layer
  std::vector<Matrix> masked_w_t;  // their transposes (fan_in x fan_out)
  std::vector<Matrix> in_t;        // transposed layer inputs (fan_in x batch)
  bool valid = false;

  const Matrix& layer_input(int layer) const {
    return layer == 0 ? input : out[static_cast<std::size_t>(layer) - 1];
  }
};

// Forward pass through the subnetwork selected by `mask`: each layer computes
// Z_out = act((W .* M) * Z_in^T pattern, batched as rows). Passing an all-ones
// mask reproduces the unmasked network bit for bit, because masking works by
// zeroing weights in the single shared code path rather than branching into a
// separate dense implementation. Returns the final logits (batch x out width).
Matrix forward_masked(const ModelState& model, const Supermask& mask,
                      const Matrix& batch, ActivationCache* cache = nullptr);

// Gradients of the loss with respect to each layer's pre-activation, given
// the gradient at the output logits. Needed on its own for score training,
// where weights stay frozen but score gradients consume these.
std::vector<Matrix> backprop_pre_grads(const ModelState& model,
                                       const ActivationCache& cache,
                                       const Matrix& logit_grad);

struct BackwardResult {
  std::vector<Matrix> weight_grads;  // zero wherever the mask is zero
  std::vector<Matrix> pre_grads;
};

BackwardResult backward_masked(const ModelState& model, const Supermask& mask,
                               const ActivationCache& cache,
                               const Matrix& logit_grad);

// Argmax over the task's head slice for each row; ties go to the lowest
// logit index. Returns head-relative slot ids in [0, head.width()).
std::vector<int> predict_slots(const Matrix& logits, HeadRange head);

std::vector<int> predict_task(const ModelState& model, const Supermask& mask,
                              const Matrix& batch, int task_id);

// A training/eval view of one task: which dataset rows belong to it and how
// its labels map onto the shared output layer.
struct TaskData {
  int task_id = 0;
  HeadRange head;
  const Matrix* inputs = nullptr;  // full sample matrix, rows shared with others

  std::vector<int> train_indices;  // rows used for gradient steps
  std::vector<int> train_slots;    // head-relative label per train row
  std::vector<int> val_indices;    // rows held out for curves/diagnostics
  std::vector<int> val_slots;

  int class_count() const { return head.width(); }
  void validate() const;
};

// Copies the given rows of `source` into a dense batch matrix.
Matrix gather_rows(const Matrix& source, const std::vector<int>& indices);

// Fraction of rows whose predicted slot matches the expected slot.
double slot_accuracy(const ModelState& model, const Supermask& mask,
                     const Matrix& inputs, const std::vector<int>& indices,
                     const std::vector<int>& slots, HeadRange head);

}  // namespace exssnet
