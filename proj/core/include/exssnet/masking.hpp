#pragma once

#include <cstdint>
#include <vector>

#include "exssnet/errors.hpp"
#include "exssnet/matrix.hpp"
#include "exssnet/rng.hpp"

namespace exssnet {

// Packed binary mask over one weight matrix (rows = fan_out, cols = fan_in).
//
// Bit layout (normative, shared with the checkpoint format): bits are ordered
// row-major by flat index f = r * cols + c, packed MSB-first within each
// byte (flat index f lives in byte f/8 at bit 7 - f%8), and the final byte is
// zero-padded. Padding bits are kept at zero by construction so popcounts and
// byte-level equality never see garbage.
class BitMask {
 public:
  BitMask() = default;
  BitMask(int rows, int cols);  // all zeros
  static BitMask ones(int rows, int cols);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::int64_t bit_count() const {
    return static_cast<std::int64_t>(rows_) * cols_;
  }

  bool test(std::int64_t flat) const {
    return (bytes_[static_cast<std::size_t>(flat >> 3)] >>
            (7 - (flat & 7))) & 1u;
  }
  bool test(int r, int c) const {
    return test(static_cast<std::int64_t>(r) * cols_ + c);
  }
  void set(std::int64_t flat, bool value);

  std::int64_t popcount() const;
  bool same_shape(const BitMask& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::int64_t byte_size() const {
    return static_cast<std::int64_t>(bytes_.size());
  }

  // Rebuild from packed bytes (checkpoint load). Throws FormatError if the
  // byte count does not match the shape or a padding bit is set.
  static BitMask from_bytes(int rows, int cols,
                            const std::vector<std::uint8_t>& bytes);

  friend bool operator==(const BitMask& a, const BitMask& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.bytes_ == b.bytes_;
  }

  friend BitMask mask_and(const BitMask& a, const BitMask& b);
  friend BitMask mask_or(const BitMask& a, const BitMask& b);
  friend BitMask mask_and_not(const BitMask& a, const BitMask& b);

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::uint8_t> bytes_;
};

// Elementwise set algebra; shapes must match exactly.
BitMask mask_and(const BitMask& a, const BitMask& b);
BitMask mask_or(const BitMask& a, const BitMask& b);
BitMask mask_and_not(const BitMask& a, const BitMask& b);  // a AND (NOT b)

// One mask per model layer plus the density it was thresholded at.
struct Supermask {
  std::vector<BitMask> layers;
  double density = 0.0;

  std::int64_t popcount() const;
  std::int64_t bit_count() const;
  bool same_shape(const Supermask& other) const;

  friend bool operator==(const Supermask& a, const Supermask& b) {
    return a.layers == b.layers;
  }
};

Supermask mask_and(const Supermask& a, const Supermask& b);
Supermask mask_or(const Supermask& a, const Supermask& b);
Supermask mask_and_not(const Supermask& a, const Supermask& b);
Supermask zeros_like(const Supermask& like);
Supermask ones_like(const Supermask& like);

// Real-valued popularity scores, one tensor per layer, same shapes as the
// layer weights. Thresholding the scores yields a Supermask.
struct ScoreTensor {
  std::vector<Matrix> layers;

  bool same_shape(const ScoreTensor& other) const;
};

// Fresh scores drawn uniformly from the open interval (0, 1).
ScoreTensor random_scores(const std::vector<std::pair<int, int>>& shapes,
                          Rng& rng);

// Per-layer top-k selection: keep the max(1, round(density * n)) highest
// scores of each layer, where n is that layer's element count. Ties at the
// threshold are broken toward the lower flat index, so the kept set is a
// pure function of the score values.
Supermask threshold_topk(const ScoreTensor& scores, double density);

// Straight-through score gradient for one connection: the loss gradient at
// the destination unit's pre-activation, times the weight, times the source
// activation. The batched form computes (d_pre^T * src_acts) elementwise-
// multiplied by the weights, which is the sum of the per-sample products.
float ste_score_gradient(float pre_grad, float weight, float src_activation);
Matrix ste_score_gradient(const Matrix& pre_grads, const Matrix& weights,
                          const Matrix& src_activations);

// Plain SGD step on the scores: s <- s - lr * grad.
void score_update_step(ScoreTensor& scores,
                       const std::vector<Matrix>& grads, float lr);

// Union of already-learned masks. The empty union is all zeros, which is why
// a shape witness is required.
Supermask union_masks(const std::vector<const Supermask*>& masks,
                      const Supermask& shape_like);
Supermask union_masks(const std::vector<Supermask>& masks);  // must be non-empty

// Exclusive (free) portion of `current`: bits of `current` not claimed by any
// earlier mask. With no earlier masks this is `current` itself.
Supermask free_mask(const Supermask& current,
                    const std::vector<const Supermask*>& previous);

// Fraction of the current mask's bits that were already claimed by earlier
// tasks: (|M| - |M_free|) / |M|.
struct OverlapReport {
  int task_id = 0;
  std::int64_t mask_bits = 0;     // popcount of the task mask
  std::int64_t free_bits = 0;     // popcount of the exclusive portion
  double overlap_fraction = 0.0;  // 0 when mask_bits == 0
};

OverlapReport sparse_overlap(int task_id, const Supermask& current,
                             const std::vector<const Supermask*>& previous);

// Owns the per-task mask/free-mask pairs accumulated over a run, in task
// order. Task ids are 1-based and must arrive strictly increasing.
class MaskRegistry {
 public:
  void add(int task_id, Supermask task_mask, Supermask free);
  int task_count() const { return static_cast<int>(entries_.size()); }
  bool has(int task_id) const;

  const Supermask& task_mask(int task_id) const;
  const Supermask& free(int task_id) const;

  // Masks of tasks learned before `task_id` (all tasks if task_id < 0).
  std::vector<const Supermask*> masks_before(int task_id) const;
  std::vector<std::pair<int, const Supermask*>> entries_before(int task_id) const;

  // Union of every stored task mask; zeros_like(shape_like) when empty.
  Supermask used_union(const Supermask& shape_like) const;

 private:
  struct Entry {
    int task_id;
    Supermask mask;
    Supermask free;
  };
  std::vector<Entry> entries_;
  const Entry& find(int task_id) const;
};

}  // namespace exssnet
