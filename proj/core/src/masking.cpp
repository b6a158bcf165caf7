#include "exssnet/masking.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <string>

namespace exssnet {

namespace {

void require_same_shape(const BitMask& a, const BitMask& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("bit masks differ in shape: " + std::to_string(a.rows()) +
                     "x" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

void require_same_layers(const Supermask& a, const Supermask& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("supermasks differ in layer shapes");
  }
}

// Number of bits set in the final byte's padding region must stay zero; this
// clears them after whole-byte operations that could only have produced set
// bits from operands that already respect the invariant, so it is a cheap
// belt-and-braces step rather than a correctness requirement.
std::uint8_t pad_mask_for(std::int64_t bit_count) {
  const int used = static_cast<int>(bit_count & 7);
  if (used == 0) return 0xffu;
  return static_cast<std::uint8_t>(0xffu << (8 - used));
}

}  // namespace

BitMask::BitMask(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows < 0 || cols < 0) {
    throw ShapeError("mask dimensions must be non-negative");
  }
  bytes_.assign(static_cast<std::size_t>((bit_count() + 7) / 8), 0);
}

BitMask BitMask::ones(int rows, int cols) {
  BitMask m(rows, cols);
  if (!m.bytes_.empty()) {
    std::fill(m.bytes_.begin(), m.bytes_.end(), std::uint8_t{0xff});
    m.bytes_.back() &= pad_mask_for(m.bit_count());
  }
  return m;
}

void BitMask::set(std::int64_t flat, bool value) {
  if (flat < 0 || flat >= bit_count()) {
    throw std::out_of_range("mask bit index out of range");
  }
  const std::uint8_t bit = 1u << (7 - (flat & 7));
  auto& byte = bytes_[static_cast<std::size_t>(flat >> 3)];
  if (value) {
    byte |= bit;
  } else {
    byte &= static_cast<std::uint8_t>(~bit);
  }
}

std::int64_t BitMask::popcount() const {
  std::int64_t total = 0;
  for (std::uint8_t b : bytes_) total += std::popcount(unsigned{b});
  return total;
}

BitMask BitMask::from_bytes(int rows, int cols,
                            const std::vector<std::uint8_t>& bytes) {
  BitMask m(rows, cols);
  if (bytes.size() != m.bytes_.size()) {
    throw FormatError("packed mask has wrong byte count");
  }
  m.bytes_ = bytes;
  if (!m.bytes_.empty() &&
      (m.bytes_.back() & static_cast<std::uint8_t>(
                             ~pad_mask_for(m.bit_count()))) != 0) {
    throw FormatError("packed mask has non-zero padding bits");
  }
  return m;
}

BitMask mask_and(const BitMask& a, const BitMask& b) {
  require_same_shape(a, b);
  BitMask out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.bytes_.size(); ++i) {
    out.bytes_[i] = a.bytes_[i] & b.bytes_[i];
  }
  return out;
}

BitMask mask_or(const BitMask& a, const BitMask& b) {
  require_same_shape(a, b);
  BitMask out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.bytes_.size(); ++i) {
    out.bytes_[i] = a.bytes_[i] | b.bytes_[i];
  }
  return out;
}

BitMask mask_and_not(const BitMask& a, const BitMask& b) {
  require_same_shape(a, b);
  BitMask out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.bytes_.size(); ++i) {
    out.bytes_[i] = a.bytes_[i] & static_cast<std::uint8_t>(~b.bytes_[i]);
  }
  return out;
}

std::int64_t Supermask::popcount() const {
  std::int64_t total = 0;
  for (const auto& layer : layers) total += layer.popcount();
  return total;
}

std::int64_t Supermask::bit_count() const {
  std::int64_t total = 0;
  for (const auto& layer : layers) total += layer.bit_count();
  return total;
}

bool Supermask::same_shape(const Supermask& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].same_shape(other.layers[i])) return false;
  }
  return true;
}

namespace {

template <typename Op>
Supermask layerwise(const Supermask& a, const Supermask& b, Op op) {
  require_same_layers(a, b);
  Supermask out;
  out.density = a.density;
  out.layers.reserve(a.layers.size());
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    out.layers.push_back(op(a.layers[i], b.layers[i]));
  }
  return out;
}

}  // namespace

Supermask mask_and(const Supermask& a, const Supermask& b) {
  return layerwise(a, b, [](const BitMask& x, const BitMask& y) {
    return mask_and(x, y);
  });
}

Supermask mask_or(const Supermask& a, const Supermask& b) {
  return layerwise(a, b, [](const BitMask& x, const BitMask& y) {
    return mask_or(x, y);
  });
}

Supermask mask_and_not(const Supermask& a, const Supermask& b) {
  return layerwise(a, b, [](const BitMask& x, const BitMask& y) {
    return mask_and_not(x, y);
  });
}

Supermask zeros_like(const Supermask& like) {
  Supermask out;
  out.density = 0.0;
  out.layers.reserve(like.layers.size());
  for (const auto& layer : like.layers) {
    out.layers.emplace_back(layer.rows(), layer.cols());
  }
  return out;
}

Supermask ones_like(const Supermask& like) {
  Supermask out;
  out.density = 1.0;
  out.layers.reserve(like.layers.size());
  for (const auto& layer : like.layers) {
    out.layers.push_back(BitMask::ones(layer.rows(), layer.cols()));
  }
  return out;
}

bool ScoreTensor::same_shape(const ScoreTensor& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].same_shape(other.layers[i])) return false;
  }
  return true;
}

ScoreTensor random_scores(const std::vector<std::pair<int, int>>& shapes,
                          Rng& rng) {
  ScoreTensor scores;
  scores.layers.reserve(shapes.size());
  for (const auto& [rows, cols] : shapes) {
    Matrix m(rows, cols);
    for (float& v : m.values()) v = rng.next_float_open01();
    scores.layers.push_back(std::move(m));
  }
  return scores;
}

Supermask threshold_topk(const ScoreTensor& scores, double density) {
  if (!(density > 0.0) || density > 1.0) {
    throw std::domain_error("mask density must be in (0, 1]");
  }
  Supermask mask;
  mask.density = density;
  mask.layers.reserve(scores.layers.size());
  for (const auto& layer : scores.layers) {
    const std::int64_t n = layer.size();
    const auto keep = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::llround(density * static_cast<double>(n))));
    BitMask bits(layer.rows(), layer.cols());
    if (n == 0) {
      throw std::domain_error("cannot threshold an empty score layer");
    }
    const float* v = layer.values().data();
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), std::int64_t{0});
    // Higher score wins; equal scores resolve toward the lower flat index so
    // the kept set is a deterministic function of the values alone.
    const auto better = [v](std::int64_t x, std::int64_t y) {
      if (v[x] != v[y]) return v[x] > v[y];
      return x < y;
    };
    if (keep < n) {
      std::nth_element(order.begin(), order.begin() + keep, order.end(), better);
      order.resize(static_cast<std::size_t>(keep));
    }
    for (std::int64_t idx : order) bits.set(idx, true);
    mask.layers.push_back(std::move(bits));
  }
  return mask;
}

float ste_score_gradient(float pre_grad, float weight, float src_activation) {
  return pre_grad * weight * src_activation;
}

Matrix ste_score_gradient(const Matrix& pre_grads, const Matrix& weights,
                          const Matrix& src_activations) {
  if (pre_grads.rows() != src_activations.rows()) {
    throw ShapeError("score gradient: batch sizes differ");
  }
  if (weights.rows() != pre_grads.cols() ||
      weights.cols() != src_activations.cols()) {
    throw ShapeError("score gradient: weight shape does not match activations");
  }
  // Sum over the batch of pre_grad * activation, taken via one matmul, then
  // scaled by the (frozen) weight for each connection.
  Matrix grad = matmul(transposed(pre_grads), src_activations);
  float* g = grad.values().data();
  const float* w = weights.values().data();
  for (std::int64_t i = 0; i < grad.size(); ++i) g[i] *= w[i];
  return grad;
}

void score_update_step(ScoreTensor& scores, const std::vector<Matrix>& grads,
                       float lr) {
  if (grads.size() != scores.layers.size()) {
    throw ShapeError("score update: layer count mismatch");
  }
  for (std::size_t l = 0; l < grads.size(); ++l) {
    if (!scores.layers[l].same_shape(grads[l])) {
      throw ShapeError("score update: gradient shape mismatch");
    }
    float* s = scores.layers[l].values().data();
    const float* g = grads[l].values().data();
    for (std::int64_t i = 0; i < scores.layers[l].size(); ++i) {
      s[i] -= lr * g[i];
    }
  }
}

Supermask union_masks(const std::vector<const Supermask*>& masks,
                      const Supermask& shape_like) {
  Supermask acc = zeros_like(shape_like);
  for (const Supermask* m : masks) {
    acc = mask_or(acc, *m);
  }
  return acc;
}

Supermask union_masks(const std::vector<Supermask>& masks) {
  if (masks.empty()) {
    throw std::domain_error("union of an empty mask list needs a shape witness");
  }
  Supermask acc = zeros_like(masks.front());
  for (const Supermask& m : masks) acc = mask_or(acc, m);
  return acc;
}

Supermask free_mask(const Supermask& current,
                    const std::vector<const Supermask*>& previous) {
  if (previous.empty()) {
    Supermask copy = current;
    return copy;
  }
  return mask_and_not(current, union_masks(previous, current));
}

OverlapReport sparse_overlap(int task_id, const Supermask& current,
                             const std::vector<const Supermask*>& previous) {
  OverlapReport report;
  report.task_id = task_id;
  report.mask_bits = current.popcount();
  report.free_bits = free_mask(current, previous).popcount();
  report.overlap_fraction =
      report.mask_bits == 0
          ? 0.0
          : static_cast<double>(report.mask_bits - report.free_bits) /
                static_cast<double>(report.mask_bits);
  return report;
}

void MaskRegistry::add(int task_id, Supermask task_mask, Supermask free) {
  if (!entries_.empty() && task_id <= entries_.back().task_id) {
    throw StateError("task ids must be added in strictly increasing order");
  }
  if (task_id < 1) {
    throw std::domain_error("task ids are 1-based");
  }
  if (!task_mask.same_shape(free)) {
    throw ShapeError("task mask and free mask differ in shape");
  }
  // The stored free mask must be exactly the exclusive part of the task mask
  // with respect to everything learned before it.
  const Supermask expected = free_mask(task_mask, masks_before(task_id));
  if (!(free == expected)) {
    throw StateError("free mask is not the exclusive part of the task mask");
  }
  entries_.push_back(Entry{task_id, std::move(task_mask), std::move(free)});
}

bool MaskRegistry::has(int task_id) const {
  for (const auto& e : entries_) {
    if (e.task_id == task_id) return true;
  }
  return false;
}

const MaskRegistry::Entry& MaskRegistry::find(int task_id) const {
  for (const auto& e : entries_) {
    if (e.task_id == task_id) return e;
  }
  throw std::out_of_range("no mask stored for task " + std::to_string(task_id));
}

const Supermask& MaskRegistry::task_mask(int task_id) const {
  return find(task_id).mask;
}

const Supermask& MaskRegistry::free(int task_id) const {
  return find(task_id).free;
}

std::vector<const Supermask*> MaskRegistry::masks_before(int task_id) const {
  std::vector<const Supermask*> out;
  for (const auto& e : entries_) {
    if (task_id >= 0 && e.task_id >= task_id) continue;
    out.push_back(&e.mask);
  }
  return out;
}

std::vector<std::pair<int, const Supermask*>> MaskRegistry::entries_before(
    int task_id) const {
  std::vector<std::pair<int, const Supermask*>> out;
  for (const auto& e : entries_) {
    if (task_id >= 0 && e.task_id >= task_id) continue;
    out.emplace_back(e.task_id, &e.mask);
  }
  return out;
}

Supermask MaskRegistry::used_union(const Supermask& shape_like) const {
  return union_masks(masks_before(-1), shape_like);
}

}  // namespace exssnet
