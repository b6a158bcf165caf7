#include "exssnet/network.hpp"

#include <cmath>
#include <string>

namespace exssnet {

std::int64_t ModelState::param_count() const {
  std::int64_t total = 0;
  for (const auto& w : weights) total += w.size();
  return total;
}

std::vector<std::pair<int, int>> ModelState::weight_shapes() const {
  std::vector<std::pair<int, int>> shapes;
  shapes.reserve(specs.size());
  for (const auto& s : specs) shapes.emplace_back(s.fan_out, s.fan_in);
  return shapes;
}

const HeadRange& ModelState::head(int task_id) const {
  const auto it = task_heads.find(task_id);
  if (it == task_heads.end()) {
    throw std::out_of_range("no head registered for task " +
                            std::to_string(task_id));
  }
  return it->second;
}

void ModelState::register_head(int task_id, HeadRange range) {
  if (range.begin < 0 || range.end > output_width() ||
      range.begin >= range.end) {
    throw ShapeError("task head slice does not fit the output layer");
  }
  task_heads[task_id] = range;
}

void ModelState::validate() const {
  if (specs.size() != weights.size()) {
    throw StateError("layer spec and weight counts differ");
  }
  for (std::size_t l = 0; l < specs.size(); ++l) {
    if (weights[l].rows() != specs[l].fan_out ||
        weights[l].cols() != specs[l].fan_in) {
      throw ShapeError("weight matrix does not match its layer spec");
    }
    if (l > 0 && specs[l].fan_in != specs[l - 1].fan_out) {
      throw ShapeError("adjacent layers do not chain");
    }
  }
  for (const auto& [task_id, range] : task_heads) {
    if (range.begin < 0 || range.end > output_width() ||
        range.begin >= range.end) {
      throw ShapeError("registered head out of range for task " +
                       std::to_string(task_id));
    }
  }
}

Supermask ones_mask_for(const ModelState& model) {
  Supermask m;
  m.density = 1.0;
  for (const auto& w : model.weights) {
    m.layers.push_back(BitMask::ones(w.rows(), w.cols()));
  }
  return m;
}

Supermask zeros_mask_for(const ModelState& model) {
  Supermask m;
  m.density = 0.0;
  for (const auto& w : model.weights) {
    m.layers.emplace_back(w.rows(), w.cols());
  }
  return m;
}

ModelState init_signed_kaiming(const std::vector<LayerSpec>& specs,
                               std::uint64_t seed) {
  ModelState model;
  model.specs = specs;
  Rng rng(derive_seed(seed, RngStream::kWeightInit));
  for (const auto& s : specs) {
    if (s.fan_in <= 0 || s.fan_out <= 0) {
      throw ShapeError("layer fan_in/fan_out must be positive");
    }
    const float c = std::sqrt(2.0f / static_cast<float>(s.fan_in));
    Matrix w(s.fan_out, s.fan_in);
    for (float& v : w.values()) {
      v = (rng.next_u64() & 1u) ? c : -c;
    }
    model.weights.push_back(std::move(w));
  }
  model.validate();
  return model;
}

namespace {

void apply_activation(Activation act, const Matrix& pre, Matrix& out) {
  out.reshape(pre.rows(), pre.cols());
  const float* p = pre.values().data();
  float* o = out.values().data();
  const std::int64_t n = pre.size();
  switch (act) {
    case Activation::kRelu:
      for (std::int64_t i = 0; i < n; ++i) o[i] = p[i] > 0.0f ? p[i] : 0.0f;
      break;
    case Activation::kTanh:
      for (std::int64_t i = 0; i < n; ++i) o[i] = std::tanh(p[i]);
      break;
    case Activation::kIdentity:
      for (std::int64_t i = 0; i < n; ++i) o[i] = p[i];
      break;
  }
}

// d(act)/d(pre) folded into the incoming gradient, writing into `grad`.
void apply_activation_grad(Activation act, const Matrix& pre,
                           const Matrix& out, Matrix& grad) {
  float* g = grad.values().data();
  const float* p = pre.values().data();
  const float* o = out.values().data();
  const std::int64_t n = grad.size();
  switch (act) {
    case Activation::kRelu:
      for (std::int64_t i = 0; i < n; ++i) {
        if (!(p[i] > 0.0f)) g[i] = 0.0f;
      }
      break;
    case Activation::kTanh:
      for (std::int64_t i = 0; i < n; ++i) g[i] *= 1.0f - o[i] * o[i];
      break;
    case Activation::kIdentity:
      break;
  }
}

void build_masked_weights(const Matrix& w, const BitMask& bits, Matrix& out) {
  if (bits.rows() != w.rows() || bits.cols() != w.cols()) {
    throw ShapeError("mask layer does not match weight shape");
  }
  out.reshape(w.rows(), w.cols());
  const float* src = w.values().data();
  float* dst = out.values().data();
  const std::int64_t n = w.size();
  for (std::int64_t i = 0; i < n; ++i) {
    dst[i] = bits.test(i) ? src[i] : 0.0f;
  }
}

}  // namespace

Matrix forward_masked(const ModelState& model, const Supermask& mask,
                      const Matrix& batch, ActivationCache* cache) {
  if (mask.layers.size() != model.weights.size()) {
    throw ShapeError("mask layer count does not match the model");
  }
  if (batch.cols() != model.input_width()) {
    throw ShapeError("batch width does not match the model input");
  }
  const int layers = model.layer_count();
  if (cache) {
    cache->input = batch;
    cache->pre.assign(static_cast<std::size_t>(layers), Matrix{});
    cache->out.assign(static_cast<std::size_t>(layers), Matrix{});
    cache->masked_w.assign(static_cast<std::size_t>(layers), Matrix{});
    cache->masked_w_t.assign(static_cast<std::size_t>(layers), Matrix{});
    cache->in_t.assign(static_cast<std::size_t>(layers), Matrix{});
    cache->valid = false;
  }

  // Each layer is computed as pre^T = (W .* M) * Z^T: putting the masked
  // weights on the left lets matmul skip its zero entries, so a step's cost
  // scales with the mask density instead of the full weight count.
  Matrix current = batch;
  Matrix scratch_mw, scratch_int;
  Matrix pre_t;
  for (int l = 0; l < layers; ++l) {
    const auto lu = static_cast<std::size_t>(l);
    Matrix& mw = cache ? cache->masked_w[lu] : scratch_mw;
    Matrix& in_t = cache ? cache->in_t[lu] : scratch_int;
    build_masked_weights(model.weights[lu], mask.layers[lu], mw);
    if (cache) transpose_into(cache->masked_w_t[lu], mw);  // backward spine
    transpose_into(in_t, current);
    matmul_into(pre_t, mw, in_t);
    Matrix pre = transposed(pre_t);
    Matrix out;
    apply_activation(model.specs[lu].activation, pre, out);
    if (cache) {
      cache->pre[lu] = std::move(pre);
      cache->out[lu] = out;
    }
    current = std::move(out);
  }
  if (cache) cache->valid = true;
  return current;
}

std::vector<Matrix> backprop_pre_grads(const ModelState& model,
                                       const ActivationCache& cache,
                                       const Matrix& logit_grad) {
  if (!cache.valid) {
    throw StateError("backward pass needs a cache from a forward pass");
  }
  const int layers = model.layer_count();
  if (logit_grad.rows() != cache.input.rows() ||
      logit_grad.cols() != model.output_width()) {
    throw ShapeError("logit gradient shape does not match the forward pass");
  }
  std::vector<Matrix> pre_grads(static_cast<std::size_t>(layers));

  Matrix grad = logit_grad;
  Matrix grad_t, down_t;
  for (int l = layers - 1; l >= 0; --l) {
    const auto lu = static_cast<std::size_t>(l);
    apply_activation_grad(model.specs[lu].activation, cache.pre[lu],
                          cache.out[lu], grad);
    pre_grads[lu] = grad;
    if (l > 0) {
      // d(loss)/d(Z_{l-1}) = d(loss)/d(I_l) * (W_l .* M_l), computed
      // transposed so the sparse masked weights sit on the skip side.
      transpose_into(grad_t, pre_grads[lu]);
      matmul_into(down_t, cache.masked_w_t[lu], grad_t);
      transpose_into(grad, down_t);
    }
  }
  return pre_grads;
}

BackwardResult backward_masked(const ModelState& model, const Supermask& mask,
                               const ActivationCache& cache,
                               const Matrix& logit_grad) {
  BackwardResult result;
  result.pre_grads = backprop_pre_grads(model, cache, logit_grad);
  const int layers = model.layer_count();
  result.weight_grads.resize(static_cast<std::size_t>(layers));
  Matrix grad_t;
  for (int l = 0; l < layers; ++l) {
    const auto lu = static_cast<std::size_t>(l);
    // Only masked positions can receive updates, so the gradient is computed
    // just there: grad[j,k] = sum_b pre_grad[b,j] * input[b,k], one short
    // contiguous dot product per set mask bit. Everything else is exactly 0.
    transpose_into(grad_t, result.pre_grads[lu]);
    const Matrix& in_t = cache.in_t[lu];
    const BitMask& bits = mask.layers[lu];
    const int batch = grad_t.cols();
    Matrix g(grad_t.rows(), in_t.rows(), 0.0f);
    for (int j = 0; j < g.rows(); ++j) {
      const float* gj = grad_t.row(j);
      float* out_row = g.row(j);
      for (int k = 0; k < g.cols(); ++k) {
        if (!bits.test(j, k)) continue;
        const float* zk = in_t.row(k);
        float acc = 0.0f;
        for (int b = 0; b < batch; ++b) acc += gj[b] * zk[b];
        out_row[k] = acc;
      }
    }
    result.weight_grads[lu] = std::move(g);
  }
  return result;
}

std::vector<int> predict_slots(const Matrix& logits, HeadRange head) {
  if (head.begin < 0 || head.end > logits.cols() || head.begin >= head.end) {
    throw ShapeError("head slice out of range for the logits");
  }
  std::vector<int> slots(static_cast<std::size_t>(logits.rows()));
  for (int r = 0; r < logits.rows(); ++r) {
    const float* row = logits.row(r);
    int best = head.begin;
    for (int c = head.begin + 1; c < head.end; ++c) {
      if (row[c] > row[best]) best = c;  // ties keep the lower index
    }
    slots[static_cast<std::size_t>(r)] = best - head.begin;
  }
  return slots;
}

std::vector<int> predict_task(const ModelState& model, const Supermask& mask,
                              const Matrix& batch, int task_id) {
  const Matrix logits = forward_masked(model, mask, batch);
  return predict_slots(logits, model.head(task_id));
}

void TaskData::validate() const {
  if (inputs == nullptr) throw StateError("task data has no input matrix");
  if (train_indices.size() != train_slots.size() ||
      val_indices.size() != val_slots.size()) {
    throw ShapeError("task index/label lists differ in length");
  }
  const auto check = [&](const std::vector<int>& idx,
                         const std::vector<int>& slots) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= inputs->rows()) {
        throw std::out_of_range("task row index outside the dataset");
      }
      if (slots[i] < 0 || slots[i] >= head.width()) {
        throw std::out_of_range("task label outside the head slice");
      }
    }
  };
  check(train_indices, train_slots);
  check(val_indices, val_slots);
}

Matrix gather_rows(const Matrix& source, const std::vector<int>& indices) {
  Matrix out(static_cast<int>(indices.size()), source.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const float* src = source.row(indices[i]);
    float* dst = out.row(static_cast<int>(i));
    for (int c = 0; c < source.cols(); ++c) dst[c] = src[c];
  }
  return out;
}

double slot_accuracy(const ModelState& model, const Supermask& mask,
                     const Matrix& inputs, const std::vector<int>& indices,
                     const std::vector<int>& slots, HeadRange head) {
  if (indices.empty()) {
    throw std::domain_error("accuracy over an empty index set is undefined");
  }
  const Matrix batch = gather_rows(inputs, indices);
  const Matrix logits = forward_masked(model, mask, batch);
  const std::vector<int> predicted = predict_slots(logits, head);
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == slots[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

}  // namespace exssnet
