#include "exssnet/matrix.hpp"

#include <cmath>
#include <string>

namespace exssnet {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(int rows, int cols, float fill)
    : rows_(rows), cols_(cols) {
  if (rows < 0 || cols < 0) {
    throw ShapeError("matrix dimensions must be non-negative");
  }
  data_.assign(static_cast<std::size_t>(rows) * cols, fill);
}

void Matrix::reshape(int rows, int cols) {
  if (rows < 0 || cols < 0) {
    throw ShapeError("matrix dimensions must be non-negative");
  }
  rows_ = rows;
  cols_ = cols;
  data_.resize(static_cast<std::size_t>(rows) * cols);
}

void Matrix::fill(float value) {
  data_.assign(data_.size(), value);
}

bool Matrix::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void matmul_into(Matrix& out, const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul: " + shape_str(a) + " * " + shape_str(b));
  out.reshape(a.rows(), b.cols());
  const int m = a.rows();
  const int k = a.cols();
  const int n = b.cols();
  for (int i = 0; i < m; ++i) {
    float* oi = out.row(i);
    for (int j = 0; j < n; ++j) oi[j] = 0.0f;
    const float* ai = a.row(i);
    // Accumulate row i as a sum of scaled rows of b. The inner loop walks
    // contiguous memory in both operands, which vectorizes without any
    // floating-point reassociation, so the summation order stays fixed.
    for (int p = 0; p < k; ++p) {
      const float s = ai[p];
      if (s == 0.0f) continue;  // masked-out weight: contributes exactly 0
      const float* bp = b.row(p);
      for (int j = 0; j < n; ++j) oi[j] += s * bp[j];
    }
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out;
  matmul_into(out, a, b);
  return out;
}

void transpose_into(Matrix& out, const Matrix& a) {
  out.reshape(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i) {
    const float* ai = a.row(i);
    for (int j = 0; j < a.cols(); ++j) out.at(j, i) = ai[j];
  }
}

Matrix transposed(const Matrix& a) {
  Matrix out;
  transpose_into(out, a);
  return out;
}

void add_inplace(Matrix& a, const Matrix& b) {
  require(a.same_shape(b), "add: " + shape_str(a) + " vs " + shape_str(b));
  float* pa = a.values().data();
  const float* pb = b.values().data();
  for (std::int64_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

void scale_inplace(Matrix& a, float s) {
  for (float& v : a.values()) v *= s;
}

}  // namespace exssnet
