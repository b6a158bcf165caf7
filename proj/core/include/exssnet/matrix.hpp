#pragma once

#include <cstdint>
#include <vector>

#include "exssnet/errors.hpp"

namespace exssnet {

// Dense row-major float32 matrix. All model math runs on these; float32 is
// used end to end so results are comparable across save/load round trips.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, float fill = 0.0f);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::int64_t size() const {
    return static_cast<std::int64_t>(rows_) * cols_;
  }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  float* row(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const float* row(int r) const {
    return data_.data() + static_cast<std::size_t>(r) * cols_;
  }

  float& at(int r, int c) {
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }
  float at(int r, int c) const {
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }

  std::vector<float>& values() { return data_; }
  const std::vector<float>& values() const { return data_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  // Resize without any guarantee about the resulting contents; used by
  // scratch buffers that are fully overwritten afterwards.
  void reshape(int rows, int cols);

  void fill(float value);
  bool all_finite() const;

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<float> data_;
};

// out = a * b with shapes (m x k) * (k x n) -> (m x n). Throws ShapeError on
// mismatch. The accumulation order is fixed (k-outer, n-inner) so results are
// bit-identical across runs and build hosts.
void matmul_into(Matrix& out, const Matrix& a, const Matrix& b);
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transposed(const Matrix& a);
void transpose_into(Matrix& out, const Matrix& a);

void add_inplace(Matrix& a, const Matrix& b);
void scale_inplace(Matrix& a, float s);

}  // namespace exssnet
