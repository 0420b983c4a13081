#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pfb/errors.hpp"

namespace pfb {

// Dense row-major matrix of 64-bit floats. Scalars are 1x1, row vectors 1xn.
// Invariant: data.size() == rows*cols with positive extents, after every
// public operation.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols);
  Tensor(int rows, int cols, std::vector<double> data);
  static Tensor scalar(double v);
  static Tensor zeros(int rows, int cols) { return Tensor(rows, cols); }
  static Tensor full(int rows, int cols, double v);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<const double> flat() const { return data_; }
  std::span<double> flat() { return data_; }

  // keeps the buffer, reinterprets extents; product must match
  void reshape(int rows, int cols);
  void fill(double v);

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool all_finite() const;
  double max_abs_diff(const Tensor& o) const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

// kernels shared by the graph evaluator and the numeric adjoint pass;
// out is resized as needed and fully overwritten unless noted

void tensor_add(const Tensor& a, const Tensor& b, Tensor& out);       // b may be 1 x a.cols (bias row)
void tensor_mul(const Tensor& a, const Tensor& b, Tensor& out);       // elementwise, same shape
// general gemm, out = op(a) * op(b) with optional transposes; accumulate adds into out
void tensor_matmul(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& out,
                   bool accumulate = false);
void tensor_axpy(double alpha, const Tensor& x, Tensor& acc);          // acc += alpha * x, shapes equal

}  // namespace pfb
