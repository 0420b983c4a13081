#include "pfb/tensor.hpp"

#include <cmath>
#include <string>

namespace pfb {

namespace {
void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}
}  // namespace

Tensor::Tensor(int rows, int cols) : rows_(rows), cols_(cols) {
  require(rows > 0 && cols > 0, "tensor extents must be positive, got " + std::to_string(rows) +
                                    "x" + std::to_string(cols));
  data_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
}

Tensor::Tensor(int rows, int cols, std::vector<double> data) : rows_(rows), cols_(cols) {
  require(rows > 0 && cols > 0, "tensor extents must be positive");
  require(data.size() == static_cast<std::size_t>(rows) * cols,
          "tensor data size " + std::to_string(data.size()) + " does not match shape " +
              std::to_string(rows) + "x" + std::to_string(cols));
  data_ = std::move(data);
}

Tensor Tensor::scalar(double v) { return Tensor(1, 1, {v}); }

Tensor Tensor::full(int rows, int cols, double v) {
  Tensor t(rows, cols);
  t.fill(v);
  return t;
}

void Tensor::reshape(int rows, int cols) {
  require(rows > 0 && cols > 0, "reshape extents must be positive");
  require(static_cast<std::size_t>(rows) * cols == data_.size(),
          "reshape to " + std::to_string(rows) + "x" + std::to_string(cols) +
              " changes element count " + std::to_string(data_.size()));
  rows_ = rows;
  cols_ = cols;
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double Tensor::max_abs_diff(const Tensor& o) const {
  require(same_shape(o), "max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < data_.size(); ++i) m = std::max(m, std::fabs(data_[i] - o.data_[i]));
  return m;
}

void tensor_add(const Tensor& a, const Tensor& b, Tensor& out) {
  if (!out.same_shape(a)) out = Tensor(a.rows(), a.cols());
  const double* pa = a.data();
  double* po = out.data();
  if (a.same_shape(b)) {
    const double* pb = b.data();
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    return;
  }
  require(b.rows() == 1 && b.cols() == a.cols(),
          "add expects equal shapes or a bias row, got " + std::to_string(a.rows()) + "x" +
              std::to_string(a.cols()) + " + " + std::to_string(b.rows()) + "x" +
              std::to_string(b.cols()));
  const double* pb = b.data();
  for (int r = 0; r < a.rows(); ++r) {
    const double* ra = pa + static_cast<std::size_t>(r) * a.cols();
    double* ro = po + static_cast<std::size_t>(r) * a.cols();
    for (int c = 0; c < a.cols(); ++c) ro[c] = ra[c] + pb[c];
  }
}

void tensor_mul(const Tensor& a, const Tensor& b, Tensor& out) {
  require(a.same_shape(b), "elementwise mul shape mismatch " + std::to_string(a.rows()) + "x" +
                               std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                               std::to_string(b.cols()));
  if (!out.same_shape(a)) out = Tensor(a.rows(), a.cols());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
}

// Row-major gemm. The nt case (b transposed) reduces to dot products of rows;
// the plain case streams b rows with a fixed a scalar, which vectorizes well.
void tensor_matmul(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& out,
                   bool accumulate) {
  const int m = ta ? a.cols() : a.rows();
  const int k = ta ? a.rows() : a.cols();
  const int kb = tb ? b.cols() : b.rows();
  const int n = tb ? b.rows() : b.cols();
  require(k == kb, "matmul inner extents differ: " + std::to_string(k) + " vs " +
                       std::to_string(kb));
  if (!accumulate) {
    if (!(out.rows() == m && out.cols() == n)) out = Tensor(m, n);
    out.fill(0.0);
  } else {
    require(out.rows() == m && out.cols() == n, "matmul accumulate output shape mismatch");
  }
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const int lda = a.cols();
  const int ldb = b.cols();

  if (!ta && !tb) {
    for (int i = 0; i < m; ++i) {
      double* ro = po + static_cast<std::size_t>(i) * n;
      const double* ra = pa + static_cast<std::size_t>(i) * lda;
      for (int p = 0; p < k; ++p) {
        const double av = ra[p];
        if (av == 0.0) continue;
        const double* rb = pb + static_cast<std::size_t>(p) * ldb;
        for (int j = 0; j < n; ++j) ro[j] += av * rb[j];
      }
    }
  } else if (!ta && tb) {
    for (int i = 0; i < m; ++i) {
      double* ro = po + static_cast<std::size_t>(i) * n;
      const double* ra = pa + static_cast<std::size_t>(i) * lda;
      for (int j = 0; j < n; ++j) {
        const double* rb = pb + static_cast<std::size_t>(j) * ldb;
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += ra[p] * rb[p];
        ro[j] += acc;
      }
    }
  } else if (ta && !tb) {
    for (int p = 0; p < k; ++p) {
      const double* ra = pa + static_cast<std::size_t>(p) * lda;
      const double* rb = pb + static_cast<std::size_t>(p) * ldb;
      for (int i = 0; i < m; ++i) {
        const double av = ra[i];
        if (av == 0.0) continue;
        double* ro = po + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) ro[j] += av * rb[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      double* ro = po + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* rb = pb + static_cast<std::size_t>(j) * ldb;
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += pa[static_cast<std::size_t>(p) * lda + i] * rb[p];
        ro[j] += acc;
      }
    }
  }
}

void tensor_axpy(double alpha, const Tensor& x, Tensor& acc) {
  require(x.same_shape(acc), "axpy shape mismatch");
  const double* px = x.data();
  double* pa = acc.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) pa[i] += alpha * px[i];
}

}  // namespace pfb
