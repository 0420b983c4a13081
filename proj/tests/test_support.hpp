#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pfb/graph.hpp"
#include "pfb/nn.hpp"
#include "pfb/rng.hpp"

namespace ts {

using pfb::Evaluator;
using pfb::Graph;
using pfb::NodeId;
using pfb::Rng;
using pfb::Tensor;

inline Tensor random_tensor(int rows, int cols, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(rows, cols);
  for (double& v : t.flat()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor gaussian_tensor(int rows, int cols, Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.flat()) v = rng.gaussian();
  return t;
}

inline double rel_err(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 1e-10;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max({den, std::abs(a[i]), std::abs(b[i])});
  }
  return num / den;
}

inline double rel_err(const Tensor& a, const Tensor& b) { return rel_err(a.flat(), b.flat()); }

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double num = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) num = std::max(num, std::abs(a[i] - b[i]));
  return num;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.flat()[i] != b.flat()[i]) return false;
  }
  return true;
}

// evaluate one scalar node under the given bindings
inline double eval_scalar(const Graph& g, NodeId id, const Evaluator::Bindings& b) {
  Evaluator ev(g);
  ev.forward(b);
  return ev.value(id).at(0, 0);
}

inline pfb::nn::ParamStore zeroed(pfb::nn::ParamStore store) {
  for (auto& [name, t] : store.items()) t.fill(0.0);
  return store;
}

}  // namespace ts
