#pragma once

#include <functional>
#include <span>
#include <vector>

#include "pfb/tensor.hpp"

namespace pfb::oracle {

// Independent numeric references. Nothing here shares code with the graph
// engine or the model; these routines are the second route of every
// dual-route check.

// Central finite differences of a scalar function, component by component.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double eps = 1e-6);

struct LinearGaussianModel {
  Tensor transition;   // n x n state transition
  Tensor process_cov;  // n x n, symmetric positive semidefinite
  Tensor observation;  // m x n measurement matrix
  Tensor obs_cov;      // m x m, symmetric positive definite
  Tensor init_mean;    // 1 x n
  Tensor init_cov;     // n x n
};

struct GaussianBelief {
  Tensor mean;  // 1 x n
  Tensor cov;   // n x n
};

// Exact sequential Bayes for the linear-Gaussian case. Returns the filtered
// (post-update) belief after each observation row. Throws NumericalError when
// an innovation covariance is not positive definite.
std::vector<GaussianBelief> kalman_filter(const LinearGaussianModel& model,
                                          const Tensor& observations);
GaussianBelief kalman_predict(const LinearGaussianModel& model, const GaussianBelief& prior);
GaussianBelief kalman_update(const LinearGaussianModel& model, const GaussianBelief& predicted,
                             std::span<const double> observation);

// One-dimensional stationary solve of  d/dz ( q(z) phi'(z) ) = q(z) (gamma(z) - gamma_hat) / 2
// on a uniform grid by cumulative trapezoid quadrature. gamma_hat is centered
// with the q-weighted average so the cumulative integral vanishes at both
// ends; a residual boundary integral above 1e-6 (relative) throws
// NumericalError. Returns phi' at the grid points.
std::vector<double> pde_quadrature_1d(std::span<const double> grid, std::span<const double> density,
                                      std::span<const double> gamma);

struct QuadratureGrid {
  std::vector<double> z;        // uniform grid
  std::vector<double> density;  // prior density at z
};

// Uniform grid over +-width prior standard deviations around the mean.
QuadratureGrid gaussian_grid(double mean, double stddev, int points = 2048, double width = 8.0);

}  // namespace pfb::oracle
