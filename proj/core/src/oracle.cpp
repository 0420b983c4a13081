#include "pfb/oracle.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "pfb/errors.hpp"

namespace pfb::oracle {

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (int r = 0; r < t.rows(); ++r)
    for (int c = 0; c < t.cols(); ++c) m(r, c) = t.at(r, c);
  return m;
}

Tensor from_eigen(const Eigen::MatrixXd& m) {
  Tensor t(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) t.at(r, c) = m(r, c);
  return t;
}

}  // namespace

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double eps) {
  std::vector<double> point(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = point[i];
    const double h = eps * std::max(1.0, std::fabs(saved));
    point[i] = saved + h;
    const double up = f(point);
    point[i] = saved - h;
    const double down = f(point);
    point[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

GaussianBelief kalman_predict(const LinearGaussianModel& model, const GaussianBelief& prior) {
  const Eigen::MatrixXd A = to_eigen(model.transition);
  const Eigen::MatrixXd Q = to_eigen(model.process_cov);
  const Eigen::VectorXd m = to_eigen(prior.mean).transpose();
  const Eigen::MatrixXd P = to_eigen(prior.cov);
  const Eigen::VectorXd mp = A * m;
  const Eigen::MatrixXd Pp = A * P * A.transpose() + Q;
  return {from_eigen(mp.transpose()), from_eigen(Pp)};
}

GaussianBelief kalman_update(const LinearGaussianModel& model, const GaussianBelief& predicted,
                             std::span<const double> observation) {
  const Eigen::MatrixXd H = to_eigen(model.observation);
  const Eigen::MatrixXd R = to_eigen(model.obs_cov);
  if (static_cast<int>(observation.size()) != H.rows())
    throw ValidationError("kalman_update: observation size " +
                          std::to_string(observation.size()) + " does not match " +
                          std::to_string(H.rows()) + " measurement rows");
  const Eigen::VectorXd m = to_eigen(predicted.mean).transpose();
  const Eigen::MatrixXd P = to_eigen(predicted.cov);
  Eigen::VectorXd y(observation.size());
  for (std::size_t i = 0; i < observation.size(); ++i) y(static_cast<int>(i)) = observation[i];

  const Eigen::MatrixXd S = H * P * H.transpose() + R;
  const Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success)
    throw NumericalError("kalman_update: innovation covariance is not positive definite");
  const Eigen::MatrixXd K = P * H.transpose() * llt.solve(Eigen::MatrixXd::Identity(S.rows(), S.cols()));
  const Eigen::VectorXd mu = m + K * (y - H * m);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(P.rows(), P.cols());
  // Joseph form keeps the covariance symmetric under roundoff
  const Eigen::MatrixXd J = I - K * H;
  const Eigen::MatrixXd Pu = J * P * J.transpose() + K * R * K.transpose();
  return {from_eigen(mu.transpose()), from_eigen(Pu)};
}

std::vector<GaussianBelief> kalman_filter(const LinearGaussianModel& model,
                                          const Tensor& observations) {
  const int n = model.transition.rows();
  if (model.transition.cols() != n || model.process_cov.rows() != n ||
      model.process_cov.cols() != n || model.observation.cols() != n ||
      model.init_cov.rows() != n || model.init_cov.cols() != n || model.init_mean.cols() != n)
    throw ValidationError("kalman_filter: inconsistent model dimensions");
  if (model.obs_cov.rows() != model.observation.rows() ||
      model.obs_cov.cols() != model.observation.rows())
    throw ValidationError("kalman_filter: observation covariance dimension mismatch");

  GaussianBelief belief{model.init_mean, model.init_cov};
  std::vector<GaussianBelief> out;
  out.reserve(static_cast<std::size_t>(observations.rows()));
  for (int t = 0; t < observations.rows(); ++t) {
    const GaussianBelief predicted = kalman_predict(model, belief);
    std::span<const double> row(observations.data() + static_cast<std::size_t>(t) * observations.cols(),
                                static_cast<std::size_t>(observations.cols()));
    belief = kalman_update(model, predicted, row);
    out.push_back(belief);
  }
  return out;
}

std::vector<double> pde_quadrature_1d(std::span<const double> grid,
                                      std::span<const double> density,
                                      std::span<const double> gamma) {
  const std::size_t n = grid.size();
  if (n < 8) throw ValidationError("pde_quadrature_1d: grid too small");
  if (density.size() != n || gamma.size() != n)
    throw ValidationError("pde_quadrature_1d: grid, density, gamma sizes differ");
  const double h = grid[1] - grid[0];
  for (std::size_t i = 1; i < n; ++i) {
    if (std::fabs((grid[i] - grid[i - 1]) - h) > 1e-9 * std::max(1.0, std::fabs(h)))
      throw ValidationError("pde_quadrature_1d: grid must be uniform");
  }
  for (double q : density)
    if (!(q >= 0.0) || !std::isfinite(q))
      throw ValidationError("pde_quadrature_1d: density must be finite and nonnegative");

  // q-weighted average of gamma; centering makes the full integral vanish
  double mass = 0.0, moment = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    mass += 0.5 * h * (density[i] + density[i + 1]);
    moment += 0.5 * h * (density[i] * gamma[i] + density[i + 1] * gamma[i + 1]);
  }
  if (mass <= 0.0) throw ValidationError("pde_quadrature_1d: density integrates to zero");
  const double gamma_hat = moment / mass;

  // cumulative trapezoid of q * (gamma - gamma_hat) / 2 from the left edge
  std::vector<double> flux(n, 0.0);
  auto integrand = [&](std::size_t i) { return 0.5 * density[i] * (gamma[i] - gamma_hat); };
  for (std::size_t i = 1; i < n; ++i)
    flux[i] = flux[i - 1] + 0.5 * h * (integrand(i - 1) + integrand(i));

  // The endpoint vanishes identically in real arithmetic because gamma_hat
  // uses the same trapezoid weights, so any residual is rounding noise. When
  // the whole flux sits below the rounding floor the right-hand side is
  // numerically zero and so is the flow; dividing that noise by tail
  // densities would only amplify it.
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::fabs(flux[i]));
  if (scale <= 1e-13 * mass * (1.0 + std::fabs(gamma_hat))) {
    return std::vector<double>(n, 0.0);
  }
  if (std::fabs(flux[n - 1]) > 1e-6 * scale)
    throw NumericalError("pde_quadrature_1d: boundary integral " +
                         std::to_string(flux[n - 1] / scale) +
                         " (relative) does not vanish after centering");

  std::vector<double> dphi(n);
  for (std::size_t i = 0; i < n; ++i) {
    // in far tails q underflows; the flux underflows faster, define 0 there
    dphi[i] = density[i] > 0.0 ? flux[i] / density[i] : 0.0;
  }
  return dphi;
}

QuadratureGrid gaussian_grid(double mean, double stddev, int points, double width) {
  if (points < 8) throw ValidationError("gaussian_grid: need at least 8 points");
  if (!(stddev > 0.0)) throw ValidationError("gaussian_grid: stddev must be positive");
  QuadratureGrid g;
  g.z.resize(static_cast<std::size_t>(points));
  g.density.resize(static_cast<std::size_t>(points));
  const double lo = mean - width * stddev;
  const double hi = mean + width * stddev;
  const double h = (hi - lo) / (points - 1);
  const double norm = 1.0 / (stddev * std::sqrt(6.283185307179586476925286766559));
  for (int i = 0; i < points; ++i) {
    const double z = lo + h * i;
    const double u = (z - mean) / stddev;
    g.z[static_cast<std::size_t>(i)] = z;
    g.density[static_cast<std::size_t>(i)] = norm * std::exp(-0.5 * u * u);
  }
  return g;
}

}  // namespace pfb::oracle
