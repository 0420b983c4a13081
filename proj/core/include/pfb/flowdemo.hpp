#pragma once

#include <cstdint>
#include <string>

namespace pfb::demo {

// Outcome of one oracle comparison scenario. Every threshold is pinned in the
// implementation; pass reflects all thresholds of the case at once.
struct FlowDemoReport {
  std::string case_name;
  double correlation = 0.0;  // trained field vs quadrature field (1-D case)
  double mean_error = 0.0;   // transported-mean error; scaled by the posterior
                             // standard deviation in the 2-D case
  double nis_before = 0.0;
  double nis_after = 0.0;
  bool pass = false;
  std::string details;  // printable multi-line summary
};

// Scalar conjugate-Gaussian case: standard normal prior, unit-noise
// observation at 1, exact posterior N(1/2, 1/2). Trains the potential on the
// prior ensemble, checks Pearson correlation against the quadrature solution
// on the central 90% band, then transports 10^4 particles along the resolved
// homotopy and checks the endpoint mean within 0.05 of 1/2.
FlowDemoReport run_gaussian1d(std::uint64_t seed);

// Two-dimensional linear-Gaussian case: the transported ensemble mean must
// land within 0.15 posterior standard deviations of the exact filter update,
// and the ensemble mean NIS must strictly decrease.
FlowDemoReport run_kalman2d(std::uint64_t seed);

}  // namespace pfb::demo
