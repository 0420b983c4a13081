#pragma once

#include <string>
#include <vector>

#include "pfb/nn.hpp"

namespace pfb::flow {

// Pseudo-time discretization of the unit homotopy interval. The model path
// always covers the whole interval, so num_steps * step_size must equal 1.
struct FlowConfig {
  int num_steps = 1;
  double step_size = 1.0;
  void validate() const;
};

// Scalar potential over (encoded measurement, latent, hidden). The flow moves
// particles along the state gradient of this potential.
struct PotentialConfig {
  int n_x = 0;      // raw measurement width
  int n_state = 0;  // columns of the moving state block (latent + hidden)

  int measurement_embed = 128;  // x encoder output width; 0 drops the encoder
  std::vector<int> encoder_hidden = {128};
  std::vector<int> potential_hidden = {512, 256, 128};
  double leaky_slope = 0.01;
  nn::Act activation = nn::Act::kLeakyRelu;

  void validate() const;
  nn::FcnnSpec encoder_spec() const;    // n_x -> measurement_embed
  nn::FcnnSpec potential_spec() const;  // measurement_embed + n_state -> 1
};

inline constexpr const char* kEncXPrefix = "phi.enc_x";
inline constexpr const char* kPotentialPrefix = "phi.pot";

void init_params(const PotentialConfig& cfg, nn::ParamStore& phi, Rng& rng);

// Normalized innovation squared per particle: sum_k ((x_k - mu_k)/sigma_k)^2,
// P x 1. A 1 x n x_row is broadcast across particles.
NodeId nis(Graph& g, NodeId x_row, NodeId mu, NodeId sigma);

// encoded measurement row (1 x measurement_embed); kNoNode when the config
// drops the encoder
NodeId encode_measurement(Graph& g, const PotentialConfig& cfg, NodeId x_row);

struct PotentialNodes {
  NodeId phi_raw = kNoNode;       // P x 1 network output
  NodeId phi = kNoNode;           // mean-subtracted over the ensemble
  NodeId grad_state = kNoNode;    // P x n_state, d(phi_i)/d(state_i)
};

// Potential and its per-particle state gradient at one ensemble position.
// The gradient differentiates the raw potential: the subtracted ensemble mean
// is a constant of the underlying distribution, so it cannot bend the field.
// The returned gradient nodes are regular graph nodes and stay differentiable.
PotentialNodes potential_eval(Graph& g, const PotentialConfig& cfg, NodeId enc_x_row,
                              NodeId state);

// convenience: only the field
NodeId flow_gradient(Graph& g, const PotentialConfig& cfg, NodeId enc_x_row, NodeId state);

// one explicit Euler increment: state + dt * grad(phi)(state)
NodeId euler_step(Graph& g, const PotentialConfig& cfg, NodeId enc_x_row, NodeId state,
                  double dt);

// K Euler steps of the full unit interval, the field re-evaluated at the
// current position each step
NodeId flow_transform(Graph& g, const PotentialConfig& cfg, const FlowConfig& flow,
                      NodeId enc_x_row, NodeId state);

// 0.5 * mean_i |grad phi_i|^2 + 0.5 * cov_i(phi_i, gamma_i), population
// normalization. gamma and the ensemble are treated as constants: this loss
// trains only the potential parameters. Requires at least two particles.
NodeId flow_objective(Graph& g, const PotentialConfig& cfg, NodeId enc_x_row, NodeId state,
                      NodeId gamma);

}  // namespace pfb::flow
