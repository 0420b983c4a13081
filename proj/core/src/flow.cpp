#include "pfb/flow.hpp"

#include <cmath>

#include "pfb/errors.hpp"

namespace pfb::flow {

void FlowConfig::validate() const {
  if (num_steps < 1) throw ValidationError("flow config: num_steps must be at least 1");
  if (!(step_size > 0.0)) throw ValidationError("flow config: step_size must be positive");
  if (std::fabs(num_steps * step_size - 1.0) > 1e-12)
    throw ValidationError("flow config: num_steps * step_size must equal 1, got " +
                          std::to_string(num_steps * step_size));
}

void PotentialConfig::validate() const {
  if (n_state <= 0) throw ValidationError("potential config: n_state must be positive");
  if (measurement_embed < 0)
    throw ValidationError("potential config: measurement_embed must be nonnegative");
  if (measurement_embed > 0 && n_x <= 0)
    throw ValidationError("potential config: n_x must be positive when the encoder is present");
}

nn::FcnnSpec PotentialConfig::encoder_spec() const {
  nn::FcnnSpec s;
  s.widths.push_back(n_x);
  s.widths.insert(s.widths.end(), encoder_hidden.begin(), encoder_hidden.end());
  s.widths.push_back(measurement_embed);
  s.leaky_slope = leaky_slope;
  s.activation = activation;
  return s;
}

nn::FcnnSpec PotentialConfig::potential_spec() const {
  nn::FcnnSpec s;
  s.widths.push_back(measurement_embed + n_state);
  s.widths.insert(s.widths.end(), potential_hidden.begin(), potential_hidden.end());
  s.widths.push_back(1);
  s.leaky_slope = leaky_slope;
  s.activation = activation;
  return s;
}

void init_params(const PotentialConfig& cfg, nn::ParamStore& phi, Rng& rng) {
  cfg.validate();
  if (cfg.measurement_embed > 0) nn::fcnn_init(cfg.encoder_spec(), kEncXPrefix, phi, rng);
  nn::fcnn_init(cfg.potential_spec(), kPotentialPrefix, phi, rng);
}

NodeId nis(Graph& g, NodeId x_row, NodeId mu, NodeId sigma) {
  const int rows = g.at(mu).rows, cols = g.at(mu).cols;  // copy out: appends reallocate nodes
  if (g.at(sigma).rows != rows || g.at(sigma).cols != cols)
    throw ShapeError("nis: mu and sigma shapes differ");
  NodeId x = x_row;
  if (g.at(x).rows == 1 && rows > 1) x = g.broadcast_row(x, rows);
  if (g.at(x).rows != rows || g.at(x).cols != cols)
    throw ShapeError("nis: x shape does not match mu");
  const NodeId inv_var = g.exp(g.scale(g.log(sigma), -2.0));
  return g.row_sum(g.mul(g.square(g.sub(x, mu)), inv_var));
}

NodeId encode_measurement(Graph& g, const PotentialConfig& cfg, NodeId x_row) {
  cfg.validate();
  if (cfg.measurement_embed == 0) return kNoNode;
  if (g.at(x_row).rows != 1 || g.at(x_row).cols != cfg.n_x)
    throw ShapeError("encode_measurement: expected a 1x" + std::to_string(cfg.n_x) + " row");
  return nn::fcnn_apply(g, cfg.encoder_spec(), kEncXPrefix, x_row);
}

PotentialNodes potential_eval(Graph& g, const PotentialConfig& cfg, NodeId enc_x_row,
                              NodeId state) {
  cfg.validate();
  const int rows = g.at(state).rows, cols = g.at(state).cols;  // copy out: appends reallocate nodes
  if (cols != cfg.n_state)
    throw ShapeError("potential_eval: state has " + std::to_string(cols) +
                     " columns, config expects " + std::to_string(cfg.n_state));
  NodeId features = state;
  if (cfg.measurement_embed > 0) {
    if (enc_x_row == kNoNode)
      throw ValidationError("potential_eval: config has a measurement encoder but no encoded row");
    features = g.concat(g.broadcast_row(enc_x_row, rows), state);
  }
  PotentialNodes out;
  out.phi_raw = nn::fcnn_apply(g, cfg.potential_spec(), kPotentialPrefix, features);
  out.phi = g.sub(out.phi_raw, g.broadcast_scalar(g.mean(out.phi_raw), rows, 1));

  // Per-particle field: rows of d(sum_i phi_i)/d(state) are d(phi_i)/d(state_i)
  // because particles interact only through the subtracted mean, which the
  // raw-sum root ignores.
  const NodeId root = g.sum(out.phi_raw);
  const NodeId wrt[] = {state};
  out.grad_state = append_gradient(g, root, wrt)[0];
  return out;
}

NodeId flow_gradient(Graph& g, const PotentialConfig& cfg, NodeId enc_x_row, NodeId state) {
  return potential_eval(g, cfg, enc_x_row, state).grad_state;
}

NodeId euler_step(Graph& g, const PotentialConfig& cfg, NodeId enc_x_row, NodeId state,
                  double dt) {
  if (!(dt > 0.0)) throw ValidationError("euler_step: dt must be positive");
  return g.add(state, g.scale(flow_gradient(g, cfg, enc_x_row, state), dt));
}

NodeId flow_transform(Graph& g, const PotentialConfig& cfg, const FlowConfig& flow,
                      NodeId enc_x_row, NodeId state) {
  flow.validate();
  NodeId s = state;
  for (int k = 0; k < flow.num_steps; ++k) s = euler_step(g, cfg, enc_x_row, s, flow.step_size);
  return s;
}

NodeId flow_objective(Graph& g, const PotentialConfig& cfg, NodeId enc_x_row, NodeId state,
                      NodeId gamma) {
  cfg.validate();
  const int particles = g.at(state).rows;
  if (particles < 2)
    throw ValidationError("flow_objective: covariance needs at least 2 particles, got " +
                          std::to_string(particles));
  if (g.at(gamma).rows != particles || g.at(gamma).cols != 1)
    throw ShapeError("flow_objective: gamma must be " + std::to_string(particles) + "x1");

  // frozen ensemble and frozen innovation: this objective reaches only the
  // potential parameters
  const NodeId state_c = g.stop_gradient(state);
  const NodeId gamma_c = g.stop_gradient(gamma);
  const PotentialNodes pot = potential_eval(g, cfg, enc_x_row, state_c);

  const NodeId grad_sq = g.mean(g.row_sum(g.square(pot.grad_state)));  // mean_i |grad_i|^2
  const NodeId gamma_centered =
      g.sub(gamma_c, g.broadcast_scalar(g.mean(gamma_c), particles, 1));
  const NodeId cov = g.mean(g.mul(pot.phi, gamma_centered));
  return g.add(g.scale(grad_sq, 0.5), g.scale(cov, 0.5));
}

}  // namespace pfb::flow
