#include "pfb/objective.hpp"

#include <cmath>
#include <string>

#include "pfb/errors.hpp"

namespace pfb::obj {

void ModelSpec::validate() const {
  model.validate();
  potential.validate();
  flow_cfg.validate();
  if (particles < 2) {
    throw ValidationError("model spec: training requires at least 2 particles, got " +
                          std::to_string(particles));
  }
  if (potential.n_state != model.n_z + model.n_h) {
    throw ValidationError("model spec: potential state width " +
                          std::to_string(potential.n_state) + " != n_z + n_h = " +
                          std::to_string(model.n_z + model.n_h));
  }
  if (potential.n_x != model.n_x) {
    throw ValidationError("model spec: potential measurement width " +
                          std::to_string(potential.n_x) + " != model n_x = " +
                          std::to_string(model.n_x));
  }
}

StepOutputs append_step(Graph& g, const ModelSpec& spec, const StepInputs& in) {
  const auto& mc = spec.model;
  StepOutputs out;

  gen::PriorStepNodes pr = gen::prior_step(g, mc, in.z_prev, in.h_prev, in.eps);
  out.mu_prior = pr.mu;
  out.sigma_prior = pr.sigma;

  // labels score against the prior head before the measurement acts
  NodeId label_ll = gen::label_log_likelihood(g, nn::GaussianNodes{pr.mu, pr.sigma}, in.y);
  out.label = g.scale(g.mul(in.mask, g.mean(label_ll)), -1.0);

  // innovation of the pre-flow particles under the decoder
  nn::GaussianNodes dec_pre = gen::decode(g, mc, pr.z, pr.h);
  out.gamma = flow::nis(g, in.x, dec_pre.mu, dec_pre.sigma);

  NodeId enc_x = flow::encode_measurement(g, spec.potential, in.x);
  out.state_pre = g.concat(pr.z, pr.h);
  out.flow = flow::flow_objective(g, spec.potential, enc_x, out.state_pre, out.gamma);

  NodeId state_post =
      flow::flow_transform(g, spec.potential, spec.flow_cfg, enc_x, out.state_pre);
  out.z_post = g.slice(state_post, 0, mc.n_z);
  out.h_post = g.slice(state_post, mc.n_z, mc.n_z + mc.n_h);

  nn::GaussianNodes dec_post = gen::decode(g, mc, out.z_post, out.h_post);
  out.recon = g.scale(g.mean(gen::data_log_likelihood(g, dec_post, in.x)), -1.0);
  return out;
}

StepLossGraph build_step_loss(const ModelSpec& spec) {
  spec.validate();
  const auto& mc = spec.model;
  StepLossGraph sl;
  Graph& g = sl.graph;
  sl.leaves.z_prev = g.leaf("z_prev", spec.particles, mc.n_z);
  sl.leaves.h_prev = g.leaf("h_prev", spec.particles, mc.n_h);
  sl.leaves.x = g.leaf("x", 1, mc.n_x);
  sl.leaves.y = g.leaf("y", 1, mc.n_y);
  sl.leaves.eps = g.leaf("eps", spec.particles, mc.n_z);
  sl.leaves.mask = g.leaf("mask", 1, 1);
  sl.outs = append_step(g, spec, sl.leaves);
  g.mark_output("recon", sl.outs.recon);
  g.mark_output("label", sl.outs.label);
  g.mark_output("flow", sl.outs.flow);
  g.mark_output("z_post", sl.outs.z_post);
  g.mark_output("h_post", sl.outs.h_post);
  g.mark_output("mu_prior", sl.outs.mu_prior);
  g.mark_output("sigma_prior", sl.outs.sigma_prior);
  return sl;
}

WindowGraph build_window_graph(const ModelSpec& spec, int length) {
  spec.validate();
  if (length < 1) {
    throw ValidationError("window graph: length must be positive, got " +
                          std::to_string(length));
  }
  const auto& mc = spec.model;
  WindowGraph wg;
  wg.length = length;
  wg.particles = spec.particles;
  Graph& g = wg.graph;

  // truncated backpropagation: every window restarts from the zero ensemble
  NodeId z = g.zeros(spec.particles, mc.n_z);
  NodeId h = g.zeros(spec.particles, mc.n_h);

  for (int n = 0; n < length; ++n) {
    const std::string tag = "." + std::to_string(n);
    StepInputs in;
    in.z_prev = z;
    in.h_prev = h;
    in.x = g.leaf("x" + tag, 1, mc.n_x);
    in.y = g.leaf("y" + tag, 1, mc.n_y);
    in.eps = g.leaf("eps" + tag, spec.particles, mc.n_z);
    in.mask = g.leaf("mask" + tag, 1, 1);
    wg.x.push_back(in.x);
    wg.y.push_back(in.y);
    wg.eps.push_back(in.eps);
    wg.mask.push_back(in.mask);

    StepOutputs out = append_step(g, spec, in);
    wg.steps.push_back(out);
    z = out.z_post;
    h = out.h_post;

    NodeId step_theta = g.add(out.recon, out.label);
    wg.loss_theta = (n == 0) ? step_theta : g.add(wg.loss_theta, step_theta);
    wg.loss_phi = (n == 0) ? out.flow : g.add(wg.loss_phi, out.flow);
  }
  g.mark_output("loss_theta", wg.loss_theta);
  g.mark_output("loss_phi", wg.loss_phi);
  return wg;
}

Evaluator::Bindings window_bindings(const WindowGraph& wg, const nn::ParamStore& theta,
                                    const nn::ParamStore& phi, const WindowData& data) {
  const auto n = static_cast<std::size_t>(wg.length);
  if (data.x_rows.size() != n || data.y_rows.size() != n || data.eps.size() != n ||
      data.mask.size() != n) {
    throw ValidationError("window bindings: data arrays must all have length " +
                          std::to_string(wg.length));
  }
  Evaluator::Bindings b;
  nn::bind_params(wg.graph, theta, b);
  nn::bind_params(wg.graph, phi, b);
  for (std::size_t i = 0; i < n; ++i) {
    b.emplace_back(wg.x[i], &data.x_rows[i]);
    b.emplace_back(wg.y[i], &data.y_rows[i]);
    b.emplace_back(wg.eps[i], &data.eps[i]);
    b.emplace_back(wg.mask[i], &data.mask[i]);
  }
  return b;
}

WindowLoss window_loss(const WindowGraph& wg, const nn::ParamStore& theta,
                       const nn::ParamStore& phi, const WindowData& data) {
  Evaluator ev(wg.graph);
  ev.forward(window_bindings(wg, theta, phi, data));
  WindowLoss out;
  out.loss_theta = ev.value(wg.loss_theta).at(0, 0);
  out.loss_phi = ev.value(wg.loss_phi).at(0, 0);
  if (!std::isfinite(out.loss_theta) || !std::isfinite(out.loss_phi)) {
    throw NumericalError("window loss is not finite");
  }
  return out;
}

}  // namespace pfb::obj
