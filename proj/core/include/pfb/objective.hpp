#pragma once

#include <vector>

#include "pfb/flow.hpp"
#include "pfb/generative.hpp"

namespace pfb::obj {

// Everything needed to unroll the model: generative parameters theta,
// potential parameters phi, and the pseudo-time discretization.
struct ModelSpec {
  gen::ModelConfig model;
  flow::PotentialConfig potential;
  flow::FlowConfig flow_cfg;
  int particles = 8;

  void validate() const;
};

struct StepInputs {
  NodeId z_prev = kNoNode;  // P x n_z
  NodeId h_prev = kNoNode;  // P x n_h
  NodeId x = kNoNode;       // 1 x n_x observed measurements
  NodeId y = kNoNode;       // 1 x n_y labels (only read under the mask)
  NodeId eps = kNoNode;     // P x n_z reparameterization noise
  NodeId mask = kNoNode;    // 1 x 1, 1 on source steps, 0 on target steps
};

struct StepOutputs {
  NodeId recon = kNoNode;     // negative mean data log likelihood, post-flow
  NodeId label = kNoNode;     // masked negative mean label log likelihood, pre-flow
  NodeId flow = kNoNode;      // potential training objective at this step
  NodeId mu_prior = kNoNode;  // pre-flow prior stats
  NodeId sigma_prior = kNoNode;
  NodeId gamma = kNoNode;      // pre-flow innovation, before the detach
  NodeId state_pre = kNoNode;  // pre-flow ensemble [z | h], before the detach
  NodeId z_post = kNoNode;     // post-flow ensemble carried to the next step
  NodeId h_post = kNoNode;
};

// One sequential-update step. Ordering per update: generative transition and
// prior head first (labels are scored on the pre-flow state), then the
// innovation at the pre-flow particles, then the flow moves the ensemble, and
// reconstruction is scored on the moved ensemble. The label and
// reconstruction gradients reach theta (and phi through the transform); the
// flow term reaches only phi.
StepOutputs append_step(Graph& g, const ModelSpec& spec, const StepInputs& in);

// fresh single-step graph with leaves for state, data, noise, mask; outputs
// marked recon/label/flow/z_post/h_post/mu_prior/sigma_prior
struct StepLossGraph {
  Graph graph;
  StepInputs leaves;
  StepOutputs outs;
};
StepLossGraph build_step_loss(const ModelSpec& spec);

// Unrolled window starting from the zero ensemble; backpropagation is
// truncated at the window boundary by construction. Leaves are named
// x.<n>, y.<n>, eps.<n>, mask.<n>.
struct WindowGraph {
  Graph graph;
  int length = 0;
  int particles = 0;
  NodeId loss_theta = kNoNode;  // sum over steps of recon + label
  NodeId loss_phi = kNoNode;    // sum over steps of the flow objective
  std::vector<NodeId> x, y, eps, mask;
  std::vector<StepOutputs> steps;
};
WindowGraph build_window_graph(const ModelSpec& spec, int length);

struct WindowData {
  std::vector<Tensor> x_rows;  // 1 x n_x each
  std::vector<Tensor> y_rows;  // 1 x n_y each
  std::vector<Tensor> eps;     // P x n_z each
  std::vector<Tensor> mask;    // 1 x 1 each, values 0 or 1
};

Evaluator::Bindings window_bindings(const WindowGraph& wg, const nn::ParamStore& theta,
                                    const nn::ParamStore& phi, const WindowData& data);

struct WindowLoss {
  double loss_theta = 0.0;
  double loss_phi = 0.0;
};
// one-shot evaluation; throws NumericalError when a loss is not finite
WindowLoss window_loss(const WindowGraph& wg, const nn::ParamStore& theta,
                       const nn::ParamStore& phi, const WindowData& data);

}  // namespace pfb::obj
