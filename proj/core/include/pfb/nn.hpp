#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pfb/graph.hpp"
#include "pfb/rng.hpp"

namespace pfb::nn {

// Named parameter tensors with stable insertion order; the order defines the
// layout of flattened vectors and of optimizer state.
class ParamStore {
 public:
  Tensor& add(std::string name, Tensor t);
  bool has(std::string_view name) const;
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t count() const { return items_.size(); }
  std::size_t total_elements() const;

  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// every param leaf present in the graph gets its tensor from the store
void bind_params(const Graph& g, const ParamStore& params, Evaluator::Bindings& out);

// uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)], the draw order is row major
void init_uniform(Tensor& t, int fan_in, Rng& rng);

// Hidden-layer nonlinearity. The smooth option matters when a network's
// *gradient* is itself trained: a piecewise-linear stack carries its curvature
// in kink positions, and the exact parameter gradient of any functional of
// the gradient field is blind to the delta-supported forces that place kinks.
enum class Act { kLeakyRelu, kSoftplus };

// Fully connected stack: widths = {in, hidden..., out}. Hidden layers take
// the chosen nonlinearity, the output layer is affine. Parameters are named
// "<prefix>.w<l>" / "<prefix>.b<l>".
struct FcnnSpec {
  std::vector<int> widths;
  double leaky_slope = 0.01;
  Act activation = Act::kLeakyRelu;

  int input_width() const { return widths.front(); }
  int output_width() const { return widths.back(); }
  void validate(const std::string& where) const;
};

void fcnn_init(const FcnnSpec& spec, const std::string& prefix, ParamStore& params, Rng& rng);
// Reuses existing leaves with the same names, so several call sites share one
// set of parameters inside a graph.
NodeId fcnn_apply(Graph& g, const FcnnSpec& spec, const std::string& prefix, NodeId input);

// Single gated recurrent cell; gate order is reset, update, candidate, with
// biases on both the input and the recurrent path. The update gate blends
// h' = u * h + (1 - u) * c, and the reset gate scales the recurrent
// contribution of the candidate including its bias.
struct GruSpec {
  int input = 0;
  int hidden = 0;
  void validate(const std::string& where) const;
};

void gru_init(const GruSpec& spec, const std::string& prefix, ParamStore& params, Rng& rng);
NodeId gru_step(Graph& g, const GruSpec& spec, const std::string& prefix, NodeId x, NodeId h);

// Shared trunk with two affine output maps. sigma = softplus(raw) + floor,
// so scales stay positive and bounded away from zero.
struct GaussianHeadSpec {
  FcnnSpec trunk;  // ends at the last hidden width; activations on every layer
  int out = 0;
  double sigma_floor = 1e-4;
  void validate(const std::string& where) const;
};

struct GaussianNodes {
  NodeId mu = kNoNode;
  NodeId sigma = kNoNode;
};

void gaussian_head_init(const GaussianHeadSpec& spec, const std::string& prefix,
                        ParamStore& params, Rng& rng);
GaussianNodes gaussian_head_apply(Graph& g, const GaussianHeadSpec& spec,
                                  const std::string& prefix, NodeId input);

// sample = mu + sigma * noise, one draw per row
NodeId reparameterize(Graph& g, const GaussianNodes& stats, NodeId noise);

// Row-wise diagonal Gaussian log density, summed over columns -> m x 1.
// A 1 x n target is broadcast across rows.
NodeId gaussian_log_density(Graph& g, NodeId mu, NodeId sigma, NodeId target);

}  // namespace pfb::nn
