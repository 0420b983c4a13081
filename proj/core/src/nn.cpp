#include "pfb/nn.hpp"

#include <cmath>

#include "pfb/errors.hpp"

namespace pfb::nn {

Tensor& ParamStore::add(std::string name, Tensor t) {
  if (index_.count(name)) throw ValidationError("parameter '" + name + "' already exists");
  index_.emplace(name, items_.size());
  items_.emplace_back(std::move(name), std::move(t));
  return items_.back().second;
}

bool ParamStore::has(std::string_view name) const { return index_.count(std::string(name)) > 0; }

Tensor& ParamStore::get(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ValidationError("no parameter named '" + std::string(name) + "'");
  return items_[it->second].second;
}

const Tensor& ParamStore::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ValidationError("no parameter named '" + std::string(name) + "'");
  return items_[it->second].second;
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> out;
  out.reserve(total_elements());
  for (const auto& [name, t] : items_) out.insert(out.end(), t.flat().begin(), t.flat().end());
  return out;
}

void ParamStore::unflatten(std::span<const double> flat) {
  if (flat.size() != total_elements())
    throw ValidationError("unflatten: size " + std::to_string(flat.size()) + " != " +
                          std::to_string(total_elements()));
  std::size_t off = 0;
  for (auto& [name, t] : items_) {
    for (double& v : t.flat()) v = flat[off++];
  }
}

void bind_params(const Graph& g, const ParamStore& params, Evaluator::Bindings& out) {
  for (const auto& [name, t] : params.items()) {
    const NodeId id = g.find_leaf(name);
    if (id != kNoNode) out.emplace_back(id, &t);
  }
}

void init_uniform(Tensor& t, int fan_in, Rng& rng) {
  if (fan_in <= 0) throw ValidationError("init_uniform: fan_in must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.flat()) v = rng.uniform(-bound, bound);
}

void FcnnSpec::validate(const std::string& where) const {
  if (widths.size() < 2)
    throw ValidationError(where + ": network needs at least input and output widths");
  for (int w : widths)
    if (w <= 0) throw ValidationError(where + ": layer widths must be positive");
}

namespace {
std::string wname(const std::string& prefix, std::size_t l) {
  return prefix + ".w" + std::to_string(l);
}
std::string bname(const std::string& prefix, std::size_t l) {
  return prefix + ".b" + std::to_string(l);
}

// leaf shared across call sites; shape must agree with previous declarations
NodeId param_leaf(Graph& g, const std::string& name, int rows, int cols) {
  const NodeId found = g.find_leaf(name);
  if (found != kNoNode) {
    const Node& n = g.at(found);
    if (n.rows != rows || n.cols != cols)
      throw ShapeError("parameter leaf '" + name + "' redeclared with different shape");
    return found;
  }
  return g.leaf(name, rows, cols);
}
}  // namespace

void fcnn_init(const FcnnSpec& spec, const std::string& prefix, ParamStore& params, Rng& rng) {
  spec.validate("fcnn_init(" + prefix + ")");
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    Tensor w(spec.widths[l], spec.widths[l + 1]);
    Tensor b(1, spec.widths[l + 1]);
    init_uniform(w, spec.widths[l], rng);
    init_uniform(b, spec.widths[l], rng);
    params.add(wname(prefix, l), std::move(w));
    params.add(bname(prefix, l), std::move(b));
  }
}

NodeId fcnn_apply(Graph& g, const FcnnSpec& spec, const std::string& prefix, NodeId input) {
  spec.validate("fcnn_apply(" + prefix + ")");
  if (g.at(input).cols != spec.widths.front())
    throw ShapeError("fcnn_apply(" + prefix + "): input has " +
                     std::to_string(g.at(input).cols) + " columns, spec expects " +
                     std::to_string(spec.widths.front()));
  NodeId a = input;
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    const NodeId w = param_leaf(g, wname(prefix, l), spec.widths[l], spec.widths[l + 1]);
    const NodeId b = param_leaf(g, bname(prefix, l), 1, spec.widths[l + 1]);
    a = g.add(g.matmul(a, w), b);
    if (l + 2 < spec.widths.size())
      a = spec.activation == Act::kSoftplus ? g.softplus(a) : g.leaky_relu(a, spec.leaky_slope);
  }
  return a;
}

void GruSpec::validate(const std::string& where) const {
  if (input <= 0 || hidden <= 0)
    throw ValidationError(where + ": gru input and hidden widths must be positive");
}

void gru_init(const GruSpec& spec, const std::string& prefix, ParamStore& params, Rng& rng) {
  spec.validate("gru_init(" + prefix + ")");
  const char* gates[3] = {"r", "u", "c"};
  for (const char* gate : gates) {
    Tensor w(spec.input, spec.hidden), u(spec.hidden, spec.hidden);
    Tensor b(1, spec.hidden), c(1, spec.hidden);
    init_uniform(w, spec.input, rng);
    init_uniform(u, spec.hidden, rng);
    init_uniform(b, spec.input, rng);
    init_uniform(c, spec.hidden, rng);
    params.add(prefix + ".w" + gate, std::move(w));
    params.add(prefix + ".u" + gate, std::move(u));
    params.add(prefix + ".b" + gate, std::move(b));
    params.add(prefix + ".c" + gate, std::move(c));
  }
}

NodeId gru_step(Graph& g, const GruSpec& spec, const std::string& prefix, NodeId x, NodeId h) {
  spec.validate("gru_step(" + prefix + ")");
  if (g.at(x).cols != spec.input || g.at(h).cols != spec.hidden)
    throw ShapeError("gru_step(" + prefix + "): input " + std::to_string(g.at(x).cols) +
                     ", state " + std::to_string(g.at(h).cols) + " do not match spec " +
                     std::to_string(spec.input) + "/" + std::to_string(spec.hidden));
  auto gate_pre = [&](const char* gate) {
    const NodeId w = param_leaf(g, prefix + ".w" + gate, spec.input, spec.hidden);
    const NodeId b = param_leaf(g, prefix + ".b" + gate, 1, spec.hidden);
    const NodeId u = param_leaf(g, prefix + ".u" + gate, spec.hidden, spec.hidden);
    const NodeId c = param_leaf(g, prefix + ".c" + gate, 1, spec.hidden);
    return std::pair{g.add(g.matmul(x, w), b), g.add(g.matmul(h, u), c)};
  };
  const auto [rx, rh] = gate_pre("r");
  const NodeId reset = g.sigmoid(g.add(rx, rh));
  const auto [ux, uh] = gate_pre("u");
  const NodeId update = g.sigmoid(g.add(ux, uh));
  const auto [cx, ch] = gate_pre("c");
  const NodeId cand = g.tanh(g.add(cx, g.mul(reset, ch)));
  return g.add(g.mul(update, h), g.mul(g.one_minus(update), cand));
}

void GaussianHeadSpec::validate(const std::string& where) const {
  trunk.validate(where + ".trunk");
  if (out <= 0) throw ValidationError(where + ": output width must be positive");
  if (!(sigma_floor > 0.0)) throw ValidationError(where + ": sigma floor must be positive");
}

void gaussian_head_init(const GaussianHeadSpec& spec, const std::string& prefix,
                        ParamStore& params, Rng& rng) {
  spec.validate("gaussian_head_init(" + prefix + ")");
  fcnn_init(spec.trunk, prefix + ".trunk", params, rng);
  const int last = spec.trunk.output_width();
  Tensor wm(last, spec.out), bm(1, spec.out), ws(last, spec.out), bs(1, spec.out);
  init_uniform(wm, last, rng);
  init_uniform(bm, last, rng);
  init_uniform(ws, last, rng);
  init_uniform(bs, last, rng);
  params.add(prefix + ".mean.w", std::move(wm));
  params.add(prefix + ".mean.b", std::move(bm));
  params.add(prefix + ".sigma.w", std::move(ws));
  params.add(prefix + ".sigma.b", std::move(bs));
}

GaussianNodes gaussian_head_apply(Graph& g, const GaussianHeadSpec& spec,
                                  const std::string& prefix, NodeId input) {
  spec.validate("gaussian_head_apply(" + prefix + ")");
  NodeId a = input;
  // trunk keeps activations on every layer so both output maps see features
  for (std::size_t l = 0; l + 1 < spec.trunk.widths.size(); ++l) {
    const NodeId w =
        param_leaf(g, wname(prefix + ".trunk", l), spec.trunk.widths[l], spec.trunk.widths[l + 1]);
    const NodeId b = param_leaf(g, bname(prefix + ".trunk", l), 1, spec.trunk.widths[l + 1]);
    a = g.leaky_relu(g.add(g.matmul(a, w), b), spec.trunk.leaky_slope);
  }
  const int last = spec.trunk.output_width();
  const NodeId wm = param_leaf(g, prefix + ".mean.w", last, spec.out);
  const NodeId bm = param_leaf(g, prefix + ".mean.b", 1, spec.out);
  const NodeId ws = param_leaf(g, prefix + ".sigma.w", last, spec.out);
  const NodeId bs = param_leaf(g, prefix + ".sigma.b", 1, spec.out);
  GaussianNodes out;
  out.mu = g.add(g.matmul(a, wm), bm);
  out.sigma = g.add_scalar(g.softplus(g.add(g.matmul(a, ws), bs)), spec.sigma_floor);
  return out;
}

NodeId reparameterize(Graph& g, const GaussianNodes& stats, NodeId noise) {
  return g.add(stats.mu, g.mul(stats.sigma, noise));
}

NodeId gaussian_log_density(Graph& g, NodeId mu, NodeId sigma, NodeId target) {
  const int rows = g.at(mu).rows, cols = g.at(mu).cols;  // copy out: appends reallocate nodes
  if (g.at(sigma).rows != rows || g.at(sigma).cols != cols)
    throw ShapeError("gaussian_log_density: mu and sigma shapes differ");
  NodeId y = target;
  if (g.at(y).rows == 1 && rows > 1) y = g.broadcast_row(y, rows);
  if (g.at(y).rows != rows || g.at(y).cols != cols)
    throw ShapeError("gaussian_log_density: target shape does not match mu");
  constexpr double kLog2Pi = 1.8378770664093454835606594728112;
  const NodeId log_sigma = g.log(sigma);
  const NodeId quad = g.mul(g.square(g.sub(y, mu)), g.exp(g.scale(log_sigma, -2.0)));
  const NodeId per_dim = g.add(g.add_scalar(g.scale(log_sigma, 2.0), kLog2Pi), quad);
  return g.scale(g.row_sum(per_dim), -0.5);
}

}  // namespace pfb::nn
