#include "pfb/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "pfb/errors.hpp"
#include "pfb/rng.hpp"

namespace pfb::train {
namespace {

// substream tags; keep distinct so shuffle and noise never collide
constexpr std::uint64_t kStreamShuffle = 1;
constexpr std::uint64_t kStreamNoise = 2;

std::vector<Tensor> grad_buffers(const nn::ParamStore& store) {
  std::vector<Tensor> out;
  out.reserve(store.count());
  for (const auto& [name, t] : store.items()) out.emplace_back(t.rows(), t.cols());
  return out;
}

void zero_all(std::vector<Tensor>& ts) {
  for (auto& t : ts) t.fill(0.0);
}

std::vector<NodeId> param_leaf_ids(const Graph& g, const nn::ParamStore& store) {
  std::vector<NodeId> ids;
  ids.reserve(store.count());
  for (const auto& [name, t] : store.items()) ids.push_back(g.find_leaf(name));
  return ids;
}

void accumulate_adjoints(const Evaluator& ev, const std::vector<NodeId>& ids,
                         std::vector<Tensor>& acc) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == kNoNode || !ev.has_adjoint(ids[i])) continue;
    tensor_axpy(1.0, ev.adjoint(ids[i]), acc[i]);
  }
}

}  // namespace

Adam::Adam(const nn::ParamStore& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_ = grad_buffers(params);
  v_ = grad_buffers(params);
}

void Adam::step(nn::ParamStore& params, const std::vector<Tensor>& grads, double lr, double l2) {
  auto& items = params.items();
  if (grads.size() != items.size() || m_.size() != items.size()) {
    throw ValidationError("adam: gradient count " + std::to_string(grads.size()) +
                          " != parameter count " + std::to_string(items.size()));
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor& p = items[i].second;
    const Tensor& g = grads[i];
    if (!p.same_shape(g)) {
      throw ValidationError("adam: gradient shape mismatch for '" + items[i].first + "'");
    }
    auto pf = p.flat();
    auto gf = g.flat();
    auto mf = m_[i].flat();
    auto vf = v_[i].flat();
    const double shrink = 1.0 - lr * l2;
    for (std::size_t k = 0; k < pf.size(); ++k) {
      pf[k] *= shrink;
      mf[k] = beta1_ * mf[k] + (1.0 - beta1_) * gf[k];
      vf[k] = beta2_ * vf[k] + (1.0 - beta2_) * gf[k] * gf[k];
      const double mhat = mf[k] / bc1;
      const double vhat = vf[k] / bc2;
      pf[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void TrainConfig::validate() const {
  if (window_length < 1) throw ValidationError("train config: window_length must be positive");
  if (particles < 2) throw ValidationError("train config: particles must be at least 2");
  if (batch_size < 1) throw ValidationError("train config: batch_size must be positive");
  if (!(initial_lr > 0.0)) throw ValidationError("train config: initial_lr must be positive");
  if (epochs < 1) throw ValidationError("train config: epochs must be positive");
  if (l2 < 0.0) throw ValidationError("train config: l2 must be nonnegative");
  if (!(lr_decay > 0.0) || lr_decay > 1.0) {
    throw ValidationError("train config: lr_decay must lie in (0, 1]");
  }
  if (checkpoint_every < 1) throw ValidationError("train config: checkpoint_every must be positive");
}

std::string loss_row_csv(const LossRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.3f\n", r.epoch, r.loss_theta,
                r.loss_phi, r.lr, r.seconds);
  return buf;
}

std::string loss_log_csv(const std::vector<LossRow>& log) {
  std::string out = std::string(kLossLogHeader) + "\n";
  for (const auto& r : log) out += loss_row_csv(r);
  return out;
}

std::string strip_seconds_column(const std::string& csv) {
  std::string out;
  std::size_t start = 0;
  while (start < csv.size()) {
    std::size_t end = csv.find('\n', start);
    if (end == std::string::npos) end = csv.size();
    std::string_view line(csv.data() + start, end - start);
    std::size_t cut = line.rfind(',');
    out += cut == std::string_view::npos ? line : line.substr(0, cut);
    out += '\n';
    start = end + 1;
  }
  return out;
}

TrainResult train(const obj::ModelSpec& spec, const TrainConfig& cfg,
                  const std::vector<data::Window>& windows, nn::ParamStore theta,
                  nn::ParamStore phi, const TrainHooks& hooks) {
  cfg.validate();
  obj::ModelSpec ms = spec;
  ms.particles = cfg.particles;
  ms.validate();
  if (windows.empty()) throw ValidationError("train: no windows");
  for (const auto& w : windows) {
    if (w.x.rows() != cfg.window_length || w.y.rows() != cfg.window_length ||
        w.domain.size() != static_cast<std::size_t>(cfg.window_length)) {
      throw ValidationError("train: window at step " + std::to_string(w.start) +
                            " does not have length " + std::to_string(cfg.window_length));
    }
    if (w.x.cols() != ms.model.n_x || w.y.cols() != ms.model.n_y) {
      throw ValidationError("train: window widths do not match the model");
    }
  }

  obj::WindowGraph wg = obj::build_window_graph(ms, cfg.window_length);
  Evaluator ev(wg.graph);

  const std::vector<NodeId> theta_ids = param_leaf_ids(wg.graph, theta);
  const std::vector<NodeId> phi_ids = param_leaf_ids(wg.graph, phi);

  // persistent input buffers; bindings point here and into the stores
  obj::WindowData wd;
  const int L = cfg.window_length;
  wd.x_rows.assign(static_cast<std::size_t>(L), Tensor(1, ms.model.n_x));
  wd.y_rows.assign(static_cast<std::size_t>(L), Tensor(1, ms.model.n_y));
  wd.eps.assign(static_cast<std::size_t>(L), Tensor(cfg.particles, ms.model.n_z));
  wd.mask.assign(static_cast<std::size_t>(L), Tensor(1, 1));
  const Evaluator::Bindings bindings = obj::window_bindings(wg, theta, phi, wd);

  std::vector<Tensor> grad_theta = grad_buffers(theta);
  std::vector<Tensor> grad_phi = grad_buffers(phi);
  Adam opt_theta(theta);
  Adam opt_phi(phi);

  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  double lr = cfg.initial_lr;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng = Rng::derive(cfg.seed, kStreamShuffle, static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    double sum_theta = 0.0, sum_phi = 0.0;
    std::size_t pos = 0;
    int batch_index = 0;
    while (pos < order.size()) {
      const std::size_t batch =
          std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - pos);
      zero_all(grad_theta);
      if (cfg.update_phi) zero_all(grad_phi);

      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t idx = order[pos + b];
        const data::Window& w = windows[idx];
        for (int n = 0; n < L; ++n) {
          const auto nn_ = static_cast<std::size_t>(n);
          for (int c = 0; c < ms.model.n_x; ++c) wd.x_rows[nn_].at(0, c) = w.x.at(n, c);
          for (int c = 0; c < ms.model.n_y; ++c) wd.y_rows[nn_].at(0, c) = w.y.at(n, c);
          wd.mask[nn_].at(0, 0) = w.domain[nn_] ? 1.0 : 0.0;
          Rng noise = Rng::derive(cfg.seed, kStreamNoise,
                                  (static_cast<std::uint64_t>(epoch) << 32) |
                                      static_cast<std::uint64_t>(idx),
                                  static_cast<std::uint64_t>(n));
          for (double& v : wd.eps[nn_].flat()) v = noise.gaussian();
        }

        ev.forward(bindings);
        const double lt = ev.value(wg.loss_theta).at(0, 0);
        const double lp = ev.value(wg.loss_phi).at(0, 0);
        if (!std::isfinite(lt) || !std::isfinite(lp)) {
          throw NumericalError("train: loss not finite at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch_index) + ", window starting at " +
                               std::to_string(w.start));
        }
        sum_theta += lt;
        sum_phi += lp;

        ev.backward(wg.loss_theta);
        accumulate_adjoints(ev, theta_ids, grad_theta);
        if (cfg.update_phi) {
          ev.backward(wg.loss_phi);
          accumulate_adjoints(ev, phi_ids, grad_phi);
        }
      }

      const double inv = 1.0 / static_cast<double>(batch);
      for (auto& t : grad_theta)
        for (double& v : t.flat()) v *= inv;
      opt_theta.step(theta, grad_theta, lr, cfg.l2);
      if (cfg.update_phi) {
        for (auto& t : grad_phi)
          for (double& v : t.flat()) v *= inv;
        opt_phi.step(phi, grad_phi, lr, cfg.l2);
      }
      pos += batch;
      ++batch_index;
    }

    const auto t1 = std::chrono::steady_clock::now();
    LossRow row;
    row.epoch = epoch;
    row.loss_theta = sum_theta / static_cast<double>(order.size());
    row.loss_phi = sum_phi / static_cast<double>(order.size());
    row.lr = lr;
    row.seconds = std::chrono::duration<double>(t1 - t0).count();
    result.log.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(row);
    if (hooks.on_checkpoint && (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs)) {
      hooks.on_checkpoint(epoch, theta, phi);
    }
    lr *= cfg.lr_decay;
  }

  result.theta = std::move(theta);
  result.phi = std::move(phi);
  return result;
}

InferResult infer(const gen::ModelConfig& model, const flow::PotentialConfig& potential,
                  const flow::FlowConfig& flow_cfg, const nn::ParamStore& theta,
                  const nn::ParamStore& phi, const Tensor& x_seq) {
  model.validate();
  potential.validate();
  flow_cfg.validate();
  if (x_seq.cols() != model.n_x) {
    throw ValidationError("infer: data width " + std::to_string(x_seq.cols()) +
                          " != model n_x = " + std::to_string(model.n_x));
  }
  if (potential.n_state != model.n_z + model.n_h || potential.n_x != model.n_x) {
    throw ValidationError("infer: potential dimensions do not match the model");
  }

  Graph g;
  NodeId z_prev = g.leaf("z_prev", 1, model.n_z);
  NodeId h_prev = g.leaf("h_prev", 1, model.n_h);
  NodeId x = g.leaf("x", 1, model.n_x);
  // noise-free single particle: z collapses to the prior mean
  gen::PriorStepNodes pr = gen::prior_step(g, model, z_prev, h_prev, g.zeros(1, model.n_z));
  NodeId enc_x = flow::encode_measurement(g, potential, x);
  NodeId state = g.concat(pr.z, pr.h);
  NodeId post = flow::flow_transform(g, potential, flow_cfg, enc_x, state);
  NodeId z_post = g.slice(post, 0, model.n_z);
  NodeId h_post = g.slice(post, model.n_z, model.n_z + model.n_h);

  Evaluator ev(g);
  Tensor zc(1, model.n_z), hc(1, model.n_h), xr(1, model.n_x);
  Evaluator::Bindings bindings;
  nn::bind_params(g, theta, bindings);
  nn::bind_params(g, phi, bindings);
  bindings.emplace_back(z_prev, &zc);
  bindings.emplace_back(h_prev, &hc);
  bindings.emplace_back(x, &xr);

  const int L = x_seq.rows();
  InferResult out;
  out.y_pred = Tensor(L, model.n_z);
  out.z_traj = Tensor(L, model.n_z);
  out.h_traj = Tensor(L, model.n_h);
  for (int n = 0; n < L; ++n) {
    for (int c = 0; c < model.n_x; ++c) xr.at(0, c) = x_seq.at(n, c);
    ev.forward(bindings);
    const Tensor& mu = ev.value(pr.mu);
    const Tensor& zp = ev.value(z_post);
    const Tensor& hp = ev.value(h_post);
    if (!mu.all_finite() || !zp.all_finite() || !hp.all_finite()) {
      throw NumericalError("infer: non-finite state at step " + std::to_string(n));
    }
    for (int c = 0; c < model.n_z; ++c) {
      out.y_pred.at(n, c) = mu.at(0, c);
      out.z_traj.at(n, c) = zp.at(0, c);
      zc.at(0, c) = zp.at(0, c);
    }
    for (int c = 0; c < model.n_h; ++c) {
      out.h_traj.at(n, c) = hp.at(0, c);
      hc.at(0, c) = hp.at(0, c);
    }
  }
  return out;
}

}  // namespace pfb::train
