#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "pfb/checkpoint.hpp"
#include "pfb/training.hpp"
#include "straightline.hpp"
#include "test_support.hpp"

using namespace pfb;

namespace {

obj::ModelSpec tiny_spec() {
  obj::ModelSpec s;
  s.model.n_x = 3;
  s.model.n_y = 2;
  s.model.n_z = 2;
  s.model.n_h = 8;
  s.model.latent_embed = 4;
  s.model.encoder_hidden = {6};
  s.model.prior_hidden = {8};
  s.model.decoder_hidden = {8};
  s.potential.n_x = 3;
  s.potential.n_state = 10;
  s.potential.measurement_embed = 4;
  s.potential.encoder_hidden = {6};
  s.potential.potential_hidden = {8};
  s.flow_cfg = {2, 0.5};
  s.particles = 4;
  return s;
}

void init_stores(const obj::ModelSpec& spec, std::uint64_t seed, nn::ParamStore& theta,
                 nn::ParamStore& phi) {
  Rng tr = Rng::derive(seed, 60);
  Rng pr = Rng::derive(seed, 61);
  gen::init_params(spec.model, theta, tr);
  flow::init_params(spec.potential, phi, pr);
}

std::vector<data::Window> tiny_windows(const obj::ModelSpec& spec, int count, int length,
                                       std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 62);
  std::vector<data::Window> out;
  for (int w = 0; w < count; ++w) {
    data::Window win;
    win.x = ts::random_tensor(length, spec.model.n_x, rng, -1.0, 1.0);
    win.y = ts::random_tensor(length, spec.model.n_y, rng, -1.0, 1.0);
    win.domain.assign(static_cast<std::size_t>(length), 0);
    for (int r = 0; r < length; ++r)
      win.domain[static_cast<std::size_t>(r)] = r % 2 == 0 ? 1 : 0;
    win.start = w * length;
    out.push_back(std::move(win));
  }
  return out;
}

train::TrainConfig tiny_train_cfg(int epochs, int window_length) {
  train::TrainConfig cfg;
  cfg.window_length = window_length;
  cfg.particles = 4;
  cfg.batch_size = 2;
  cfg.initial_lr = 1e-3;
  cfg.epochs = epochs;
  cfg.l2 = 0.01;
  cfg.lr_decay = 0.99;
  cfg.seed = 7;
  cfg.checkpoint_every = 100;
  return cfg;
}

nn::ParamStore single_param(double value) {
  nn::ParamStore store;
  store.items().emplace_back("w", Tensor::full(1, 1, value));
  return store;
}

}  // namespace

TEST_CASE("adam leaves parameters untouched on zero gradients without decay") {
  nn::ParamStore params = single_param(1.2345);
  params.items().emplace_back("b", Tensor(1, 3, {0.5, -0.25, 2.0}));
  const nn::ParamStore before = params;
  train::Adam opt(params);
  const std::vector<Tensor> grads = {Tensor::zeros(1, 1), Tensor::zeros(1, 3)};
  for (int i = 0; i < 5; ++i) opt.step(params, grads, 0.1, 0.0);
  for (std::size_t p = 0; p < params.items().size(); ++p) {
    CHECK(ts::bitwise_equal(params.items()[p].second, before.items()[p].second));
  }
}

TEST_CASE("the first adam step moves against the gradient by about the learning rate") {
  nn::ParamStore params = single_param(0.0);
  train::Adam opt(params);
  const std::vector<Tensor> grads = {Tensor::full(1, 1, 3.7)};
  opt.step(params, grads, 0.05, 0.0);
  const double moved = params.items()[0].second.at(0, 0);
  CHECK(moved < 0.0);
  CHECK(std::abs(moved) <= 0.05 * 1.0001);
  CHECK(std::abs(moved) >= 0.05 * 0.999);
}

TEST_CASE("adam minimizes a one-dimensional quadratic") {
  nn::ParamStore params = single_param(-1.0);
  train::Adam opt(params);
  for (int i = 0; i < 200; ++i) {
    const double w = params.items()[0].second.at(0, 0);
    const std::vector<Tensor> grads = {Tensor::full(1, 1, 2.0 * (w - 3.0))};
    opt.step(params, grads, 0.2, 0.0);
  }
  CHECK(std::abs(params.items()[0].second.at(0, 0) - 3.0) < 1e-3);
}

TEST_CASE("decoupled decay shrinks parameters before the update") {
  nn::ParamStore params = single_param(2.0);
  train::Adam opt(params);
  const std::vector<Tensor> grads = {Tensor::zeros(1, 1)};
  opt.step(params, grads, 0.1, 0.5);
  // zero gradient: only the shrink acts, p <- p * (1 - lr*l2)
  CHECK(params.items()[0].second.at(0, 0) == doctest::Approx(2.0 * 0.95).epsilon(1e-12));
}

TEST_CASE("one epoch updates every parameter group") {
  const obj::ModelSpec spec = tiny_spec();
  nn::ParamStore theta, phi;
  init_stores(spec, 40, theta, phi);
  const nn::ParamStore theta0 = theta;
  const nn::ParamStore phi0 = phi;
  const auto windows = tiny_windows(spec, 2, 6, 40);
  const train::TrainResult res =
      train::train(spec, tiny_train_cfg(1, 6), windows, theta, phi);

  const std::vector<std::string> prefixes = {"theta.enc_z", "theta.gru", "theta.prior",
                                             "theta.dec", "phi.enc_x", "phi.pot"};
  for (const auto& prefix : prefixes) {
    double moved = 0.0;
    const auto scan = [&](const nn::ParamStore& now, const nn::ParamStore& was) {
      for (std::size_t i = 0; i < now.items().size(); ++i) {
        const auto& [name, t] = now.items()[i];
        if (name.rfind(prefix, 0) != 0) continue;
        moved = std::max(moved, t.max_abs_diff(was.items()[i].second));
      }
    };
    scan(res.theta, theta0);
    scan(res.phi, phi0);
    CHECK(moved > 0.0);
  }
}

TEST_CASE("training twice with one seed reproduces the loss log bitwise") {
  const obj::ModelSpec spec = tiny_spec();
  nn::ParamStore theta, phi;
  init_stores(spec, 41, theta, phi);
  const auto windows = tiny_windows(spec, 3, 5, 41);
  const train::TrainConfig cfg = tiny_train_cfg(3, 5);
  const train::TrainResult a = train::train(spec, cfg, windows, theta, phi);
  const train::TrainResult b = train::train(spec, cfg, windows, theta, phi);
  CHECK(train::strip_seconds_column(train::loss_log_csv(a.log)) ==
        train::strip_seconds_column(train::loss_log_csv(b.log)));
  for (std::size_t i = 0; i < a.theta.items().size(); ++i) {
    CHECK(ts::bitwise_equal(a.theta.items()[i].second, b.theta.items()[i].second));
  }
  for (std::size_t i = 0; i < a.phi.items().size(); ++i) {
    CHECK(ts::bitwise_equal(a.phi.items()[i].second, b.phi.items()[i].second));
  }
}

TEST_CASE("a few epochs reduce the generative loss on a small problem") {
  const obj::ModelSpec spec = tiny_spec();
  nn::ParamStore theta, phi;
  init_stores(spec, 42, theta, phi);
  const auto windows = tiny_windows(spec, 2, 8, 42);
  train::TrainConfig cfg = tiny_train_cfg(12, 8);
  cfg.initial_lr = 3e-3;
  const train::TrainResult res = train::train(spec, cfg, windows, theta, phi);
  REQUIRE(res.log.size() == 12);
  CHECK(res.log.back().loss_theta < res.log.front().loss_theta);
  for (const auto& row : res.log) {
    CHECK(std::isfinite(row.loss_theta));
    CHECK(std::isfinite(row.loss_phi));
  }
}

TEST_CASE("epoch hooks observe checkpoint boundaries and the final epoch") {
  const obj::ModelSpec spec = tiny_spec();
  nn::ParamStore theta, phi;
  init_stores(spec, 43, theta, phi);
  const auto windows = tiny_windows(spec, 1, 4, 43);
  train::TrainConfig cfg = tiny_train_cfg(5, 4);
  cfg.checkpoint_every = 2;
  std::vector<int> checkpoints;
  train::TrainHooks hooks;
  hooks.on_checkpoint = [&](int epoch, const nn::ParamStore&, const nn::ParamStore&) {
    checkpoints.push_back(epoch);
  };
  int epochs_seen = 0;
  hooks.on_epoch = [&](const train::LossRow&) { ++epochs_seen; };
  train::train(spec, cfg, windows, theta, phi, hooks);
  CHECK(epochs_seen == 5);
  REQUIRE_FALSE(checkpoints.empty());
  CHECK(checkpoints.back() == 5);
}

TEST_CASE("inference with a zero potential is the deterministic prior rollout") {
  const obj::ModelSpec spec = tiny_spec();
  nn::ParamStore theta, phi;
  init_stores(spec, 44, theta, phi);
  phi = ts::zeroed(std::move(phi));
  Rng rng = Rng::derive(44, 63);
  const Tensor x_seq = ts::random_tensor(7, spec.model.n_x, rng, -1.0, 1.0);
  const train::InferResult got =
      train::infer(spec.model, spec.potential, spec.flow_cfg, theta, phi, x_seq);
  REQUIRE(got.y_pred.rows() == 7);
  REQUIRE(got.y_pred.cols() == spec.model.n_z);

  // straight-line rollout: with an identity flow the next state is the prior
  // mean and the updated hidden state
  Tensor z(1, spec.model.n_z);
  Tensor h(1, spec.model.n_h);
  z.fill(0.0);
  h.fill(0.0);
  for (int n = 0; n < 7; ++n) {
    const Tensor emb = sl::fcnn(theta, gen::kEncPrefix, spec.model.encoder_spec(), z);
    h = sl::gru(theta, gen::kGruPrefix, emb, h);
    const sl::HeadOut prior =
        sl::gaussian_head(theta, gen::kPriorPrefix, spec.model.prior_spec(), h);
    z = prior.mu;
    for (int c = 0; c < spec.model.n_z; ++c) {
      CHECK(std::abs(got.y_pred.at(n, c) - prior.mu.at(0, c)) < 1e-12);
      CHECK(std::abs(got.z_traj.at(n, c) - z.at(0, c)) < 1e-12);
    }
    for (int c = 0; c < spec.model.n_h; ++c) {
      CHECK(std::abs(got.h_traj.at(n, c) - h.at(0, c)) < 1e-12);
    }
  }
}

TEST_CASE("inference is deterministic") {
  const obj::ModelSpec spec = tiny_spec();
  nn::ParamStore theta, phi;
  init_stores(spec, 45, theta, phi);
  Rng rng = Rng::derive(45, 64);
  const Tensor x_seq = ts::random_tensor(9, spec.model.n_x, rng, -1.0, 1.0);
  const train::InferResult a =
      train::infer(spec.model, spec.potential, spec.flow_cfg, theta, phi, x_seq);
  const train::InferResult b =
      train::infer(spec.model, spec.potential, spec.flow_cfg, theta, phi, x_seq);
  CHECK(ts::bitwise_equal(a.y_pred, b.y_pred));
  CHECK(ts::bitwise_equal(a.z_traj, b.z_traj));
  CHECK(ts::bitwise_equal(a.h_traj, b.h_traj));
}

TEST_CASE("checkpoints round-trip bitwise and preserve inference") {
  const obj::ModelSpec spec = tiny_spec();
  nn::ParamStore theta, phi;
  init_stores(spec, 46, theta, phi);

  ckpt::Checkpoint cp;
  cp.seed = 99;
  cp.config_text = "[train]\nseed = 99\n";
  cp.norm.x_mean = {0.1, 0.2, 0.3};
  cp.norm.x_std = {1.0, 2.0, 0.5};
  cp.norm.y_mean = {-0.4, 0.6};
  cp.norm.y_std = {0.9, 1.1};
  cp.theta = theta;
  cp.phi = phi;

  const std::string bytes = cp.serialize();
  const ckpt::Checkpoint back = ckpt::Checkpoint::deserialize(bytes);
  CHECK(back.serialize() == bytes);
  CHECK(back.seed == cp.seed);
  CHECK(back.config_text == cp.config_text);
  CHECK(back.norm.x_mean == cp.norm.x_mean);
  CHECK(back.norm.y_std == cp.norm.y_std);
  REQUIRE(back.theta.items().size() == theta.items().size());
  for (std::size_t i = 0; i < theta.items().size(); ++i) {
    CHECK(back.theta.items()[i].first == theta.items()[i].first);
    CHECK(ts::bitwise_equal(back.theta.items()[i].second, theta.items()[i].second));
  }

  Rng rng = Rng::derive(46, 65);
  const Tensor x_seq = ts::random_tensor(6, spec.model.n_x, rng, -1.0, 1.0);
  const train::InferResult direct =
      train::infer(spec.model, spec.potential, spec.flow_cfg, theta, phi, x_seq);
  const train::InferResult loaded =
      train::infer(spec.model, spec.potential, spec.flow_cfg, back.theta, back.phi, x_seq);
  CHECK(ts::bitwise_equal(direct.y_pred, loaded.y_pred));
  CHECK(ts::bitwise_equal(direct.z_traj, loaded.z_traj));
  CHECK(ts::bitwise_equal(direct.h_traj, loaded.h_traj));
}
