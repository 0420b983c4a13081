#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "pfb/objective.hpp"
#include "straightline.hpp"
#include "test_support.hpp"

using namespace pfb;

namespace {

obj::ModelSpec toy_spec() {
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
  Rng tr = Rng::derive(seed, 50);
  Rng pr = Rng::derive(seed, 51);
  gen::init_params(spec.model, theta, tr);
  flow::init_params(spec.potential, phi, pr);
}

obj::WindowData random_window(const obj::ModelSpec& spec, int length, std::uint64_t seed,
                              double mask_value) {
  Rng rng = Rng::derive(seed, 52);
  obj::WindowData wd;
  for (int n = 0; n < length; ++n) {
    wd.x_rows.push_back(ts::random_tensor(1, spec.model.n_x, rng));
    wd.y_rows.push_back(ts::random_tensor(1, spec.model.n_y, rng));
    wd.eps.push_back(ts::gaussian_tensor(spec.particles, spec.model.n_z, rng));
    wd.mask.push_back(Tensor::full(1, 1, mask_value));
  }
  return wd;
}

struct SlStep {
  Tensor z, h;          // post-flow ensemble
  double recon, label, flow;
};

// full straight-line duplicate of one sequential update, sharing nothing with
// the graph engine
SlStep sl_step(const obj::ModelSpec& spec, const nn::ParamStore& theta,
               const nn::ParamStore& phi, const Tensor& z_prev, const Tensor& h_prev,
               const Tensor& x_row, const Tensor& y_row, const Tensor& eps, double mask) {
  const auto& mc = spec.model;
  const auto& pc = spec.potential;
  const int particles = z_prev.rows();

  const Tensor embedded = sl::fcnn(theta, gen::kEncPrefix, mc.encoder_spec(), z_prev);
  const Tensor h = sl::gru(theta, gen::kGruPrefix, embedded, h_prev);
  const sl::HeadOut prior = sl::gaussian_head(theta, gen::kPriorPrefix, mc.prior_spec(), h);
  Tensor z(particles, mc.n_z);
  for (int r = 0; r < particles; ++r) {
    for (int c = 0; c < mc.n_z; ++c) {
      z.at(r, c) = prior.mu.at(r, c) + prior.sigma.at(r, c) * eps.at(r, c);
    }
  }

  SlStep out;
  out.label = -mask * sl::mean(sl::log_density(prior.mu, prior.sigma, y_row));

  auto decode_at = [&](const Tensor& zc, const Tensor& hc) {
    const Tensor emb = sl::fcnn(theta, gen::kEncPrefix, mc.encoder_spec(), zc);
    Tensor cat(particles, mc.latent_embed + mc.n_h);
    for (int r = 0; r < particles; ++r) {
      for (int c = 0; c < mc.latent_embed; ++c) cat.at(r, c) = emb.at(r, c);
      for (int c = 0; c < mc.n_h; ++c) cat.at(r, mc.latent_embed + c) = hc.at(r, c);
    }
    return sl::gaussian_head(theta, gen::kDecoderPrefix, mc.decoder_spec(), cat);
  };

  const sl::HeadOut dec_pre = decode_at(z, h);
  const std::vector<double> gamma = sl::nis(x_row, dec_pre.mu, dec_pre.sigma);

  const Tensor enc_x = sl::fcnn(phi, flow::kEncXPrefix, pc.encoder_spec(), x_row);
  auto features_at = [&](const Tensor& state) {
    Tensor f(particles, pc.measurement_embed + pc.n_state);
    for (int r = 0; r < particles; ++r) {
      for (int c = 0; c < pc.measurement_embed; ++c) f.at(r, c) = enc_x.at(0, c);
      for (int c = 0; c < pc.n_state; ++c) f.at(r, pc.measurement_embed + c) = state.at(r, c);
    }
    return f;
  };

  Tensor state(particles, pc.n_state);
  for (int r = 0; r < particles; ++r) {
    for (int c = 0; c < mc.n_z; ++c) state.at(r, c) = z.at(r, c);
    for (int c = 0; c < mc.n_h; ++c) state.at(r, mc.n_z + c) = h.at(r, c);
  }

  // flow objective at the pre-flow ensemble
  {
    const sl::PotentialOut pot = sl::potential_with_grad(phi, flow::kPotentialPrefix,
                                                         pc.potential_spec(), features_at(state));
    double energy = 0.0;
    for (int r = 0; r < particles; ++r) {
      for (int c = 0; c < pc.n_state; ++c) {
        const double gv = pot.grad.at(r, pc.measurement_embed + c);
        energy += gv * gv;
      }
    }
    energy /= particles;
    out.flow = 0.5 * energy + 0.5 * sl::covariance(pot.value, gamma);
  }

  // explicit Euler transport, field re-evaluated each sub-step
  for (int k = 0; k < spec.flow_cfg.num_steps; ++k) {
    const sl::PotentialOut pot = sl::potential_with_grad(phi, flow::kPotentialPrefix,
                                                         pc.potential_spec(), features_at(state));
    for (int r = 0; r < particles; ++r) {
      for (int c = 0; c < pc.n_state; ++c) {
        state.at(r, c) += spec.flow_cfg.step_size * pot.grad.at(r, pc.measurement_embed + c);
      }
    }
  }

  out.z = Tensor(particles, mc.n_z);
  out.h = Tensor(particles, mc.n_h);
  for (int r = 0; r < particles; ++r) {
    for (int c = 0; c < mc.n_z; ++c) out.z.at(r, c) = state.at(r, c);
    for (int c = 0; c < mc.n_h; ++c) out.h.at(r, c) = state.at(r, mc.n_z + c);
  }

  const sl::HeadOut dec_post = decode_at(out.z, out.h);
  out.recon = -sl::mean(sl::log_density(dec_post.mu, dec_post.sigma, x_row));
  return out;
}

}  // namespace

TEST_CASE("target steps contribute no label loss") {
  const obj::ModelSpec spec = toy_spec();
  nn::ParamStore theta, phi;
  init_stores(spec, 21, theta, phi);
  obj::WindowGraph wg = obj::build_window_graph(spec, 2);
  const obj::WindowData wd = random_window(spec, 2, 21, 0.0);

  Evaluator ev(wg.graph);
  ev.forward(obj::window_bindings(wg, theta, phi, wd));
  for (const auto& st : wg.steps) CHECK(ev.value(st.label).at(0, 0) == 0.0);
}

TEST_CASE("zero flow parameters leave the ensemble and reconstruction untouched") {
  const obj::ModelSpec spec = toy_spec();
  nn::ParamStore theta, phi;
  init_stores(spec, 22, theta, phi);
  phi = ts::zeroed(std::move(phi));

  obj::WindowGraph wg = obj::build_window_graph(spec, 2);
  const obj::WindowData wd = random_window(spec, 2, 22, 1.0);
  Evaluator ev(wg.graph);
  ev.forward(obj::window_bindings(wg, theta, phi, wd));

  for (std::size_t n = 0; n < wg.steps.size(); ++n) {
    const auto& st = wg.steps[n];
    const Tensor& pre = ev.value(st.state_pre);
    const Tensor& z_post = ev.value(st.z_post);
    const Tensor& h_post = ev.value(st.h_post);
    for (int r = 0; r < wg.particles; ++r) {
      for (int c = 0; c < spec.model.n_z; ++c) CHECK(z_post.at(r, c) == pre.at(r, c));
      for (int c = 0; c < spec.model.n_h; ++c)
        CHECK(h_post.at(r, c) == pre.at(r, spec.model.n_z + c));
    }
    // identity transform: reconstruction is the pre-flow reconstruction
    const sl::HeadOut dec = [&] {
      const Tensor emb = sl::fcnn(theta, gen::kEncPrefix, spec.model.encoder_spec(),
                                  [&] {
                                    Tensor zc(wg.particles, spec.model.n_z);
                                    for (int r = 0; r < wg.particles; ++r)
                                      for (int c = 0; c < spec.model.n_z; ++c)
                                        zc.at(r, c) = pre.at(r, c);
                                    return zc;
                                  }());
      Tensor cat(wg.particles, spec.model.latent_embed + spec.model.n_h);
      for (int r = 0; r < wg.particles; ++r) {
        for (int c = 0; c < spec.model.latent_embed; ++c) cat.at(r, c) = emb.at(r, c);
        for (int c = 0; c < spec.model.n_h; ++c)
          cat.at(r, spec.model.latent_embed + c) = pre.at(r, spec.model.n_z + c);
      }
      return sl::gaussian_head(theta, gen::kDecoderPrefix, spec.model.decoder_spec(), cat);
    }();
    const double want = -sl::mean(sl::log_density(dec.mu, dec.sigma, wd.x_rows[n]));
    CHECK(ev.value(st.recon).at(0, 0) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("three-step window matches the hand-unrolled duplicate to 1e-10") {
  const obj::ModelSpec spec = toy_spec();
  nn::ParamStore theta, phi;
  init_stores(spec, 23, theta, phi);
  const int length = 3;
  obj::WindowGraph wg = obj::build_window_graph(spec, length);
  const obj::WindowData wd = random_window(spec, length, 23, 1.0);
  const obj::WindowLoss got = obj::window_loss(wg, theta, phi, wd);

  Tensor z = Tensor::zeros(spec.particles, spec.model.n_z);
  Tensor h = Tensor::zeros(spec.particles, spec.model.n_h);
  double loss_theta = 0.0, loss_phi = 0.0;
  for (int n = 0; n < length; ++n) {
    const SlStep st = sl_step(spec, theta, phi, z, h, wd.x_rows[static_cast<std::size_t>(n)],
                              wd.y_rows[static_cast<std::size_t>(n)],
                              wd.eps[static_cast<std::size_t>(n)], 1.0);
    loss_theta += st.recon + st.label;
    loss_phi += st.flow;
    z = st.z;
    h = st.h;
  }
  CHECK(std::abs(got.loss_theta - loss_theta) < 1e-10);
  CHECK(std::abs(got.loss_phi - loss_phi) < 1e-10);
}

TEST_CASE("a window of one step equals the standalone step loss") {
  const obj::ModelSpec spec = toy_spec();
  nn::ParamStore theta, phi;
  init_stores(spec, 24, theta, phi);
  obj::WindowGraph wg = obj::build_window_graph(spec, 1);
  const obj::WindowData wd = random_window(spec, 1, 24, 1.0);
  const obj::WindowLoss got = obj::window_loss(wg, theta, phi, wd);

  obj::StepLossGraph sl_graph = obj::build_step_loss(spec);
  const Tensor z0 = Tensor::zeros(spec.particles, spec.model.n_z);
  const Tensor h0 = Tensor::zeros(spec.particles, spec.model.n_h);
  Evaluator::Bindings b;
  nn::bind_params(sl_graph.graph, theta, b);
  nn::bind_params(sl_graph.graph, phi, b);
  b.emplace_back(sl_graph.leaves.z_prev, &z0);
  b.emplace_back(sl_graph.leaves.h_prev, &h0);
  b.emplace_back(sl_graph.leaves.x, &wd.x_rows[0]);
  b.emplace_back(sl_graph.leaves.y, &wd.y_rows[0]);
  b.emplace_back(sl_graph.leaves.eps, &wd.eps[0]);
  b.emplace_back(sl_graph.leaves.mask, &wd.mask[0]);
  Evaluator ev(sl_graph.graph);
  ev.forward(b);
  const double step_theta =
      ev.value(sl_graph.outs.recon).at(0, 0) + ev.value(sl_graph.outs.label).at(0, 0);
  const double step_phi = ev.value(sl_graph.outs.flow).at(0, 0);
  CHECK(got.loss_theta == doctest::Approx(step_theta).epsilon(1e-14));
  CHECK(got.loss_phi == doctest::Approx(step_phi).epsilon(1e-14));
}

TEST_CASE("source and target masks differ only in the label component") {
  const obj::ModelSpec spec = toy_spec();
  nn::ParamStore theta, phi;
  init_stores(spec, 25, theta, phi);
  const int length = 3;
  obj::WindowGraph wg = obj::build_window_graph(spec, length);
  const obj::WindowData src = random_window(spec, length, 25, 1.0);
  obj::WindowData tgt = src;
  for (auto& m : tgt.mask) m.fill(0.0);

  Evaluator ev(wg.graph);
  ev.forward(obj::window_bindings(wg, theta, phi, src));
  std::vector<double> recon_src, label_src, flow_src;
  for (const auto& st : wg.steps) {
    recon_src.push_back(ev.value(st.recon).at(0, 0));
    label_src.push_back(ev.value(st.label).at(0, 0));
    flow_src.push_back(ev.value(st.flow).at(0, 0));
  }
  const double theta_src = ev.value(wg.loss_theta).at(0, 0);
  const double phi_src = ev.value(wg.loss_phi).at(0, 0);

  ev.forward(obj::window_bindings(wg, theta, phi, tgt));
  double label_total = 0.0;
  for (std::size_t n = 0; n < wg.steps.size(); ++n) {
    CHECK(ev.value(wg.steps[n].recon).at(0, 0) == recon_src[n]);
    CHECK(ev.value(wg.steps[n].flow).at(0, 0) == flow_src[n]);
    CHECK(ev.value(wg.steps[n].label).at(0, 0) == 0.0);
    label_total += label_src[n];
  }
  CHECK(ev.value(wg.loss_phi).at(0, 0) == phi_src);
  CHECK(ev.value(wg.loss_theta).at(0, 0) ==
        doctest::Approx(theta_src - label_total).epsilon(1e-12));
}

TEST_CASE("the flow loss reaches no generative parameter and vice versa") {
  const obj::ModelSpec spec = toy_spec();
  nn::ParamStore theta, phi;
  init_stores(spec, 26, theta, phi);
  obj::WindowGraph wg = obj::build_window_graph(spec, 2);
  const obj::WindowData wd = random_window(spec, 2, 26, 1.0);

  Evaluator ev(wg.graph);
  ev.forward(obj::window_bindings(wg, theta, phi, wd));
  ev.backward(wg.loss_phi);
  for (const auto& [name, t] : theta.items()) {
    CHECK_FALSE(ev.has_adjoint(wg.graph.find_leaf(name)));
  }
  double phi_mass = 0.0;
  for (const auto& [name, t] : phi.items()) {
    for (double v : ev.adjoint_or_zero(wg.graph.find_leaf(name)).flat()) phi_mass += std::abs(v);
  }
  CHECK(phi_mass > 0.0);

  ev.forward(obj::window_bindings(wg, theta, phi, wd));
  ev.backward(wg.loss_theta);
  double theta_mass = 0.0;
  for (const auto& [name, t] : theta.items()) {
    for (double v : ev.adjoint_or_zero(wg.graph.find_leaf(name)).flat()) theta_mass += std::abs(v);
  }
  CHECK(theta_mass > 0.0);
}
