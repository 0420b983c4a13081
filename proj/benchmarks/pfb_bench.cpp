#include <benchmark/benchmark.h>

#include "pfb/objective.hpp"

using namespace pfb;

namespace {

Tensor random_tensor(int rows, int cols, Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.flat()) v = rng.uniform(-1.0, 1.0);
  return t;
}

obj::ModelSpec bench_spec() {
  obj::ModelSpec s;
  s.model.n_x = 3;
  s.model.n_y = 2;
  s.model.n_z = 2;
  s.model.n_h = 32;
  s.model.latent_embed = 16;
  s.model.encoder_hidden = {32};
  s.model.prior_hidden = {32};
  s.model.decoder_hidden = {32};
  s.potential.n_x = 3;
  s.potential.n_state = 34;
  s.potential.measurement_embed = 16;
  s.potential.encoder_hidden = {16};
  s.potential.potential_hidden = {32, 16};
  s.flow_cfg = {1, 1.0};
  s.particles = 8;
  return s;
}

void bm_matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng = Rng::derive(1, 0);
  const Tensor a = random_tensor(n, n, rng);
  const Tensor b = random_tensor(n, n, rng);
  Tensor out;
  for (auto _ : state) {
    tensor_matmul(a, false, b, false, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n) * n * n);
}
BENCHMARK(bm_matmul)->Arg(32)->Arg(128);

void bm_fcnn_forward(benchmark::State& state) {
  Rng rng = Rng::derive(1, 1);
  nn::FcnnSpec spec;
  spec.widths = {32, 64, 64, 16};
  nn::ParamStore params;
  nn::fcnn_init(spec, "net", params, rng);
  Graph g;
  const NodeId in = g.leaf("in", 8, 32);
  const NodeId out = nn::fcnn_apply(g, spec, "net", in);
  g.mark_output("out", out);
  const Tensor input = random_tensor(8, 32, rng);
  Evaluator::Bindings b;
  nn::bind_params(g, params, b);
  b.emplace_back(in, &input);
  Evaluator ev(g);
  for (auto _ : state) {
    ev.forward(b);
    benchmark::DoNotOptimize(ev.value(out).data());
  }
}
BENCHMARK(bm_fcnn_forward);

void bm_gru_step(benchmark::State& state) {
  Rng rng = Rng::derive(1, 2);
  nn::GruSpec spec{16, 32};
  nn::ParamStore params;
  nn::gru_init(spec, "cell", params, rng);
  Graph g;
  const NodeId x = g.leaf("x", 8, 16);
  const NodeId h = g.leaf("h", 8, 32);
  const NodeId out = nn::gru_step(g, spec, "cell", x, h);
  g.mark_output("out", out);
  const Tensor xv = random_tensor(8, 16, rng);
  const Tensor hv = random_tensor(8, 32, rng);
  Evaluator::Bindings b;
  nn::bind_params(g, params, b);
  b.emplace_back(x, &xv);
  b.emplace_back(h, &hv);
  Evaluator ev(g);
  for (auto _ : state) {
    ev.forward(b);
    benchmark::DoNotOptimize(ev.value(out).data());
  }
}
BENCHMARK(bm_gru_step);

void bm_flow_objective(benchmark::State& state) {
  const obj::ModelSpec spec = bench_spec();
  Rng rng = Rng::derive(1, 3);
  nn::ParamStore phi;
  flow::init_params(spec.potential, phi, rng);
  Graph g;
  const NodeId x = g.leaf("x", 1, spec.potential.n_x);
  const NodeId st = g.leaf("state", spec.particles, spec.potential.n_state);
  const NodeId gamma = g.leaf("gamma", spec.particles, 1);
  const NodeId enc = flow::encode_measurement(g, spec.potential, x);
  const NodeId loss = flow::flow_objective(g, spec.potential, enc, st, gamma);
  g.mark_output("loss", loss);
  const Tensor xv = random_tensor(1, spec.potential.n_x, rng);
  const Tensor sv = random_tensor(spec.particles, spec.potential.n_state, rng);
  const Tensor gv = random_tensor(spec.particles, 1, rng);
  Evaluator::Bindings b;
  nn::bind_params(g, phi, b);
  b.emplace_back(x, &xv);
  b.emplace_back(st, &sv);
  b.emplace_back(gamma, &gv);
  Evaluator ev(g);
  for (auto _ : state) {
    ev.forward(b);
    ev.backward(loss);
    benchmark::DoNotOptimize(ev.value(loss).data());
  }
}
BENCHMARK(bm_flow_objective);

void bm_window_forward_backward(benchmark::State& state) {
  const int length = static_cast<int>(state.range(0));
  const obj::ModelSpec spec = bench_spec();
  Rng rng = Rng::derive(1, 4);
  nn::ParamStore theta, phi;
  gen::init_params(spec.model, theta, rng);
  flow::init_params(spec.potential, phi, rng);
  obj::WindowGraph wg = obj::build_window_graph(spec, length);
  obj::WindowData wd;
  for (int n = 0; n < length; ++n) {
    wd.x_rows.push_back(random_tensor(1, spec.model.n_x, rng));
    wd.y_rows.push_back(random_tensor(1, spec.model.n_y, rng));
    wd.eps.push_back(random_tensor(spec.particles, spec.model.n_z, rng));
    wd.mask.push_back(Tensor::full(1, 1, 1.0));
  }
  const Evaluator::Bindings b = obj::window_bindings(wg, theta, phi, wd);
  Evaluator ev(wg.graph);
  for (auto _ : state) {
    ev.forward(b);
    ev.backward(wg.loss_theta);
    ev.backward(wg.loss_phi);
    benchmark::DoNotOptimize(ev.value(wg.loss_theta).data());
  }
}
BENCHMARK(bm_window_forward_backward)->Arg(25)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
