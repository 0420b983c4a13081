#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "pfb/errors.hpp"
#include "pfb/gradsuite.hpp"
#include "pfb/graph.hpp"
#include "pfb/nn.hpp"
#include "pfb/oracle.hpp"
#include "straightline.hpp"
#include "test_support.hpp"

using namespace pfb;

TEST_CASE("forward evaluates x*x at 3 to 9") {
  Graph g;
  const NodeId x = g.leaf("x", 1, 1);
  const NodeId y = g.mul(x, x);
  const Tensor xv = Tensor::scalar(3.0);
  Evaluator ev(g);
  ev.forward({{x, &xv}});
  CHECK(ev.value(y).at(0, 0) == 9.0);
}

TEST_CASE("leaky relu at -2 with slope 0.01 is -0.02") {
  Graph g;
  const NodeId x = g.leaf("x", 1, 1);
  const NodeId y = g.leaky_relu(x, 0.01);
  const Tensor xv = Tensor::scalar(-2.0);
  Evaluator ev(g);
  ev.forward({{x, &xv}});
  CHECK(ev.value(y).at(0, 0) == doctest::Approx(-0.02).epsilon(1e-15));
}

TEST_CASE("random 3-layer stack matches a straight-line duplicate to 1e-12") {
  Rng rng = Rng::derive(42, 0);
  nn::FcnnSpec spec;
  spec.widths = {4, 6, 5, 3};
  nn::ParamStore params;
  nn::fcnn_init(spec, "net", params, rng);

  Graph g;
  const NodeId in = g.leaf("in", 2, 4);
  const NodeId out = nn::fcnn_apply(g, spec, "net", in);
  const Tensor input = ts::random_tensor(2, 4, rng);

  Evaluator::Bindings b;
  nn::bind_params(g, params, b);
  b.emplace_back(in, &input);
  Evaluator ev(g);
  ev.forward(b);

  const Tensor expected = sl::fcnn(params, "net", spec, input);
  CHECK(ev.value(out).max_abs_diff(expected) < 1e-12);
}

TEST_CASE("backward of x^2 at 3 gives 6") {
  Graph g;
  const NodeId x = g.leaf("x", 1, 1);
  const NodeId y = g.square(x);
  const Tensor xv = Tensor::scalar(3.0);
  Evaluator ev(g);
  ev.forward({{x, &xv}});
  ev.backward(y);
  CHECK(ev.adjoint(x).at(0, 0) == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("backward of sum(sigmoid(W x)) matches finite differences") {
  Rng rng = Rng::derive(42, 1);
  Graph g;
  const NodeId w = g.leaf("w", 4, 3);
  const NodeId x = g.leaf("x", 3, 1);
  const NodeId y = g.sum(g.sigmoid(g.matmul(w, x)));
  Tensor wv = ts::random_tensor(4, 3, rng);
  Tensor xv = ts::random_tensor(3, 1, rng);

  Evaluator ev(g);
  ev.forward({{w, &wv}, {x, &xv}});
  ev.backward(y);
  std::vector<double> analytic;
  for (double v : ev.adjoint(w).flat()) analytic.push_back(v);
  for (double v : ev.adjoint(x).flat()) analytic.push_back(v);

  std::vector<double> point;
  point.insert(point.end(), wv.flat().begin(), wv.flat().end());
  point.insert(point.end(), xv.flat().begin(), xv.flat().end());
  auto f = [&](std::span<const double> p) {
    Tensor wp(4, 3, std::vector<double>(p.begin(), p.begin() + 12));
    Tensor xp(3, 1, std::vector<double>(p.begin() + 12, p.end()));
    Evaluator e2(g);
    e2.forward({{w, &wp}, {x, &xp}});
    return e2.value(y).at(0, 0);
  };
  const std::vector<double> fd = oracle::finite_diff_grad(f, point, 1e-5);
  CHECK(ts::rel_err(analytic, fd) < 1e-6);
}

TEST_CASE("constant root leaves every gradient at zero") {
  Graph g;
  const NodeId x = g.leaf("x", 2, 2);
  const NodeId y = g.sum(g.constant(Tensor::full(3, 1, 1.5)));
  const Tensor xv = Tensor::full(2, 2, 7.0);
  Evaluator ev(g);
  ev.forward({{x, &xv}});
  ev.backward(y);
  CHECK_FALSE(ev.has_adjoint(x));
  const Tensor zero = ev.adjoint_or_zero(x);
  for (double v : zero.flat()) CHECK(v == 0.0);
}

TEST_CASE("appended gradient of x^2 evaluates to 2x and differentiates again to 2") {
  Graph g;
  const NodeId x = g.leaf("x", 1, 1);
  const NodeId y = g.square(x);
  const NodeId wrt[] = {x};
  const NodeId dy = append_gradient(g, y, wrt)[0];
  const NodeId d2y = append_gradient(g, dy, wrt)[0];

  const Tensor xv = Tensor::scalar(1.75);
  Evaluator ev(g);
  ev.forward({{x, &xv}});
  CHECK(ev.value(dy).at(0, 0) == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(ev.value(d2y).at(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("symbolic gradient of a leaky stack matches numeric backward on 100 points") {
  Rng rng = Rng::derive(42, 2);
  nn::FcnnSpec spec;
  spec.widths = {3, 8, 6, 1};
  nn::ParamStore params;
  nn::fcnn_init(spec, "net", params, rng);

  Graph g;
  const NodeId in = g.leaf("in", 1, 3);
  const NodeId out = g.sum(nn::fcnn_apply(g, spec, "net", in));
  const NodeId wrt[] = {in};
  const NodeId gnode = append_gradient(g, out, wrt)[0];

  Tensor input(1, 3);
  Evaluator::Bindings b;
  nn::bind_params(g, params, b);
  b.emplace_back(in, &input);
  Evaluator ev(g);
  for (int trial = 0; trial < 100; ++trial) {
    for (double& v : input.flat()) v = rng.uniform(-2.0, 2.0);
    ev.forward(b);
    ev.backward(out);
    CHECK(ev.value(gnode).max_abs_diff(ev.adjoint(in)) < 1e-12);
  }
}

TEST_CASE("grad_graph wrapper reproduces backward through named outputs") {
  Rng rng = Rng::derive(42, 3);
  Graph g;
  const NodeId a = g.leaf("a", 2, 3);
  const NodeId bnode = g.leaf("b", 2, 3);
  const NodeId root = g.mean(g.mul(g.tanh(a), g.sigmoid(bnode)));
  const NodeId wrt[] = {a, bnode};
  Graph dg = grad_graph(g, root, wrt);

  const Tensor av = ts::random_tensor(2, 3, rng);
  const Tensor bv = ts::random_tensor(2, 3, rng);
  Evaluator ev(g);
  ev.forward({{a, &av}, {bnode, &bv}});
  ev.backward(root);

  Evaluator dev(dg);
  dev.forward({{dg.find_leaf("a"), &av}, {dg.find_leaf("b"), &bv}});
  CHECK(dev.value(dg.output("grad:a")).max_abs_diff(ev.adjoint(a)) < 1e-12);
  CHECK(dev.value(dg.output("grad:b")).max_abs_diff(ev.adjoint(bnode)) < 1e-12);
}

TEST_CASE("parameter gradient of the squared field passes finite differences") {
  const grad::CheckResult r = grad::run_grad_of_grad_check(7);
  INFO(r.name, " rel_err=", r.rel_err);
  CHECK(r.rel_err < r.tolerance);
  CHECK(r.pass);
}

TEST_CASE("backward is linear in the root") {
  Rng rng = Rng::derive(42, 4);
  Graph g;
  const NodeId x = g.leaf("x", 3, 2);
  const NodeId f = g.mean(g.square(g.tanh(x)));
  const NodeId h = g.mean(g.exp(g.scale(x, 0.3)));
  const double ca = 1.7, cb = -2.3;
  const NodeId combo = g.add(g.scale(f, ca), g.scale(h, cb));

  const Tensor xv = ts::random_tensor(3, 2, rng);
  Evaluator ev(g);
  ev.forward({{x, &xv}});
  ev.backward(f);
  const Tensor gf = ev.adjoint(x);
  ev.forward({{x, &xv}});
  ev.backward(h);
  const Tensor gh = ev.adjoint(x);
  ev.forward({{x, &xv}});
  ev.backward(combo);
  const Tensor gc = ev.adjoint(x);

  for (std::size_t i = 0; i < gc.size(); ++i) {
    CHECK(gc.flat()[i] == doctest::Approx(ca * gf.flat()[i] + cb * gh.flat()[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward replay is bitwise deterministic") {
  Rng rng = Rng::derive(42, 5);
  Graph g;
  const NodeId x = g.leaf("x", 4, 4);
  const NodeId y = g.mean(g.sigmoid(g.matmul(g.tanh(x), x, false, true)));
  const Tensor xv = ts::random_tensor(4, 4, rng);

  Evaluator ev1(g);
  ev1.forward({{x, &xv}});
  Evaluator ev2(g);
  ev2.forward({{x, &xv}});
  CHECK(ev1.value(y).at(0, 0) == ev2.value(y).at(0, 0));

  ev1.backward(y);
  ev2.backward(y);
  CHECK(ts::bitwise_equal(ev1.adjoint(x), ev2.adjoint(x)));
}

TEST_CASE("shape mismatches fail at append time naming the operation") {
  Graph g;
  const NodeId a = g.leaf("a", 2, 3);
  const NodeId b = g.leaf("b", 3, 2);
  CHECK_THROWS_AS(g.add(a, b), ShapeError);
  CHECK_THROWS_AS(g.mul(a, b), ShapeError);
  CHECK_THROWS_AS(g.matmul(a, a), ShapeError);
}

TEST_CASE("backward rejects a non-scalar root") {
  Graph g;
  const NodeId x = g.leaf("x", 2, 2);
  const NodeId y = g.tanh(x);
  const Tensor xv = Tensor::full(2, 2, 0.5);
  Evaluator ev(g);
  ev.forward({{x, &xv}});
  CHECK_THROWS_AS(ev.backward(y), ValidationError);
}

TEST_CASE("stop gradient passes values and blocks adjoints") {
  Graph g;
  const NodeId x = g.leaf("x", 1, 1);
  const NodeId y = g.square(g.stop_gradient(x));
  const Tensor xv = Tensor::scalar(4.0);
  Evaluator ev(g);
  ev.forward({{x, &xv}});
  CHECK(ev.value(y).at(0, 0) == 16.0);
  ev.backward(y);
  CHECK_FALSE(ev.has_adjoint(x));
}
