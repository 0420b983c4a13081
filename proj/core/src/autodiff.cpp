#include <cmath>
#include <span>

#include "pfb/graph.hpp"

namespace pfb {

namespace {

void unary_map(const Tensor& x, Tensor& out, double (*f)(double)) {
  if (!out.same_shape(x)) out = Tensor(x.rows(), x.cols());
  const double* px = x.data();
  double* po = out.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) po[i] = f(px[i]);
}

}  // namespace

void Evaluator::forward(const Bindings& bindings) {
  const Graph& g = *g_;
  const std::size_t n = static_cast<std::size_t>(g.size());
  vals_.resize(n);
  if (evaluated_.size() < n) evaluated_.assign(n, 0);

  bound_.assign(n, nullptr);
  std::vector<const Tensor*>& bound = bound_;
  for (const auto& [id, t] : bindings) {
    if (id < 0 || id >= g.size())
      throw ValidationError("forward: binding for node id " + std::to_string(id) +
                            " out of range");
    const Node& nd = g.at(id);
    if (nd.op != Op::kLeaf)
      throw ValidationError("forward: node " + std::to_string(id) + " (" + op_name(nd.op) +
                            ") is not a leaf");
    if (t == nullptr) throw ValidationError("forward: null tensor bound to leaf '" + nd.name + "'");
    if (t->rows() != nd.rows || t->cols() != nd.cols)
      throw ShapeError("forward: leaf '" + nd.name + "' declared " + std::to_string(nd.rows) +
                       "x" + std::to_string(nd.cols) + " but bound " + std::to_string(t->rows()) +
                       "x" + std::to_string(t->cols()));
    bound[static_cast<std::size_t>(id)] = t;
  }

  for (NodeId i = 0; i < g.size(); ++i) {
    const Node& nd = g.at(i);
    Tensor& out = vals_[static_cast<std::size_t>(i)];
    switch (nd.op) {
      case Op::kLeaf: {
        const Tensor* t = bound[static_cast<std::size_t>(i)];
        if (t == nullptr) throw ValidationError("forward: leaf '" + nd.name + "' is unbound");
        out = *t;
        break;
      }
      case Op::kConstant:
        if (!evaluated_[static_cast<std::size_t>(i)]) out = nd.value;
        break;
      case Op::kAdd:
        tensor_add(vals_[nd.a], vals_[nd.b], out);
        break;
      case Op::kMul:
        tensor_mul(vals_[nd.a], vals_[nd.b], out);
        break;
      case Op::kMatMul:
        tensor_matmul(vals_[nd.a], nd.ta, vals_[nd.b], nd.tb, out);
        break;
      case Op::kLeakyRelu: {
        const Tensor& x = vals_[nd.a];
        if (!out.same_shape(x)) out = Tensor(x.rows(), x.cols());
        const double s = nd.attr;
        const double* px = x.data();
        double* po = out.data();
        for (std::size_t k = 0; k < x.size(); ++k) po[k] = px[k] >= 0.0 ? px[k] : s * px[k];
        break;
      }
      case Op::kExp:
        unary_map(vals_[nd.a], out, [](double v) { return std::exp(v); });
        break;
      case Op::kLog:
        unary_map(vals_[nd.a], out, [](double v) { return std::log(v); });
        break;
      case Op::kSigmoid:
        unary_map(vals_[nd.a], out, [](double v) {
          return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        });
        break;
      case Op::kTanh:
        unary_map(vals_[nd.a], out, [](double v) { return std::tanh(v); });
        break;
      case Op::kSquare:
        unary_map(vals_[nd.a], out, [](double v) { return v * v; });
        break;
      case Op::kSum:
      case Op::kMean: {
        const Tensor& x = vals_[nd.a];
        double acc = 0.0;
        for (double v : x.flat()) acc += v;
        if (nd.op == Op::kMean) acc /= static_cast<double>(x.size());
        if (!(out.rows() == 1 && out.cols() == 1)) out = Tensor(1, 1);
        out.data()[0] = acc;
        break;
      }
      case Op::kConcat: {
        const Tensor& a = vals_[nd.a];
        const Tensor& b = vals_[nd.b];
        if (!(out.rows() == nd.rows && out.cols() == nd.cols)) out = Tensor(nd.rows, nd.cols);
        for (int r = 0; r < nd.rows; ++r) {
          double* ro = out.data() + static_cast<std::size_t>(r) * nd.cols;
          const double* ra = a.data() + static_cast<std::size_t>(r) * a.cols();
          const double* rb = b.data() + static_cast<std::size_t>(r) * b.cols();
          for (int c = 0; c < a.cols(); ++c) ro[c] = ra[c];
          for (int c = 0; c < b.cols(); ++c) ro[a.cols() + c] = rb[c];
        }
        break;
      }
      case Op::kSlice: {
        const Tensor& x = vals_[nd.a];
        if (!(out.rows() == nd.rows && out.cols() == nd.cols)) out = Tensor(nd.rows, nd.cols);
        for (int r = 0; r < nd.rows; ++r) {
          const double* rx = x.data() + static_cast<std::size_t>(r) * x.cols() + nd.i0;
          double* ro = out.data() + static_cast<std::size_t>(r) * nd.cols;
          for (int c = 0; c < nd.cols; ++c) ro[c] = rx[c];
        }
        break;
      }
      case Op::kWherePos: {
        const Tensor& x = vals_[nd.a];
        const Tensor& a = vals_[nd.b];
        const Tensor& b = vals_[nd.c];
        if (!out.same_shape(x)) out = Tensor(x.rows(), x.cols());
        const double* px = x.data();
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        for (std::size_t k = 0; k < x.size(); ++k) po[k] = px[k] >= 0.0 ? pa[k] : pb[k];
        break;
      }
      case Op::kScale: {
        const Tensor& x = vals_[nd.a];
        if (!out.same_shape(x)) out = Tensor(x.rows(), x.cols());
        const double s = nd.attr;
        const double* px = x.data();
        double* po = out.data();
        for (std::size_t k = 0; k < x.size(); ++k) po[k] = s * px[k];
        break;
      }
      case Op::kAddScalar: {
        const Tensor& x = vals_[nd.a];
        if (!out.same_shape(x)) out = Tensor(x.rows(), x.cols());
        const double s = nd.attr;
        const double* px = x.data();
        double* po = out.data();
        for (std::size_t k = 0; k < x.size(); ++k) po[k] = px[k] + s;
        break;
      }
      case Op::kBroadcastScalar: {
        if (!(out.rows() == nd.rows && out.cols() == nd.cols)) out = Tensor(nd.rows, nd.cols);
        out.fill(vals_[nd.a].data()[0]);
        break;
      }
      case Op::kStopGradient:
        out = vals_[nd.a];
        break;
    }
    evaluated_[static_cast<std::size_t>(i)] = 1;
  }
  forward_size_ = g.size();
}

void Evaluator::backward(NodeId root) {
  const Graph& g = *g_;
  if (forward_size_ != g.size())
    throw ValidationError("backward: run forward on the current graph first");
  if (root < 0 || root >= g.size()) throw ValidationError("backward: root id out of range");
  const Node& rn = g.at(root);
  if (rn.rows != 1 || rn.cols != 1)
    throw ValidationError("backward: root must be scalar, got " + std::to_string(rn.rows) + "x" +
                          std::to_string(rn.cols) + " " + op_name(rn.op));

  const std::size_t n = static_cast<std::size_t>(g.size());
  adj_.resize(n);
  adj_set_.assign(n, 0);

  // zero-initialized adjoint accumulator for a parent, shaped on first touch
  auto acc = [&](NodeId p) -> Tensor& {
    Tensor& t = adj_[static_cast<std::size_t>(p)];
    if (!adj_set_[static_cast<std::size_t>(p)]) {
      const Node& pn = g.at(p);
      if (!(t.rows() == pn.rows && t.cols() == pn.cols)) t = Tensor(pn.rows, pn.cols);
      t.fill(0.0);
      adj_set_[static_cast<std::size_t>(p)] = 1;
    }
    return t;
  };

  acc(root).data()[0] = 1.0;

  for (NodeId i = root; i >= 0; --i) {
    if (!adj_set_[static_cast<std::size_t>(i)]) continue;
    const Node& nd = g.at(i);
    const Tensor& gr = adj_[static_cast<std::size_t>(i)];
    switch (nd.op) {
      case Op::kLeaf:
      case Op::kConstant:
      case Op::kStopGradient:
        break;
      case Op::kAdd: {
        tensor_axpy(1.0, gr, acc(nd.a));
        const Node& pb = g.at(nd.b);
        if (pb.rows == nd.rows) {
          tensor_axpy(1.0, gr, acc(nd.b));
        } else {  // bias row: column sums
          Tensor& ab = acc(nd.b);
          for (int r = 0; r < gr.rows(); ++r) {
            const double* rg = gr.data() + static_cast<std::size_t>(r) * gr.cols();
            for (int c = 0; c < gr.cols(); ++c) ab.data()[c] += rg[c];
          }
        }
        break;
      }
      case Op::kMul: {
        const Tensor& va = vals_[nd.a];
        const Tensor& vb = vals_[nd.b];
        Tensor& aa = acc(nd.a);
        Tensor& ab = acc(nd.b);
        const std::size_t m = gr.size();
        for (std::size_t k = 0; k < m; ++k) {
          aa.data()[k] += gr.data()[k] * vb.data()[k];
          ab.data()[k] += gr.data()[k] * va.data()[k];
        }
        break;
      }
      case Op::kMatMul: {
        const Tensor& va = vals_[nd.a];
        const Tensor& vb = vals_[nd.b];
        if (!nd.ta && !nd.tb) {
          tensor_matmul(gr, false, vb, true, acc(nd.a), true);
          tensor_matmul(va, true, gr, false, acc(nd.b), true);
        } else if (nd.ta && !nd.tb) {
          tensor_matmul(vb, false, gr, true, acc(nd.a), true);
          tensor_matmul(va, false, gr, false, acc(nd.b), true);
        } else if (!nd.ta && nd.tb) {
          tensor_matmul(gr, false, vb, false, acc(nd.a), true);
          tensor_matmul(gr, true, va, false, acc(nd.b), true);
        } else {
          tensor_matmul(vb, true, gr, true, acc(nd.a), true);
          tensor_matmul(gr, true, va, true, acc(nd.b), true);
        }
        break;
      }
      case Op::kLeakyRelu: {
        const Tensor& x = vals_[nd.a];
        Tensor& ax = acc(nd.a);
        const double s = nd.attr;
        for (std::size_t k = 0; k < x.size(); ++k)
          ax.data()[k] += gr.data()[k] * (x.data()[k] >= 0.0 ? 1.0 : s);
        break;
      }
      case Op::kExp: {
        const Tensor& y = vals_[static_cast<std::size_t>(i)];
        Tensor& ax = acc(nd.a);
        for (std::size_t k = 0; k < y.size(); ++k) ax.data()[k] += gr.data()[k] * y.data()[k];
        break;
      }
      case Op::kLog: {
        const Tensor& x = vals_[nd.a];
        Tensor& ax = acc(nd.a);
        for (std::size_t k = 0; k < x.size(); ++k) ax.data()[k] += gr.data()[k] / x.data()[k];
        break;
      }
      case Op::kSigmoid: {
        const Tensor& y = vals_[static_cast<std::size_t>(i)];
        Tensor& ax = acc(nd.a);
        for (std::size_t k = 0; k < y.size(); ++k) {
          const double s = y.data()[k];
          ax.data()[k] += gr.data()[k] * s * (1.0 - s);
        }
        break;
      }
      case Op::kTanh: {
        const Tensor& y = vals_[static_cast<std::size_t>(i)];
        Tensor& ax = acc(nd.a);
        for (std::size_t k = 0; k < y.size(); ++k) {
          const double t = y.data()[k];
          ax.data()[k] += gr.data()[k] * (1.0 - t * t);
        }
        break;
      }
      case Op::kSquare: {
        const Tensor& x = vals_[nd.a];
        Tensor& ax = acc(nd.a);
        for (std::size_t k = 0; k < x.size(); ++k)
          ax.data()[k] += 2.0 * gr.data()[k] * x.data()[k];
        break;
      }
      case Op::kSum: {
        Tensor& ax = acc(nd.a);
        const double gv = gr.data()[0];
        for (std::size_t k = 0; k < ax.size(); ++k) ax.data()[k] += gv;
        break;
      }
      case Op::kMean: {
        Tensor& ax = acc(nd.a);
        const double gv = gr.data()[0] / static_cast<double>(ax.size());
        for (std::size_t k = 0; k < ax.size(); ++k) ax.data()[k] += gv;
        break;
      }
      case Op::kConcat: {
        const Node& pa = g.at(nd.a);
        Tensor& aa = acc(nd.a);
        Tensor& ab = acc(nd.b);
        for (int r = 0; r < nd.rows; ++r) {
          const double* rg = gr.data() + static_cast<std::size_t>(r) * nd.cols;
          double* ra = aa.data() + static_cast<std::size_t>(r) * pa.cols;
          double* rb = ab.data() + static_cast<std::size_t>(r) * (nd.cols - pa.cols);
          for (int c = 0; c < pa.cols; ++c) ra[c] += rg[c];
          for (int c = pa.cols; c < nd.cols; ++c) rb[c - pa.cols] += rg[c];
        }
        break;
      }
      case Op::kSlice: {
        Tensor& ax = acc(nd.a);
        for (int r = 0; r < nd.rows; ++r) {
          const double* rg = gr.data() + static_cast<std::size_t>(r) * nd.cols;
          double* rx = ax.data() + static_cast<std::size_t>(r) * ax.cols() + nd.i0;
          for (int c = 0; c < nd.cols; ++c) rx[c] += rg[c];
        }
        break;
      }
      case Op::kWherePos: {
        const Tensor& x = vals_[nd.a];
        Tensor& aa = acc(nd.b);
        Tensor& ab = acc(nd.c);
        for (std::size_t k = 0; k < x.size(); ++k) {
          if (x.data()[k] >= 0.0)
            aa.data()[k] += gr.data()[k];
          else
            ab.data()[k] += gr.data()[k];
        }
        break;
      }
      case Op::kScale:
        tensor_axpy(nd.attr, gr, acc(nd.a));
        break;
      case Op::kAddScalar:
        tensor_axpy(1.0, gr, acc(nd.a));
        break;
      case Op::kBroadcastScalar: {
        double s = 0.0;
        for (double v : gr.flat()) s += v;
        acc(nd.a).data()[0] += s;
        break;
      }
    }
  }
}

Tensor Evaluator::adjoint_or_zero(NodeId id) const {
  if (id < 0 || id >= g_->size()) throw ValidationError("adjoint_or_zero: node id out of range");
  if (adj_set_.size() > static_cast<std::size_t>(id) && adj_set_[static_cast<std::size_t>(id)])
    return adj_[static_cast<std::size_t>(id)];
  const Node& nd = g_->at(id);
  return Tensor::zeros(nd.rows, nd.cols);
}

const Tensor& Evaluator::adjoint(NodeId id) const {
  if (id < 0 || id >= g_->size() || adj_set_.size() <= static_cast<std::size_t>(id) ||
      !adj_set_[static_cast<std::size_t>(id)])
    throw ValidationError("adjoint: node " + std::to_string(id) + " has no adjoint");
  return adj_[static_cast<std::size_t>(id)];
}

// ---------------------------------------------------------------------------
// symbolic differentiation

std::vector<NodeId> append_gradient(Graph& g, NodeId root, std::span<const NodeId> wrt) {
  const int base = g.size();
  if (root < 0 || root >= base) throw ValidationError("append_gradient: root id out of range");
  {
    const Node& rn = g.at(root);
    if (rn.rows != 1 || rn.cols != 1)
      throw ValidationError("append_gradient: root must be scalar, got " +
                            std::to_string(rn.rows) + "x" + std::to_string(rn.cols));
  }
  for (NodeId w : wrt)
    if (w < 0 || w >= base) throw ValidationError("append_gradient: wrt id out of range");

  // need = (nodes the root depends on) AND (nodes that depend on some wrt);
  // adjoint nodes are emitted only inside this band
  std::vector<char> anc(static_cast<std::size_t>(base), 0);
  anc[static_cast<std::size_t>(root)] = 1;
  for (NodeId i = root; i >= 0; --i) {
    if (!anc[static_cast<std::size_t>(i)]) continue;
    const Node& nd = g.at(i);
    if (nd.a >= 0) anc[static_cast<std::size_t>(nd.a)] = 1;
    if (nd.b >= 0) anc[static_cast<std::size_t>(nd.b)] = 1;
    if (nd.c >= 0) anc[static_cast<std::size_t>(nd.c)] = 1;
  }
  std::vector<char> dep(static_cast<std::size_t>(base), 0);
  for (NodeId w : wrt) dep[static_cast<std::size_t>(w)] = 1;
  for (NodeId i = 0; i < base; ++i) {
    if (dep[static_cast<std::size_t>(i)]) continue;
    const Node& nd = g.at(i);
    if ((nd.a >= 0 && dep[static_cast<std::size_t>(nd.a)]) ||
        (nd.b >= 0 && dep[static_cast<std::size_t>(nd.b)]) ||
        (nd.c >= 0 && dep[static_cast<std::size_t>(nd.c)]))
      dep[static_cast<std::size_t>(i)] = 1;
  }
  std::vector<char> need(static_cast<std::size_t>(base), 0);
  for (NodeId i = 0; i < base; ++i)
    need[static_cast<std::size_t>(i)] =
        anc[static_cast<std::size_t>(i)] && dep[static_cast<std::size_t>(i)];

  std::vector<NodeId> sym(static_cast<std::size_t>(base), kNoNode);
  auto contribute = [&](NodeId p, NodeId delta) {
    if (!need[static_cast<std::size_t>(p)]) return;
    NodeId& slot = sym[static_cast<std::size_t>(p)];
    slot = (slot == kNoNode) ? delta : g.add(slot, delta);
  };

  if (need[static_cast<std::size_t>(root)])
    sym[static_cast<std::size_t>(root)] = g.ones(1, 1);

  for (NodeId i = root; i >= 0; --i) {
    const NodeId gid = sym[static_cast<std::size_t>(i)];
    if (gid == kNoNode) continue;
    const Node nd = g.at(i);  // copy: g grows while we append
    switch (nd.op) {
      case Op::kLeaf:
      case Op::kConstant:
      case Op::kStopGradient:
        break;
      case Op::kAdd: {
        contribute(nd.a, gid);
        const int b_rows = g.at(nd.b).rows;  // copy out: appends may reallocate nodes
        if (b_rows == nd.rows)
          contribute(nd.b, gid);
        else
          contribute(nd.b, g.matmul(g.ones(1, nd.rows), gid));  // column sums
        break;
      }
      case Op::kMul:
        contribute(nd.a, g.mul(gid, nd.b));
        contribute(nd.b, g.mul(gid, nd.a));
        break;
      case Op::kMatMul:
        if (!nd.ta && !nd.tb) {
          contribute(nd.a, g.matmul(gid, nd.b, false, true));
          contribute(nd.b, g.matmul(nd.a, gid, true, false));
        } else if (nd.ta && !nd.tb) {
          contribute(nd.a, g.matmul(nd.b, gid, false, true));
          contribute(nd.b, g.matmul(nd.a, gid, false, false));
        } else if (!nd.ta && nd.tb) {
          contribute(nd.a, g.matmul(gid, nd.b, false, false));
          contribute(nd.b, g.matmul(gid, nd.a, true, false));
        } else {
          contribute(nd.a, g.matmul(nd.b, gid, true, true));
          contribute(nd.b, g.matmul(gid, nd.a, true, true));
        }
        break;
      case Op::kLeakyRelu:
        // derivative 1 at exactly 0, slope elsewhere negative; piecewise
        // constant, so the second derivative through this path is zero
        contribute(nd.a, g.where_pos(nd.a, gid, g.scale(gid, nd.attr)));
        break;
      case Op::kExp:
        contribute(nd.a, g.mul(gid, i));
        break;
      case Op::kLog:
        // 1/x as exp(-log x), reusing this node's own output
        contribute(nd.a, g.mul(gid, g.exp(g.scale(i, -1.0))));
        break;
      case Op::kSigmoid:
        contribute(nd.a, g.mul(gid, g.add(i, g.scale(g.square(i), -1.0))));
        break;
      case Op::kTanh:
        contribute(nd.a, g.mul(gid, g.one_minus(g.square(i))));
        break;
      case Op::kSquare:
        contribute(nd.a, g.scale(g.mul(gid, nd.a), 2.0));
        break;
      case Op::kSum: {
        const int pr = g.at(nd.a).rows, pc = g.at(nd.a).cols;
        contribute(nd.a, g.broadcast_scalar(gid, pr, pc));
        break;
      }
      case Op::kMean: {
        const int pr = g.at(nd.a).rows, pc = g.at(nd.a).cols;
        const double inv = 1.0 / (static_cast<double>(pr) * pc);
        contribute(nd.a, g.broadcast_scalar(g.scale(gid, inv), pr, pc));
        break;
      }
      case Op::kConcat: {
        const int a_cols = g.at(nd.a).cols;
        contribute(nd.a, g.slice(gid, 0, a_cols));
        contribute(nd.b, g.slice(gid, a_cols, nd.cols));
        break;
      }
      case Op::kSlice: {
        const int a_cols = g.at(nd.a).cols;
        NodeId padded = gid;
        if (nd.i0 > 0) padded = g.concat(g.zeros(nd.rows, nd.i0), padded);
        if (nd.i1 < a_cols) padded = g.concat(padded, g.zeros(nd.rows, a_cols - nd.i1));
        contribute(nd.a, padded);
        break;
      }
      case Op::kWherePos: {
        const NodeId zero = g.zeros(nd.rows, nd.cols);
        contribute(nd.b, g.where_pos(nd.a, gid, zero));
        contribute(nd.c, g.where_pos(nd.a, zero, gid));
        // branch selector x: zero almost everywhere, dropped
        break;
      }
      case Op::kScale:
        contribute(nd.a, g.scale(gid, nd.attr));
        break;
      case Op::kAddScalar:
        contribute(nd.a, gid);
        break;
      case Op::kBroadcastScalar:
        contribute(nd.a, g.sum(gid));
        break;
    }
  }

  std::vector<NodeId> out;
  out.reserve(wrt.size());
  for (NodeId w : wrt) {
    const NodeId s = sym[static_cast<std::size_t>(w)];
    if (s != kNoNode) {
      out.push_back(s);
    } else {
      const Node& wn = g.at(w);
      out.push_back(g.zeros(wn.rows, wn.cols));  // root does not reach w
    }
  }
  return out;
}

Graph grad_graph(const Graph& g, NodeId root, std::span<const NodeId> wrt_leaves) {
  for (NodeId w : wrt_leaves) {
    if (w < 0 || w >= g.size()) throw ValidationError("grad_graph: wrt id out of range");
    if (g.at(w).op != Op::kLeaf)
      throw ValidationError("grad_graph: wrt node " + std::to_string(w) + " is not a leaf");
  }
  Graph out = g;
  const std::vector<NodeId> grads = append_gradient(out, root, wrt_leaves);
  for (std::size_t k = 0; k < grads.size(); ++k)
    out.mark_output("grad:" + g.at(wrt_leaves[k]).name, grads[k]);
  return out;
}

std::vector<Tensor> forward_values(const Graph& g, const Evaluator::Bindings& bindings) {
  Evaluator ev(g);
  ev.forward(bindings);
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(g.size()));
  for (NodeId i = 0; i < g.size(); ++i) out.push_back(ev.value(i));
  return out;
}

std::vector<std::pair<std::string, Tensor>> leaf_gradients(const Graph& g, NodeId root,
                                                           const Evaluator::Bindings& bindings) {
  Evaluator ev(g);
  ev.forward(bindings);
  ev.backward(root);
  std::vector<std::pair<std::string, Tensor>> out;
  for (NodeId i = 0; i < g.size(); ++i) {
    const Node& nd = g.at(i);
    if (nd.op == Op::kLeaf) out.emplace_back(nd.name, ev.adjoint_or_zero(i));
  }
  return out;
}

}  // namespace pfb
