#include "pfb/graph.hpp"

#include <cmath>

namespace pfb {

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConstant: return "constant";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kMatMul: return "matmul";
    case Op::kLeakyRelu: return "leaky_relu";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kSquare: return "square";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kWherePos: return "where_pos";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kBroadcastScalar: return "broadcast_scalar";
    case Op::kStopGradient: return "stop_gradient";
  }
  return "?";
}

namespace {
std::string shape_str(int r, int c) { return std::to_string(r) + "x" + std::to_string(c); }
}  // namespace

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::check(NodeId id, const char* op) const {
  if (id < 0 || id >= size())
    throw ValidationError(std::string(op) + ": node id " + std::to_string(id) +
                          " out of range for graph of size " + std::to_string(size()));
  return id;
}

NodeId Graph::leaf(std::string name, int rows, int cols) {
  if (rows <= 0 || cols <= 0)
    throw ShapeError("leaf '" + name + "' extents must be positive, got " + shape_str(rows, cols));
  if (name.empty()) throw ValidationError("leaf name must be non-empty");
  if (leaf_index_.count(name)) throw ValidationError("duplicate leaf name '" + name + "'");
  Node n;
  n.op = Op::kLeaf;
  n.rows = rows;
  n.cols = cols;
  n.name = name;
  const NodeId id = push(std::move(n));
  leaf_index_.emplace(std::move(name), id);
  return id;
}

NodeId Graph::constant(Tensor v) {
  if (v.empty()) throw ShapeError("constant tensor must be non-empty");
  Node n;
  n.op = Op::kConstant;
  n.rows = v.rows();
  n.cols = v.cols();
  n.value = std::move(v);
  return push(std::move(n));
}

NodeId Graph::zeros(int rows, int cols) {
  const std::uint64_t key =
      (static_cast<std::uint64_t>(rows) << 34) | (static_cast<std::uint64_t>(cols) << 4);
  auto it = fill_cache_.find(key);
  if (it != fill_cache_.end()) return it->second;
  const NodeId id = constant(Tensor::zeros(rows, cols));
  fill_cache_.emplace(key, id);
  return id;
}

NodeId Graph::ones(int rows, int cols) {
  const std::uint64_t key =
      (static_cast<std::uint64_t>(rows) << 34) | (static_cast<std::uint64_t>(cols) << 4) | 1u;
  auto it = fill_cache_.find(key);
  if (it != fill_cache_.end()) return it->second;
  const NodeId id = constant(Tensor::full(rows, cols, 1.0));
  fill_cache_.emplace(key, id);
  return id;
}

NodeId Graph::add(NodeId a, NodeId b) {
  const Node& na = nodes_[check(a, "add")];
  const Node& nb = nodes_[check(b, "add")];
  const bool same = na.rows == nb.rows && na.cols == nb.cols;
  const bool bias = nb.rows == 1 && nb.cols == na.cols;
  if (!same && !bias)
    throw ShapeError("add: incompatible shapes " + shape_str(na.rows, na.cols) + " + " +
                     shape_str(nb.rows, nb.cols) + " (need equal shapes or a 1x" +
                     std::to_string(na.cols) + " bias row)");
  Node n;
  n.op = Op::kAdd;
  n.rows = na.rows;
  n.cols = na.cols;
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  const Node& na = nodes_[check(a, "mul")];
  const Node& nb = nodes_[check(b, "mul")];
  if (na.rows != nb.rows || na.cols != nb.cols)
    throw ShapeError("mul: shape mismatch " + shape_str(na.rows, na.cols) + " vs " +
                     shape_str(nb.rows, nb.cols));
  Node n;
  n.op = Op::kMul;
  n.rows = na.rows;
  n.cols = na.cols;
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b, bool ta, bool tb) {
  const Node& na = nodes_[check(a, "matmul")];
  const Node& nb = nodes_[check(b, "matmul")];
  const int m = ta ? na.cols : na.rows;
  const int k = ta ? na.rows : na.cols;
  const int kb = tb ? nb.cols : nb.rows;
  const int nn = tb ? nb.rows : nb.cols;
  if (k != kb)
    throw ShapeError("matmul: inner extents differ, " + shape_str(na.rows, na.cols) +
                     (ta ? "^T" : "") + " * " + shape_str(nb.rows, nb.cols) + (tb ? "^T" : ""));
  Node n;
  n.op = Op::kMatMul;
  n.rows = m;
  n.cols = nn;
  n.a = a;
  n.b = b;
  n.ta = ta;
  n.tb = tb;
  return push(std::move(n));
}

namespace {
Node unary(Op op, NodeId x, const Node& nx) {
  Node n;
  n.op = op;
  n.rows = nx.rows;
  n.cols = nx.cols;
  n.a = x;
  return n;
}
}  // namespace

NodeId Graph::leaky_relu(NodeId x, double slope) {
  Node n = unary(Op::kLeakyRelu, x, nodes_[check(x, "leaky_relu")]);
  n.attr = slope;
  return push(std::move(n));
}
NodeId Graph::exp(NodeId x) { return push(unary(Op::kExp, x, nodes_[check(x, "exp")])); }
NodeId Graph::log(NodeId x) { return push(unary(Op::kLog, x, nodes_[check(x, "log")])); }
NodeId Graph::sigmoid(NodeId x) { return push(unary(Op::kSigmoid, x, nodes_[check(x, "sigmoid")])); }
NodeId Graph::tanh(NodeId x) { return push(unary(Op::kTanh, x, nodes_[check(x, "tanh")])); }
NodeId Graph::square(NodeId x) { return push(unary(Op::kSquare, x, nodes_[check(x, "square")])); }
NodeId Graph::stop_gradient(NodeId x) {
  return push(unary(Op::kStopGradient, x, nodes_[check(x, "stop_gradient")]));
}

NodeId Graph::sum(NodeId x) {
  Node n = unary(Op::kSum, x, nodes_[check(x, "sum")]);
  n.rows = n.cols = 1;
  return push(std::move(n));
}

NodeId Graph::mean(NodeId x) {
  Node n = unary(Op::kMean, x, nodes_[check(x, "mean")]);
  n.rows = n.cols = 1;
  return push(std::move(n));
}

NodeId Graph::concat(NodeId a, NodeId b) {
  const Node& na = nodes_[check(a, "concat")];
  const Node& nb = nodes_[check(b, "concat")];
  if (na.rows != nb.rows)
    throw ShapeError("concat: row counts differ, " + shape_str(na.rows, na.cols) + " vs " +
                     shape_str(nb.rows, nb.cols));
  Node n;
  n.op = Op::kConcat;
  n.rows = na.rows;
  n.cols = na.cols + nb.cols;
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

NodeId Graph::slice(NodeId x, int col_begin, int col_end) {
  const Node& nx = nodes_[check(x, "slice")];
  if (!(0 <= col_begin && col_begin < col_end && col_end <= nx.cols))
    throw ShapeError("slice: column range [" + std::to_string(col_begin) + ", " +
                     std::to_string(col_end) + ") invalid for " + shape_str(nx.rows, nx.cols));
  Node n;
  n.op = Op::kSlice;
  n.rows = nx.rows;
  n.cols = col_end - col_begin;
  n.a = x;
  n.i0 = col_begin;
  n.i1 = col_end;
  return push(std::move(n));
}

NodeId Graph::where_pos(NodeId x, NodeId a, NodeId b) {
  const Node& nx = nodes_[check(x, "where_pos")];
  const Node& na = nodes_[check(a, "where_pos")];
  const Node& nb = nodes_[check(b, "where_pos")];
  if (nx.rows != na.rows || nx.cols != na.cols || nx.rows != nb.rows || nx.cols != nb.cols)
    throw ShapeError("where_pos: shapes must match, got " + shape_str(nx.rows, nx.cols) + ", " +
                     shape_str(na.rows, na.cols) + ", " + shape_str(nb.rows, nb.cols));
  Node n;
  n.op = Op::kWherePos;
  n.rows = nx.rows;
  n.cols = nx.cols;
  n.a = x;
  n.b = a;
  n.c = b;
  return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double factor) {
  Node n = unary(Op::kScale, x, nodes_[check(x, "scale")]);
  n.attr = factor;
  return push(std::move(n));
}

NodeId Graph::add_scalar(NodeId x, double c) {
  Node n = unary(Op::kAddScalar, x, nodes_[check(x, "add_scalar")]);
  n.attr = c;
  return push(std::move(n));
}

NodeId Graph::broadcast_scalar(NodeId s, int rows, int cols) {
  const Node& ns = nodes_[check(s, "broadcast_scalar")];
  if (ns.rows != 1 || ns.cols != 1)
    throw ShapeError("broadcast_scalar: source must be 1x1, got " + shape_str(ns.rows, ns.cols));
  if (rows <= 0 || cols <= 0)
    throw ShapeError("broadcast_scalar: target extents must be positive");
  Node n;
  n.op = Op::kBroadcastScalar;
  n.rows = rows;
  n.cols = cols;
  n.a = s;
  return push(std::move(n));
}

NodeId Graph::row_sum(NodeId x) {
  const Node& nx = nodes_[check(x, "row_sum")];
  return matmul(x, ones(nx.cols, 1));
}

NodeId Graph::broadcast_row(NodeId row, int rows) {
  const Node& nr = nodes_[check(row, "broadcast_row")];
  if (nr.rows != 1) throw ShapeError("broadcast_row: source must have one row");
  if (rows == 1) return row;
  return add(zeros(rows, nr.cols), row);
}

NodeId Graph::softplus(NodeId x) {
  const Node& nx = nodes_[check(x, "softplus")];
  const NodeId zero = zeros(nx.rows, nx.cols);
  const NodeId pos_part = where_pos(x, x, zero);               // max(x, 0)
  const NodeId neg_abs = where_pos(x, scale(x, -1.0), x);      // -|x|, keeps exp bounded
  return add(pos_part, log(add_scalar(exp(neg_abs), 1.0)));
}

NodeId Graph::find_leaf(std::string_view name) const {
  auto it = leaf_index_.find(std::string(name));
  return it == leaf_index_.end() ? kNoNode : it->second;
}

std::vector<NodeId> Graph::leaves() const {
  std::vector<NodeId> out;
  for (NodeId i = 0; i < size(); ++i)
    if (nodes_[static_cast<std::size_t>(i)].op == Op::kLeaf) out.push_back(i);
  return out;
}

void Graph::mark_output(std::string name, NodeId id) {
  check(id, "mark_output");
  outputs_.emplace_back(std::move(name), id);
}

NodeId Graph::output(std::string_view name) const {
  for (const auto& [n, id] : outputs_)
    if (n == name) return id;
  throw ValidationError("graph has no output named '" + std::string(name) + "'");
}

}  // namespace pfb
