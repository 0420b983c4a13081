#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pfb/tensor.hpp"

namespace pfb {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

enum class Op : std::uint8_t {
  kLeaf,
  kConstant,
  kAdd,             // same shape, or rhs is a 1 x cols bias row
  kMul,             // elementwise
  kMatMul,          // optional transposes on either operand
  kLeakyRelu,       // attr = negative slope; input exactly 0 takes the positive branch
  kExp,
  kLog,
  kSigmoid,
  kTanh,
  kSquare,
  kSum,             // all entries -> 1x1
  kMean,            // all entries -> 1x1
  kConcat,          // columns, equal row counts
  kSlice,           // column range [i0, i1)
  kWherePos,        // parents (x, a, b): a where x >= 0 else b
  kScale,           // attr * x
  kAddScalar,       // x + attr
  kBroadcastScalar, // 1x1 -> rows x cols fill
  kStopGradient,    // identity value, blocks every adjoint
};

const char* op_name(Op op);

struct Node {
  Op op;
  int rows = 0, cols = 0;          // output shape
  NodeId a = kNoNode, b = kNoNode, c = kNoNode;
  bool ta = false, tb = false;     // matmul flags
  double attr = 0.0;
  int i0 = 0, i1 = 0;              // slice bounds
  std::string name;                // leaves only
  Tensor value;                    // constants only
};

// Append-only DAG over the primitive set above. Parents always precede
// children, so node order is a topological order and replaying the node list
// reproduces identical values. Shape checking happens at append time; the
// evaluator trusts stored shapes. A graph is immutable once handed to an
// Evaluator except through append_gradient, which only adds nodes.
class Graph {
 public:
  NodeId leaf(std::string name, int rows, int cols);
  NodeId constant(Tensor v);
  // memoized constants; repeated requests return the same node
  NodeId zeros(int rows, int cols);
  NodeId ones(int rows, int cols);

  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b, bool ta = false, bool tb = false);
  NodeId leaky_relu(NodeId x, double slope = 0.01);
  NodeId exp(NodeId x);
  NodeId log(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId tanh(NodeId x);
  NodeId square(NodeId x);
  NodeId sum(NodeId x);
  NodeId mean(NodeId x);
  NodeId concat(NodeId a, NodeId b);
  NodeId slice(NodeId x, int col_begin, int col_end);
  NodeId where_pos(NodeId x, NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);
  NodeId add_scalar(NodeId x, double c);
  NodeId broadcast_scalar(NodeId s, int rows, int cols);
  NodeId stop_gradient(NodeId x);

  // sugar over the primitives
  NodeId sub(NodeId a, NodeId b) { return add(a, scale(b, -1.0)); }
  NodeId one_minus(NodeId x) { return add_scalar(scale(x, -1.0), 1.0); }
  NodeId row_sum(NodeId x);                    // m x n -> m x 1
  NodeId broadcast_row(NodeId row, int rows);  // 1 x n -> rows x n
  NodeId softplus(NodeId x);                   // overflow-safe log(1 + e^x)

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& at(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
  NodeId find_leaf(std::string_view name) const;  // kNoNode when absent
  std::vector<NodeId> leaves() const;

  void mark_output(std::string name, NodeId id);
  NodeId output(std::string_view name) const;  // throws when absent
  const std::vector<std::pair<std::string, NodeId>>& outputs() const { return outputs_; }

 private:
  friend class Evaluator;
  friend std::vector<NodeId> append_gradient(Graph&, NodeId, std::span<const NodeId>);
  NodeId push(Node n);
  NodeId check(NodeId id, const char* op) const;

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, NodeId>> outputs_;
  std::unordered_map<std::string, NodeId> leaf_index_;
  std::unordered_map<std::uint64_t, NodeId> fill_cache_;  // zeros/ones dedupe
};

// Reverse-mode differentiation that appends the adjoint computation to the
// graph itself, using only the primitive set, so the result can be evaluated,
// reused, and differentiated again. Returns one node per wrt entry holding
// d(root)/d(wrt); entries the root does not reach get zero constants.
// root must be scalar. wrt may name any node, not only leaves.
std::vector<NodeId> append_gradient(Graph& g, NodeId root, std::span<const NodeId> wrt);

// Spec-shaped wrapper: a fresh graph that extends `g` with gradient nodes for
// the given leaves, marked as outputs "grad:<leaf name>".
Graph grad_graph(const Graph& g, NodeId root, std::span<const NodeId> wrt_leaves);

// Workspace for repeated evaluation of one graph. Buffers are allocated on
// first use and reused across calls; nothing is shared between instances, so
// distinct instances may run concurrently on the same graph.
class Evaluator {
 public:
  using Bindings = std::vector<std::pair<NodeId, const Tensor*>>;

  explicit Evaluator(const Graph& g) : g_(&g) {}

  void forward(const Bindings& bindings);
  const Tensor& value(NodeId id) const { return vals_[static_cast<std::size_t>(id)]; }

  // numeric adjoint accumulation in reverse node order; requires a prior
  // forward on this instance. root must be scalar.
  void backward(NodeId root);
  bool has_adjoint(NodeId id) const { return adj_set_[static_cast<std::size_t>(id)] != 0; }
  // zero tensor of the node's shape when the root does not reach it
  Tensor adjoint_or_zero(NodeId id) const;
  const Tensor& adjoint(NodeId id) const;  // throws when absent

 private:
  const Graph* g_;
  std::vector<Tensor> vals_;
  std::vector<Tensor> adj_;
  std::vector<char> adj_set_;
  std::vector<char> evaluated_;
  std::vector<const Tensor*> bound_;
  int forward_size_ = 0;  // nodes covered by the last forward
};

// One-call conveniences matching the module contract. forward_values returns
// every node's value; leaf_gradients runs forward then numeric backward and
// returns name -> gradient for every leaf.
std::vector<Tensor> forward_values(const Graph& g, const Evaluator::Bindings& bindings);
std::vector<std::pair<std::string, Tensor>> leaf_gradients(const Graph& g, NodeId root,
                                                           const Evaluator::Bindings& bindings);

}  // namespace pfb
