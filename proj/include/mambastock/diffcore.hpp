#pragma once

// Reverse-mode differentiation over dense double arrays.
//
// A Graph is a tape: every operation appends a node holding its value, a
// same-shape gradient buffer, and a backward rule. Graphs are rebuilt on
// every forward pass. Because inputs always precede the nodes that consume
// them, tape order is a topological order and backward() is a single
// reverse sweep over the nodes reachable from the loss.
//
// Leaf gradients accumulate across backward() calls until zero_grad();
// interior nodes hold the gradient of the most recent pass.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mambastock/tensor.hpp"

namespace mambastock {

class Graph;

using NodeId = std::size_t;

// Handle to a node on a Graph. Cheap to copy; does not own the node.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

  Graph* graph() const noexcept { return graph_; }
  NodeId id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const;
  bool requires_grad() const;

 private:
  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

// What a backward rule sees: the op's output value and incoming gradient,
// plus each input's value and gradient buffer. in_grads[i] is null when
// input i does not require a gradient.
struct BackwardContext {
  const Tensor& out_value;
  const Tensor& out_grad;
  std::span<const Tensor* const> in_values;
  std::span<Tensor* const> in_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var parameter(Tensor value) { return leaf(std::move(value), true); }

  // Appends an op node. The node requires a gradient iff any input does;
  // `backward` is dropped otherwise.
  Var record(const char* op, Tensor value, std::vector<NodeId> inputs,
             BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  // Throws if the loss is not a single element or no input requires grad.
  void backward(Var loss);
  void zero_grad();

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  const Tensor& grad(NodeId id) const { return nodes_.at(id).grad; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  const char* op_name(NodeId id) const { return nodes_.at(id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    const char* op;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad;
  };

  std::vector<Node> nodes_;
};

// Numpy-style broadcast of two shapes; throws ShapeError naming `op`.
Shape broadcast_shapes(const char* op, const Shape& a, const Shape& b);

// Elementwise arithmetic with broadcasting.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

// 2-D matrix product: [m x k] * [k x n] -> [m x n].
Var matmul(Var a, Var b);

// Elementwise functions.
Var exp(Var a);
Var tanh(Var a);
Var softplus(Var a);
Var sigmoid(Var a);
Var reciprocal(Var a);
Var square(Var a);

// Reductions to a rank-0 scalar.
Var sum(Var a);
Var mean(Var a);

Var broadcast_to(Var a, Shape shape);
Var reshape(Var a, Shape shape);

// Row `index` of a 2-D array, returned as a rank-1 vector.
Var row(Var matrix, std::size_t index);
// Stacks equal-length rank-1 vectors into a [rows x len] matrix.
Var stack_rows(std::span<const Var> rows);

// (1/n) * sum((pred - target)^2); both operands must share a shape.
Var mse(Var pred, Var target);

// Scalar helpers shared with non-differentiable code paths.
double softplus_value(double x);
double sigmoid_value(double x);

// ---------------------------------------------------------------------------
// Builder-level API

using NamedTensors = std::map<std::string, Tensor>;
using NamedVars = std::map<std::string, Var>;
using GraphBuilder = std::function<NamedVars(Graph&, const NamedVars&)>;
using ScalarBuilder = std::function<Var(Graph&, const NamedVars&)>;

// Looks up a bound input, throwing InvalidArgument if it is missing.
Var bound(const NamedVars& vars, const std::string& name);

// Binds `inputs` as constants on a fresh graph, runs `builder`, and returns
// the values of its named outputs.
NamedTensors forward_eval(const GraphBuilder& builder,
                          const NamedTensors& inputs);

struct GradCheckOptions {
  double eps = 1e-5;
  // Entries checked per parameter; 0 checks every entry. When an array is
  // larger, a seeded subsample is drawn.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
  // Applied to the analytic gradients before comparison (fault injection).
  std::function<void(NamedTensors&)> corrupt;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;
};

// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric);

// Compares backward() against central differences for every parameter.
GradCheckResult grad_check(const ScalarBuilder& function,
                           const NamedTensors& params,
                           const GradCheckOptions& options = {});

}  // namespace mambastock
