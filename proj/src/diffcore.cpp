#include "mambastock/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mambastock/errors.hpp"

namespace mambastock {

const Tensor& Var::value() const { return graph_->value(id_); }
const Tensor& Var::grad() const { return graph_->grad(id_); }
const Shape& Var::shape() const { return graph_->value(id_).shape(); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Var Graph::leaf(Tensor value, bool requires_grad) {
  Tensor grad(value.shape());
  nodes_.push_back(Node{std::move(value), std::move(grad), "leaf", {}, {},
                        requires_grad});
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(const char* op, Tensor value, std::vector<NodeId> inputs,
                  BackwardFn backward) {
  bool needs_grad = false;
  for (NodeId id : inputs) {
    if (id >= nodes_.size()) {
      throw InvalidArgument(std::string(op) + ": input node " +
                            std::to_string(id) + " is not on this graph");
    }
    needs_grad = needs_grad || nodes_[id].requires_grad;
  }
  Tensor grad(value.shape());
  nodes_.push_back(Node{std::move(value), std::move(grad), op,
                        std::move(inputs),
                        needs_grad ? std::move(backward) : BackwardFn{},
                        needs_grad});
  return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var loss) {
  if (loss.graph() != this) {
    throw InvalidArgument("backward: loss belongs to a different graph");
  }
  const NodeId root = loss.id();
  Node& root_node = nodes_.at(root);
  if (root_node.value.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     shape_to_string(root_node.value.shape()));
  }
  if (!root_node.requires_grad) {
    throw InvalidArgument(
        "backward: loss is detached (no input requires a gradient)");
  }

  // Interior buffers hold only the current pass; leaves accumulate.
  for (NodeId id = 0; id <= root; ++id) {
    if (!nodes_[id].inputs.empty()) nodes_[id].grad.fill(0.0);
  }
  std::vector<char> reachable(root + 1, 0);
  reachable[root] = 1;
  root_node.grad[0] += 1.0;

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (NodeId id = root + 1; id-- > 0;) {
    if (!reachable[id]) continue;
    Node& node = nodes_[id];
    if (!node.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (NodeId input : node.inputs) {
      Node& in = nodes_[input];
      in_values.push_back(&in.value);
      in_grads.push_back(in.requires_grad ? &in.grad : nullptr);
      if (in.requires_grad) reachable[input] = 1;
    }
    node.backward(BackwardContext{node.value, node.grad, in_values, in_grads});
  }
}

void Graph::zero_grad() {
  for (Node& node : nodes_) node.grad.fill(0.0);
}

// ---------------------------------------------------------------------------
// Broadcasting

Shape broadcast_shapes(const char* op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i + a.size() >= rank ? a[i + a.size() - rank] : 1;
    const std::size_t db = i + b.size() >= rank ? b[i + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " +
                       shape_to_string(a) + " with " + shape_to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

// Strides of `in` laid against `out`, zero along broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    const std::size_t axis = k + out.size() - in.size();
    strides[axis] = in[k] == 1 ? 0 : stride;
    stride *= in[k];
  }
  return strides;
}

// Calls fn(out_index, a_index, b_index) for every output element.
template <typename Fn>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b,
                        Fn&& fn) {
  const std::size_t total = shape_size(out);
  if (a == out && b == out) {
    for (std::size_t i = 0; i < total; ++i) fn(i, i, i);
    return;
  }
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  std::vector<std::size_t> counter(out.size(), 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t i = 0; i < total; ++i) {
    fn(i, ia, ib);
    for (std::size_t axis = out.size(); axis-- > 0;) {
      if (++counter[axis] < out[axis]) {
        ia += sa[axis];
        ib += sb[axis];
        break;
      }
      ia -= sa[axis] * (out[axis] - 1);
      ib -= sb[axis] * (out[axis] - 1);
      counter[axis] = 0;
    }
  }
}

template <typename Forward, typename DA, typename DB>
Var binary_op(const char* op, Var a, Var b, Forward forward, DA da, DB db) {
  if (a.graph() != b.graph()) {
    throw InvalidArgument(std::string(op) + ": operands on different graphs");
  }
  const Shape out_shape = broadcast_shapes(op, a.shape(), b.shape());
  Tensor out(out_shape);
  const auto& av = a.value();
  const auto& bv = b.value();
  for_each_broadcast(out_shape, av.shape(), bv.shape(),
                     [&](std::size_t i, std::size_t ia, std::size_t ib) {
                       out[i] = forward(av[ia], bv[ib]);
                     });
  return a.graph()->record(
      op, std::move(out), {a.id(), b.id()},
      [da, db](const BackwardContext& ctx) {
        const Tensor& x = *ctx.in_values[0];
        const Tensor& y = *ctx.in_values[1];
        Tensor* gx = ctx.in_grads[0];
        Tensor* gy = ctx.in_grads[1];
        for_each_broadcast(
            ctx.out_value.shape(), x.shape(), y.shape(),
            [&](std::size_t i, std::size_t ix, std::size_t iy) {
              const double g = ctx.out_grad[i];
              if (gx) (*gx)[ix] += g * da(x[ix], y[iy]);
              if (gy) (*gy)[iy] += g * db(x[ix], y[iy]);
            });
      });
}

// Elementwise op whose derivative is expressed through input and output.
template <typename Forward, typename Derivative>
Var unary_op(const char* op, Var a, Forward forward, Derivative derivative) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = forward(av[i]);
  return a.graph()->record(
      op, std::move(out), {a.id()}, [derivative](const BackwardContext& ctx) {
        const Tensor& x = *ctx.in_values[0];
        Tensor& gx = *ctx.in_grads[0];
        for (std::size_t i = 0; i < x.size(); ++i) {
          gx[i] += ctx.out_grad[i] * derivative(x[i], ctx.out_value[i]);
        }
      });
}

}  // namespace

double softplus_value(double x) {
  // log(1 + e^x) without overflow for large |x|
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double z = std::exp(x);
  return z / (1.0 + z);
}

Var add(Var a, Var b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double factor) {
  return unary_op(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary_op(
      "add_scalar", a, [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " +
                     shape_to_string(av.shape()) + " and " +
                     shape_to_string(bv.shape()));
  }
  if (a.graph() != b.graph()) {
    throw InvalidArgument("matmul: operands on different graphs");
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av.at(i, p);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += x * bv.at(p, j);
    }
  }
  return a.graph()->record(
      "matmul", std::move(out), {a.id(), b.id()},
      [m, k, n](const BackwardContext& ctx) {
        const Tensor& x = *ctx.in_values[0];
        const Tensor& y = *ctx.in_values[1];
        const Tensor& g = ctx.out_grad;
        if (Tensor* gx = ctx.in_grads[0]) {
          // dX = G * Y^T
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g.at(i, j) * y.at(p, j);
              gx->at(i, p) += acc;
            }
          }
        }
        if (Tensor* gy = ctx.in_grads[1]) {
          // dY = X^T * G
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const double xv = x.at(i, p);
              for (std::size_t j = 0; j < n; ++j) gy->at(p, j) += xv * g.at(i, j);
            }
          }
        }
      });
}

Var exp(Var a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Var tanh(Var a) {
  return unary_op(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var softplus(Var a) {
  return unary_op("softplus", a, softplus_value,
                  [](double x, double) { return sigmoid_value(x); });
}

Var sigmoid(Var a) {
  return unary_op("sigmoid", a, sigmoid_value,
                  [](double, double y) { return y * (1.0 - y); });
}

Var reciprocal(Var a) {
  return unary_op(
      "reciprocal", a, [](double x) { return 1.0 / x; },
      [](double, double y) { return -y * y; });
}

Var square(Var a) {
  return unary_op(
      "square", a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double total = 0.0;
  for (double v : av.values()) total += v;
  return a.graph()->record("sum", Tensor::scalar(total), {a.id()},
                           [](const BackwardContext& ctx) {
                             const double g = ctx.out_grad[0];
                             for (double& v : ctx.in_grads[0]->values()) v += g;
                           });
}

Var mean(Var a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var broadcast_to(Var a, Shape shape) {
  const Shape out_shape = broadcast_shapes("broadcast_to", a.shape(), shape);
  if (out_shape != shape) {
    throw ShapeError("broadcast_to: cannot broadcast " +
                     shape_to_string(a.shape()) + " to " +
                     shape_to_string(shape));
  }
  Tensor out(shape);
  const Tensor& av = a.value();
  for_each_broadcast(shape, av.shape(), shape,
                     [&](std::size_t i, std::size_t ia, std::size_t) {
                       out[i] = av[ia];
                     });
  return a.graph()->record(
      "broadcast_to", std::move(out), {a.id()},
      [](const BackwardContext& ctx) {
        Tensor& gx = *ctx.in_grads[0];
        const Shape& out = ctx.out_value.shape();
        for_each_broadcast(out, gx.shape(), out,
                           [&](std::size_t i, std::size_t ix, std::size_t) {
                             gx[ix] += ctx.out_grad[i];
                           });
      });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.graph()->record("reshape", std::move(out), {a.id()},
                           [](const BackwardContext& ctx) {
                             Tensor& gx = *ctx.in_grads[0];
                             for (std::size_t i = 0; i < gx.size(); ++i) {
                               gx[i] += ctx.out_grad[i];
                             }
                           });
}

Var row(Var matrix, std::size_t index) {
  const Tensor& mv = matrix.value();
  if (mv.rank() != 2 || index >= mv.dim(0)) {
    throw ShapeError("row: index " + std::to_string(index) +
                     " invalid for shape " + shape_to_string(mv.shape()));
  }
  const std::size_t cols = mv.dim(1);
  const auto first = mv.storage().begin() + static_cast<std::ptrdiff_t>(index * cols);
  Tensor out(Shape{cols}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(cols)));
  return matrix.graph()->record(
      "row", std::move(out), {matrix.id()},
      [index, cols](const BackwardContext& ctx) {
        Tensor& gx = *ctx.in_grads[0];
        for (std::size_t j = 0; j < cols; ++j) gx[index * cols + j] += ctx.out_grad[j];
      });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw InvalidArgument("stack_rows: no rows");
  Graph* graph = rows.front().graph();
  const Shape& first = rows.front().shape();
  if (first.size() != 1) {
    throw ShapeError("stack_rows: rows must be rank-1, got " +
                     shape_to_string(first));
  }
  const std::size_t cols = first[0];
  Tensor out(Shape{rows.size(), cols});
  std::vector<NodeId> inputs;
  inputs.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].graph() != graph || rows[r].shape() != first) {
      throw ShapeError("stack_rows: row " + std::to_string(r) + " has shape " +
                       shape_to_string(rows[r].shape()) + ", expected " +
                       shape_to_string(first));
    }
    const Tensor& rv = rows[r].value();
    std::copy(rv.storage().begin(), rv.storage().end(),
              out.storage().begin() + static_cast<std::ptrdiff_t>(r * cols));
    inputs.push_back(rows[r].id());
  }
  return graph->record("stack_rows", std::move(out), std::move(inputs),
                       [cols](const BackwardContext& ctx) {
                         for (std::size_t r = 0; r < ctx.in_grads.size(); ++r) {
                           Tensor* g = ctx.in_grads[r];
                           if (!g) continue;
                           for (std::size_t j = 0; j < cols; ++j) {
                             (*g)[j] += ctx.out_grad[r * cols + j];
                           }
                         }
                       });
}

Var mse(Var pred, Var target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse: prediction shape " + shape_to_string(pred.shape()) +
                     " differs from target shape " +
                     shape_to_string(target.shape()));
  }
  if (pred.value().size() == 0) throw InvalidArgument("mse: empty input");
  return mean(square(sub(pred, target)));
}

// ---------------------------------------------------------------------------

Var bound(const NamedVars& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) {
    throw InvalidArgument("unbound input '" + name + "'");
  }
  return it->second;
}

NamedTensors forward_eval(const GraphBuilder& builder,
                          const NamedTensors& inputs) {
  Graph graph;
  NamedVars bound_inputs;
  for (const auto& [name, value] : inputs) {
    bound_inputs.emplace(name, graph.constant(value));
  }
  NamedTensors outputs;
  for (const auto& [name, var] : builder(graph, bound_inputs)) {
    outputs.emplace(name, var.value());
  }
  return outputs;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace {

double evaluate_scalar(const ScalarBuilder& function,
                       const NamedTensors& params, const std::string& name) {
  Graph graph;
  NamedVars vars;
  for (const auto& [key, value] : params) vars.emplace(key, graph.constant(value));
  const Tensor& out = function(graph, vars).value();
  if (out.size() != 1) {
    throw ShapeError("grad_check: function must return a scalar, got " +
                     shape_to_string(out.shape()));
  }
  if (!std::isfinite(out[0])) {
    throw NonFiniteError("grad_check: non-finite loss while perturbing '" +
                         name + "'");
  }
  return out[0];
}

}  // namespace

GradCheckResult grad_check(const ScalarBuilder& function,
                           const NamedTensors& params,
                           const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw InvalidArgument("grad_check: eps must be > 0");

  NamedTensors analytic;
  {
    Graph graph;
    NamedVars vars;
    for (const auto& [name, value] : params) {
      vars.emplace(name, graph.parameter(value));
    }
    Var loss = function(graph, vars);
    graph.backward(loss);
    for (const auto& [name, var] : vars) {
      if (!var.grad().all_finite()) {
        throw NonFiniteError("grad_check: non-finite gradient for '" + name + "'");
      }
      analytic.emplace(name, var.grad());
    }
  }
  if (options.corrupt) options.corrupt(analytic);

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  NamedTensors probe = params;
  for (const auto& [name, value] : params) {
    std::vector<std::size_t> entries(value.size());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (options.max_entries_per_param > 0 &&
        entries.size() > options.max_entries_per_param) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_param);
      std::sort(entries.begin(), entries.end());
    }
    Tensor& slot = probe.at(name);
    for (std::size_t i : entries) {
      const double original = slot[i];
      slot[i] = original + options.eps;
      const double up = evaluate_scalar(function, probe, name);
      slot[i] = original - options.eps;
      const double down = evaluate_scalar(function, probe, name);
      slot[i] = original;

      const double numeric = (up - down) / (2.0 * options.eps);
      const double exact = analytic.at(name)[i];
      const double err = relative_error(exact, numeric);
      ++result.entries_checked;
      if (err > result.max_relative_error || result.worst_parameter.empty()) {
        result.max_relative_error = err;
        result.worst_parameter = name + "[" + std::to_string(i) + "]";
        result.analytic = exact;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace mambastock
