#include "mambastock/ssm.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>
#include <vector>

#include "mambastock/errors.hpp"

namespace mambastock::ssm {

namespace {

void expect_shape(const char* what, const Tensor& t, const Shape& shape) {
  if (t.shape() != shape) {
    throw ShapeError(std::string(what) + ": expected shape " +
                     shape_to_string(shape) + ", got " +
                     shape_to_string(t.shape()));
  }
}

}  // namespace

void SsmParams::validate() const {
  if (A.rank() != 2) {
    throw ShapeError("ssm params: A must be D x N, got " +
                     shape_to_string(A.shape()));
  }
  const std::size_t d = A.dim(0);
  const std::size_t n = A.dim(1);
  expect_shape("ssm params W_B", W_B, {d, n});
  expect_shape("ssm params W_C", W_C, {d, n});
  expect_shape("ssm params W_delta", W_delta, {d, d});
  expect_shape("ssm params b_delta", b_delta, {d});
}

// ---------------------------------------------------------------------------
// Discretization

double zoh_gain_closed(double z) { return std::expm1(z) / z; }

double zoh_gain_series(double z) {
  // 1 + z/2 + z^2/6 + z^3/24 + z^4/120
  return 1.0 + z * (1.0 / 2 + z * (1.0 / 6 + z * (1.0 / 24 + z * (1.0 / 120))));
}

double zoh_gain(double z) {
  return std::abs(z) < kZohSeriesThreshold ? zoh_gain_series(z)
                                           : zoh_gain_closed(z);
}

double zoh_gain_derivative(double z) {
  if (std::abs(z) < 1e-2) {
    // sum_k k z^(k-1) / (k+1)!
    return 1.0 / 2 +
           z * (1.0 / 3 + z * (1.0 / 8 + z * (1.0 / 30 + z * (1.0 / 144))));
  }
  return (z * std::exp(z) - std::expm1(z)) / (z * z);
}

Discretized discretize_zoh(double a, double delta, double b) {
  if (!std::isfinite(a) || !std::isfinite(delta) || !std::isfinite(b)) {
    throw NonFiniteError("discretize_zoh: non-finite input (A=" +
                         std::to_string(a) + ", delta=" +
                         std::to_string(delta) + ", B=" + std::to_string(b) +
                         ")");
  }
  if (delta < 0.0) {
    throw InvalidArgument("discretize_zoh: delta must be >= 0, got " +
                          std::to_string(delta));
  }
  const double z = delta * a;
  return {std::exp(z), delta * zoh_gain(z) * b};
}

SelectionTensors selection_projections(const Tensor& X,
                                       const SsmParams& params) {
  params.validate();
  const std::size_t d = params.channels();
  const std::size_t n = params.state_size();
  if (X.rank() != 3 || X.dim(2) != d) {
    throw ShapeError("selection_projections: X must be batch x L x " +
                     std::to_string(d) + ", got " + shape_to_string(X.shape()));
  }
  const std::size_t batch = X.dim(0);
  const std::size_t steps = X.dim(1);
  SelectionTensors out{Tensor({batch, steps, n}), Tensor({batch, steps, n}),
                       Tensor({batch, steps, d})};
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t j = 0; j < n; ++j) {
        double bj = 0.0;
        double cj = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          bj += X.at(b, t, i) * params.W_B.at(i, j);
          cj += X.at(b, t, i) * params.W_C.at(i, j);
        }
        out.B.at(b, t, j) = bj;
        out.C.at(b, t, j) = cj;
      }
      for (std::size_t k = 0; k < d; ++k) {
        double pre = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          pre += X.at(b, t, i) * params.W_delta.at(i, k);
        }
        out.delta.at(b, t, k) = softplus_value(pre + params.b_delta[k]);
      }
    }
  }
  return out;
}

DiscretizedSteps discretize_steps(const Tensor& A,
                                  const SelectionTensors& sel) {
  const std::size_t d = A.dim(0);
  const std::size_t n = A.dim(1);
  const std::size_t batch = sel.delta.dim(0);
  const std::size_t steps = sel.delta.dim(1);
  expect_shape("discretize_steps B_t", sel.B, {batch, steps, n});
  expect_shape("discretize_steps delta_t", sel.delta, {batch, steps, d});

  DiscretizedSteps out{Tensor({batch, steps, d, n}),
                       Tensor({batch, steps, d, n})};
  std::size_t idx = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t c = 0; c < d; ++c) {
        const double delta = sel.delta.at(b, t, c);
        for (std::size_t j = 0; j < n; ++j, ++idx) {
          const auto zoh = discretize_zoh(A.at(c, j), delta, sel.B.at(b, t, j));
          out.A_bar[idx] = zoh.A_bar;
          out.B_bar[idx] = zoh.B_bar;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scans

namespace {

struct ScanDims {
  std::size_t batch;
  std::size_t steps;
  std::size_t channels;
  std::size_t state;
};

ScanDims check_scan_inputs(const DiscretizedSteps& s, const Tensor& C,
                           const Tensor& x, const Tensor& h0) {
  if (s.A_bar.rank() != 4) {
    throw ShapeError("selective_scan: A_bar must be batch x L x D x N, got " +
                     shape_to_string(s.A_bar.shape()));
  }
  const ScanDims dims{s.A_bar.dim(0), s.A_bar.dim(1), s.A_bar.dim(2),
                      s.A_bar.dim(3)};
  expect_shape("selective_scan B_bar", s.B_bar, s.A_bar.shape());
  expect_shape("selective_scan C", C, {dims.batch, dims.steps, dims.state});
  expect_shape("selective_scan x", x, {dims.batch, dims.steps, dims.channels});
  if (h0.size() != 0) {
    expect_shape("selective_scan h0", h0,
                 {dims.batch, dims.channels, dims.state});
  }
  return dims;
}

void check_state(std::span<const double> h, std::size_t batch, std::size_t t) {
  for (double v : h) {
    if (!std::isfinite(v)) {
      throw NonFiniteError("selective_scan: non-finite state at batch " +
                           std::to_string(batch) + ", step " +
                           std::to_string(t));
    }
  }
}

}  // namespace

ScanResult selective_scan_sequential(const DiscretizedSteps& steps,
                                     const Tensor& C, const Tensor& x,
                                     const Tensor& h0) {
  const ScanDims dims = check_scan_inputs(steps, C, x, h0);
  const std::size_t dn = dims.channels * dims.state;
  ScanResult out{Tensor({dims.batch, dims.steps, dims.channels}),
                 h0.size() != 0 ? h0
                                : Tensor({dims.batch, dims.channels, dims.state})};

  for (std::size_t b = 0; b < dims.batch; ++b) {
    std::span<double> h = out.h_final.values().subspan(b * dn, dn);
    for (std::size_t t = 0; t < dims.steps; ++t) {
      const std::size_t base = (b * dims.steps + t) * dn;
      for (std::size_t c = 0; c < dims.channels; ++c) {
        const double xt = x.at(b, t, c);
        double y = 0.0;
        for (std::size_t j = 0; j < dims.state; ++j) {
          const std::size_t k = c * dims.state + j;
          h[k] = steps.A_bar[base + k] * h[k] + steps.B_bar[base + k] * xt;
          y += C.at(b, t, j) * h[k];
        }
        out.y.at(b, t, c) = y;
      }
      check_state(h, b, t);
    }
  }
  return out;
}

ScanResult selective_scan_parallel(const DiscretizedSteps& steps,
                                   const Tensor& C, const Tensor& x,
                                   const Tensor& h0,
                                   const ParallelScanOptions& options) {
  const ScanDims dims = check_scan_inputs(steps, C, x, h0);
  if (options.chunk_size == 0) {
    throw InvalidArgument("selective_scan_parallel: chunk_size must be > 0");
  }
  const std::size_t dn = dims.channels * dims.state;
  const std::size_t chunk = options.chunk_size;
  const std::size_t chunks = (dims.steps + chunk - 1) / chunk;
  const std::size_t tasks = dims.batch * chunks;

  ScanResult out{Tensor({dims.batch, dims.steps, dims.channels}),
                 h0.size() != 0 ? h0
                                : Tensor({dims.batch, dims.channels, dims.state})};
  if (dims.steps == 0) return out;

  // Per-chunk aggregate (a, b) such that h_end = a * h_start + b.
  std::vector<double> agg_a(tasks * dn, 1.0);
  std::vector<double> agg_b(tasks * dn, 0.0);
  // State entering each chunk.
  std::vector<double> carry(tasks * dn, 0.0);

  auto chunk_range = [&](std::size_t c) {
    const std::size_t begin = c * chunk;
    return std::pair{begin, std::min(begin + chunk, dims.steps)};
  };

  auto reduce_chunk = [&](std::size_t task) {
    const std::size_t b = task / chunks;
    const auto [begin, end] = chunk_range(task % chunks);
    double* a_acc = agg_a.data() + task * dn;
    double* b_acc = agg_b.data() + task * dn;
    for (std::size_t t = begin; t < end; ++t) {
      const std::size_t base = (b * dims.steps + t) * dn;
      for (std::size_t c = 0; c < dims.channels; ++c) {
        const double xt = x.at(b, t, c);
        for (std::size_t j = 0; j < dims.state; ++j) {
          const std::size_t k = c * dims.state + j;
          const double a_t = steps.A_bar[base + k];
          // (a_t, u_t) o (a_acc, b_acc)
          b_acc[k] = a_t * b_acc[k] + steps.B_bar[base + k] * xt;
          a_acc[k] = a_t * a_acc[k];
        }
      }
    }
  };

  auto scan_chunk = [&](std::size_t task) {
    const std::size_t b = task / chunks;
    const auto [begin, end] = chunk_range(task % chunks);
    std::vector<double> h(carry.begin() + static_cast<std::ptrdiff_t>(task * dn),
                          carry.begin() + static_cast<std::ptrdiff_t>((task + 1) * dn));
    for (std::size_t t = begin; t < end; ++t) {
      const std::size_t base = (b * dims.steps + t) * dn;
      for (std::size_t c = 0; c < dims.channels; ++c) {
        const double xt = x.at(b, t, c);
        double y = 0.0;
        for (std::size_t j = 0; j < dims.state; ++j) {
          const std::size_t k = c * dims.state + j;
          h[k] = steps.A_bar[base + k] * h[k] + steps.B_bar[base + k] * xt;
          y += C.at(b, t, j) * h[k];
        }
        out.y.at(b, t, c) = y;
      }
      check_state(h, b, t);
    }
    if (end == dims.steps) {
      std::copy(h.begin(), h.end(),
                out.h_final.values().begin() + static_cast<std::ptrdiff_t>(b * dn));
    }
  };

  std::size_t workers = options.threads != 0
                            ? options.threads
                            : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, tasks);

  auto run_all = [&](auto&& body) {
    if (workers <= 1) {
      for (std::size_t task = 0; task < tasks; ++task) body(task);
      return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      pool.reserve(workers);
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (std::size_t task = next++; task < tasks; task = next++) body(task);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  };

  run_all(reduce_chunk);

  // Exclusive prefix over chunk aggregates, in chunk order.
  for (std::size_t b = 0; b < dims.batch; ++b) {
    std::vector<double> h(out.h_final.values().begin() + static_cast<std::ptrdiff_t>(b * dn),
                          out.h_final.values().begin() + static_cast<std::ptrdiff_t>((b + 1) * dn));
    for (std::size_t c = 0; c < chunks; ++c) {
      const std::size_t task = b * chunks + c;
      std::copy(h.begin(), h.end(), carry.begin() + static_cast<std::ptrdiff_t>(task * dn));
      for (std::size_t k = 0; k < dn; ++k) {
        h[k] = agg_a[task * dn + k] * h[k] + agg_b[task * dn + k];
      }
    }
  }

  run_all(scan_chunk);
  return out;
}

ScanResult selective_ssm(const Tensor& X, const SsmParams& params) {
  const SelectionTensors sel = selection_projections(X, params);
  const DiscretizedSteps steps = discretize_steps(params.A, sel);
  return selective_scan_sequential(steps, sel.C, X);
}

// ---------------------------------------------------------------------------
// Differentiable path

SsmVars bind(Graph& graph, const SsmParams& params, bool trainable) {
  params.validate();
  return {graph.leaf(params.A, trainable), graph.leaf(params.W_B, trainable),
          graph.leaf(params.W_C, trainable),
          graph.leaf(params.W_delta, trainable),
          graph.leaf(params.b_delta, trainable)};
}

SelectionVars selection_projections(const SsmVars& params, Var X) {
  if (X.shape().size() != 2 || X.shape()[1] != params.A.shape()[0]) {
    throw ShapeError("selection_projections: X must be L x " +
                     std::to_string(params.A.shape()[0]) + ", got " +
                     shape_to_string(X.shape()));
  }
  return {matmul(X, params.W_B), matmul(X, params.W_C),
          softplus(add(matmul(X, params.W_delta), params.b_delta))};
}

Var zoh_gain(Var z) {
  const Tensor& zv = z.value();
  Tensor out(zv.shape());
  for (std::size_t i = 0; i < zv.size(); ++i) out[i] = zoh_gain(zv[i]);
  return z.graph()->record("zoh_gain", std::move(out), {z.id()},
                           [](const BackwardContext& ctx) {
                             const Tensor& x = *ctx.in_values[0];
                             Tensor& gx = *ctx.in_grads[0];
                             for (std::size_t i = 0; i < x.size(); ++i) {
                               gx[i] += ctx.out_grad[i] * zoh_gain_derivative(x[i]);
                             }
                           });
}

Var selective_scan(const SsmVars& params, const SelectionVars& sel, Var x) {
  const std::size_t d = params.A.shape()[0];
  const std::size_t n = params.A.shape()[1];
  if (x.shape().size() != 2 || x.shape()[1] != d) {
    throw ShapeError("selective_scan: x must be L x " + std::to_string(d) +
                     ", got " + shape_to_string(x.shape()));
  }
  const std::size_t steps = x.shape()[0];
  if (sel.B.shape() != Shape{steps, n} || sel.C.shape() != Shape{steps, n} ||
      sel.delta.shape() != Shape{steps, d}) {
    throw ShapeError("selective_scan: selection shapes B " +
                     shape_to_string(sel.B.shape()) + ", C " +
                     shape_to_string(sel.C.shape()) + ", delta " +
                     shape_to_string(sel.delta.shape()) +
                     " do not match x " + shape_to_string(x.shape()));
  }
  if (steps == 0) throw InvalidArgument("selective_scan: empty sequence");

  std::vector<Var> ys;
  ys.reserve(steps);
  Var h;
  for (std::size_t t = 0; t < steps; ++t) {
    Var delta_t = reshape(row(sel.delta, t), {d, 1});
    Var z = mul(delta_t, params.A);
    Var b_bar = mul(mul(delta_t, zoh_gain(z)), reshape(row(sel.B, t), {1, n}));
    Var drive = mul(b_bar, reshape(row(x, t), {d, 1}));
    h = h.valid() ? add(mul(exp(z), h), drive) : drive;
    if (!h.value().all_finite()) {
      throw NonFiniteError("selective_scan: non-finite state at step " +
                           std::to_string(t));
    }
    ys.push_back(reshape(matmul(h, reshape(row(sel.C, t), {n, 1})), {d}));
  }
  return stack_rows(ys);
}

Var selective_ssm(const SsmVars& params, Var X) {
  return selective_scan(params, selection_projections(params, X), X);
}

}  // namespace mambastock::ssm
