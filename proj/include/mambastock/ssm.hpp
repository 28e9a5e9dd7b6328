#pragma once

// Selective state-space layer: diagonal continuous-time A per channel,
// zero-order-hold discretization with a per-step, per-channel sample time,
// and input-dependent B_t, C_t, delta_t produced by linear projections.
//
// Shapes (D = input channels, N = state size, L = steps):
//   A        D x N      W_B, W_C  D x N
//   W_delta  D x D      b_delta   D
//   B_t, C_t batch x L x N        delta_t  batch x L x D
//   h        batch x D x N        y        batch x L x D
//
// Recurrence per channel d and step t:
//   A_bar = exp(delta_t[d] * A[d,:])
//   B_bar = (exp(delta_t[d] * A[d,:]) - 1) / A[d,:] * B_t
//   h_t[d,:] = A_bar * h_{t-1}[d,:] + B_bar * x_t[d]
//   y_t[d]   = <C_t, h_t[d,:]>

#include <cstddef>
#include <cstdint>

#include "mambastock/diffcore.hpp"
#include "mambastock/tensor.hpp"

namespace mambastock::ssm {

struct SsmParams {
  Tensor A;
  Tensor W_B;
  Tensor W_C;
  Tensor W_delta;
  Tensor b_delta;

  std::size_t channels() const { return A.dim(0); }
  std::size_t state_size() const { return A.dim(1); }
  // Throws ShapeError unless every array matches the layout above.
  void validate() const;
};

// Below this |delta * A| the input gain switches to its Taylor series.
inline constexpr double kZohSeriesThreshold = 1e-4;

// (e^z - 1) / z, the ZOH input gain per unit sample time.
double zoh_gain(double z);
double zoh_gain_closed(double z);
double zoh_gain_series(double z);
// d/dz of zoh_gain.
double zoh_gain_derivative(double z);

struct Discretized {
  double A_bar;
  double B_bar;
};

// Exact ZOH of a scalar diagonal entry. delta == 0 gives (1, 0).
Discretized discretize_zoh(double a, double delta, double b);

struct SelectionTensors {
  Tensor B;      // batch x L x N
  Tensor C;      // batch x L x N
  Tensor delta;  // batch x L x D, strictly positive
};

// Applies the projections independently at every step. X is batch x L x D.
SelectionTensors selection_projections(const Tensor& X, const SsmParams& params);

struct DiscretizedSteps {
  Tensor A_bar;  // batch x L x D x N
  Tensor B_bar;  // batch x L x D x N
};

DiscretizedSteps discretize_steps(const Tensor& A, const SelectionTensors& sel);

struct ScanResult {
  Tensor y;        // batch x L x D
  Tensor h_final;  // batch x D x N
};

// Plain left-to-right recurrence. An empty (default) h0 means a zero state.
ScanResult selective_scan_sequential(const DiscretizedSteps& steps,
                                     const Tensor& C, const Tensor& x,
                                     const Tensor& h0 = Tensor(Shape{0}));

struct ParallelScanOptions {
  std::size_t chunk_size = 64;
  // 0 picks std::thread::hardware_concurrency().
  std::size_t threads = 0;
};

// Same recurrence as the sequential scan, evaluated as a chunked prefix scan
// over (a, b) pairs with (a2, b2) o (a1, b1) = (a2 a1, a2 b1 + b2). Results
// are bit-reproducible for a fixed chunk size regardless of thread count.
ScanResult selective_scan_parallel(const DiscretizedSteps& steps,
                                   const Tensor& C, const Tensor& x,
                                   const Tensor& h0 = Tensor(Shape{0}),
                                   const ParallelScanOptions& options = {});

// Projections + discretization + sequential scan in one call.
ScanResult selective_ssm(const Tensor& X, const SsmParams& params);

// ---------------------------------------------------------------------------
// Differentiable path (single sequence, X is L x D).

struct SsmVars {
  Var A;
  Var W_B;
  Var W_C;
  Var W_delta;
  Var b_delta;
};

SsmVars bind(Graph& graph, const SsmParams& params, bool trainable);

struct SelectionVars {
  Var B;      // L x N
  Var C;      // L x N
  Var delta;  // L x D
};

SelectionVars selection_projections(const SsmVars& params, Var X);

// Elementwise zoh_gain as a graph primitive.
Var zoh_gain(Var z);

// Sequential scan with per-step discretization; returns y (L x D).
Var selective_scan(const SsmVars& params, const SelectionVars& sel, Var x);

Var selective_ssm(const SsmVars& params, Var X);

}  // namespace mambastock::ssm
