#include "mambastock/model.hpp"

#include <cmath>
#include <random>

#include "mambastock/errors.hpp"

namespace mambastock::model {

void ModelConfig::validate() const {
  if (feature_dim == 0) throw InvalidArgument("model config: feature_dim must be >= 1");
  if (state_size == 0) throw InvalidArgument("model config: state_size must be >= 1");
  if (layer_count == 0) throw InvalidArgument("model config: layer_count must be >= 1");
}

std::vector<NamedParam> parameters(ModelParams& params) {
  std::vector<NamedParam> out;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    auto& layer = params.layers[l];
    out.emplace_back(prefix + "A", &layer.ssm.A);
    out.emplace_back(prefix + "W_B", &layer.ssm.W_B);
    out.emplace_back(prefix + "W_C", &layer.ssm.W_C);
    out.emplace_back(prefix + "W_delta", &layer.ssm.W_delta);
    out.emplace_back(prefix + "b_delta", &layer.ssm.b_delta);
    if (params.config.gated) out.emplace_back(prefix + "W_gate", &layer.W_gate);
  }
  out.emplace_back("head.w_out", &params.w_out);
  out.emplace_back("head.b_out", &params.b_out);
  return out;
}

std::vector<ConstNamedParam> parameters(const ModelParams& params) {
  std::vector<ConstNamedParam> out;
  for (auto& [name, tensor] : parameters(const_cast<ModelParams&>(params))) {
    out.emplace_back(name, tensor);
  }
  return out;
}

double initial_delta_bias() { return std::log(std::expm1(0.01)); }

namespace {

// Uniform in [-bound, bound] from the top 53 bits of a 64-bit draw, so the
// stream is identical across standard libraries.
Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor out(std::move(shape));
  for (double& v : out.values()) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = (2.0 * u - 1.0) * bound;
  }
  return out;
}

}  // namespace

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.feature_dim;
  const std::size_t n = config.state_size;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  std::mt19937_64 rng(config.seed);

  ModelParams params;
  params.config = config;
  for (std::size_t l = 0; l < config.layer_count; ++l) {
    LayerParams layer;
    layer.ssm.A = Tensor({d, n});
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t j = 0; j < n; ++j) {
        layer.ssm.A.at(c, j) = -static_cast<double>(j + 1);
      }
    }
    layer.ssm.W_B = uniform_tensor({d, n}, bound, rng);
    layer.ssm.W_C = uniform_tensor({d, n}, bound, rng);
    layer.ssm.W_delta = uniform_tensor({d, d}, bound, rng);
    layer.ssm.b_delta = Tensor({d}, initial_delta_bias());
    layer.W_gate = config.gated ? uniform_tensor({d, d}, bound, rng) : Tensor(Shape{0});
    params.layers.push_back(std::move(layer));
  }
  params.w_out = uniform_tensor({d, 1}, bound, rng);
  params.b_out = Tensor({1}, 0.0);
  return params;
}

std::vector<double> forward(const ModelParams& params, const Tensor& X) {
  const std::size_t d = params.config.feature_dim;
  if (X.rank() != 2 || X.dim(1) != d) {
    throw ShapeError("model forward: X must be L x " + std::to_string(d) +
                     ", got " + shape_to_string(X.shape()));
  }
  const std::size_t steps = X.dim(0);
  Tensor input = X.reshaped({1, steps, d});
  for (const auto& layer : params.layers) {
    Tensor y = ssm::selective_ssm(input, layer.ssm).y;
    if (params.config.gated) {
      for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t k = 0; k < d; ++k) {
          double pre = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            pre += input.at(0, t, i) * layer.W_gate.at(i, k);
          }
          y.at(0, t, k) *= sigmoid_value(pre);
        }
      }
    }
    input = std::move(y);
  }
  std::vector<double> rates(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += input.at(0, t, k) * params.w_out[k];
    rates[t] = std::tanh(acc + params.b_out[0]);
    if (!std::isfinite(rates[t])) {
      throw NonFiniteError("model forward: non-finite output at step " +
                           std::to_string(t));
    }
  }
  return rates;
}

ModelVars bind(Graph& graph, const ModelParams& params, bool trainable) {
  ModelVars vars;
  for (const auto& layer : params.layers) {
    vars.layers.push_back(ssm::bind(graph, layer.ssm, trainable));
    if (params.config.gated) vars.gates.push_back(graph.leaf(layer.W_gate, trainable));
  }
  vars.w_out = graph.leaf(params.w_out, trainable);
  vars.b_out = graph.leaf(params.b_out, trainable);
  return vars;
}

ModelVars bind_named(const NamedVars& vars, const ModelConfig& config) {
  ModelVars out;
  for (std::size_t l = 0; l < config.layer_count; ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    out.layers.push_back({bound(vars, prefix + "A"), bound(vars, prefix + "W_B"),
                          bound(vars, prefix + "W_C"),
                          bound(vars, prefix + "W_delta"),
                          bound(vars, prefix + "b_delta")});
    if (config.gated) out.gates.push_back(bound(vars, prefix + "W_gate"));
  }
  out.w_out = bound(vars, "head.w_out");
  out.b_out = bound(vars, "head.b_out");
  return out;
}

NamedTensors named_tensors(const ModelParams& params) {
  NamedTensors out;
  for (const auto& [name, tensor] : parameters(params)) out.emplace(name, *tensor);
  return out;
}

Var forward(const ModelVars& vars, Var X) {
  Var input = X;
  for (std::size_t l = 0; l < vars.layers.size(); ++l) {
    Var y = ssm::selective_ssm(vars.layers[l], input);
    if (!vars.gates.empty()) y = mul(y, sigmoid(matmul(input, vars.gates[l])));
    input = y;
  }
  Var out = tanh(add(matmul(input, vars.w_out), vars.b_out));
  const Tensor& values = out.value();
  for (std::size_t t = 0; t < values.size(); ++t) {
    if (!std::isfinite(values[t])) {
      throw NonFiniteError("model forward: non-finite output at step " +
                           std::to_string(t));
    }
  }
  return out;
}

double mse_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw ShapeError("mse_loss: prediction length " + std::to_string(pred.size()) +
                     " differs from target length " + std::to_string(target.size()));
  }
  if (pred.empty()) throw InvalidArgument("mse_loss: empty sequences");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double diff = pred[i] - target[i];
    total += diff * diff;
  }
  return total / static_cast<double>(pred.size());
}

Var mse_loss(Var pred, Var target) { return mse(pred, target); }

}  // namespace mambastock::model
