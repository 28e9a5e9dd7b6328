#pragma once

// Forecasting network: standardized feature window -> stacked selective-SSM
// layers -> linear head over channels -> tanh, giving one bounded movement
// rate per step.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mambastock/data.hpp"
#include "mambastock/diffcore.hpp"
#include "mambastock/ssm.hpp"
#include "mambastock/tensor.hpp"

namespace mambastock::model {

struct ModelConfig {
  std::size_t feature_dim = data::kFeatureCount;
  std::size_t state_size = 16;
  std::size_t layer_count = 1;
  std::uint64_t seed = 42;
  // Multiplies each layer's output by sigmoid(X W_gate). Off by default.
  bool gated = false;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerParams {
  ssm::SsmParams ssm;
  Tensor W_gate;  // D x D when gated, empty otherwise
};

// Training metadata carried alongside the weights.
struct TrainingMeta {
  std::size_t epochs = 0;
  double lr = 0.0;
  int horizon = 0;
  std::size_t test_size = 0;
  friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

struct ModelParams {
  ModelConfig config;
  std::vector<LayerParams> layers;
  Tensor w_out;  // D x 1
  Tensor b_out;  // [1]
  data::NormStats norm;
  TrainingMeta meta;
};

using NamedParam = std::pair<std::string, Tensor*>;
using ConstNamedParam = std::pair<std::string, const Tensor*>;

// Every trainable array exactly once, in a fixed order
// ("layer0.A", "layer0.W_B", ..., "head.w_out", "head.b_out").
std::vector<NamedParam> parameters(ModelParams& params);
std::vector<ConstNamedParam> parameters(const ModelParams& params);

// softplus^{-1}(0.01): initial step-size bias.
double initial_delta_bias();

ModelParams init_params(const ModelConfig& config);

// Plain (non-taped) forward pass. X is L x D; returns L rates in (-1, 1).
std::vector<double> forward(const ModelParams& params, const Tensor& X);

// Graph handles for every parameter, keyed like parameters().
struct ModelVars {
  std::vector<ssm::SsmVars> layers;
  std::vector<Var> gates;
  Var w_out;
  Var b_out;
};

ModelVars bind(Graph& graph, const ModelParams& params, bool trainable);
// Rebuilds ModelVars from named graph inputs (as used by grad_check).
ModelVars bind_named(const NamedVars& vars, const ModelConfig& config);
NamedTensors named_tensors(const ModelParams& params);

// Taped forward pass; returns an L x 1 node.
Var forward(const ModelVars& vars, Var X);

// Mean squared error over equal-length sequences.
double mse_loss(std::span<const double> pred, std::span<const double> target);
Var mse_loss(Var pred, Var target);

// Checkpoint archive: a text file of named arrays with hex-float values,
// plus config, normalization statistics and training metadata. Round-trips
// bit-exactly.
std::string serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(std::string_view text);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace mambastock::model
