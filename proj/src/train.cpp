#include "mambastock/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>

#include "mambastock/diffcore.hpp"
#include "mambastock/errors.hpp"

namespace mambastock::train {

AdamState::AdamState(std::span<const Tensor* const> params, AdamHyper hyper)
    : hyper_(hyper) {
  for (const Tensor* p : params) {
    m_.emplace_back(p->shape());
    v_.emplace_back(p->shape());
  }
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
               AdamState& state, double lr, std::span<const std::string> names) {
  if (params.size() != grads.size() || params.size() != state.m_.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) +
                     " params, " + std::to_string(grads.size()) + " grads, " +
                     std::to_string(state.m_.size()) + " moment slots");
  }
  if (!(lr > 0.0)) throw InvalidArgument("adam_step: lr must be positive");
  auto label = [&](std::size_t i) {
    return i < names.size() ? names[i] : "#" + std::to_string(i);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->shape() ||
        state.m_[i].shape() != params[i]->shape()) {
      throw ShapeError("adam_step: gradient for " + label(i) + " has shape " +
                       shape_to_string(grads[i].shape()) + ", parameter has " +
                       shape_to_string(params[i]->shape()));
    }
    if (!grads[i].all_finite()) {
      throw NonFiniteError("adam_step: non-finite gradient for " + label(i));
    }
  }

  const auto& h = state.hyper_;
  ++state.step_;
  const double t = static_cast<double>(state.step_);
  const double correction1 = 1.0 - std::pow(h.beta1, t);
  const double correction2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& m = state.m_[i];
    Tensor& v = state.v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = grads[i][k];
      m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * g;
      v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * g * g;
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      p[k] -= lr * m_hat / (std::sqrt(v_hat) + h.eps);
    }
  }
}

void TrainConfig::validate() const {
  if (epochs == 0) throw InvalidArgument("train: epochs must be >= 1");
  if (!(lr > 0.0)) throw InvalidArgument("train: lr must be positive");
  if (state_size == 0) throw InvalidArgument("train: state_size must be >= 1");
  if (layer_count == 0) throw InvalidArgument("train: layer_count must be >= 1");
  if (horizon != 0 && horizon != 1) throw InvalidArgument("train: horizon must be 0 or 1");
  if (clip_norm && !(*clip_norm > 0.0)) {
    throw InvalidArgument("train: clip_norm must be positive");
  }
}

double clip_global_norm(std::span<Tensor> grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads) {
    for (double v : g.values()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Tensor& g : grads) {
      for (double& v : g.values()) v *= factor;
    }
  }
  return norm;
}

TrainHistory train(model::ModelParams& params, const Tensor& features,
                   std::span<const double> targets, const TrainConfig& config) {
  config.validate();
  if (features.rank() != 2 || features.dim(0) == 0) {
    throw DataError("train: empty training window");
  }
  if (features.dim(0) != targets.size()) {
    throw ShapeError("train: " + std::to_string(features.dim(0)) +
                     " feature rows but " + std::to_string(targets.size()) +
                     " targets");
  }
  const Tensor target_tensor({targets.size(), 1},
                             std::vector<double>(targets.begin(), targets.end()));

  auto named = model::parameters(params);
  std::vector<Tensor*> slots;
  std::vector<std::string> names;
  for (auto& [name, tensor] : named) {
    slots.push_back(tensor);
    names.push_back(name);
  }
  AdamState state(slots);
  params.meta = {config.epochs, config.lr, config.horizon, config.test_size};

  TrainHistory history;
  double last_finite = std::nan("");
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();

    Graph graph;
    const model::ModelVars vars = model::bind(graph, params, true);
    Var pred = model::forward(vars, graph.constant(features));
    Var loss = model::mse_loss(pred, graph.constant(target_tensor));
    const double loss_value = loss.value().item();
    if (!std::isfinite(loss_value)) {
      throw NonFiniteError("train: loss became non-finite at epoch " +
                           std::to_string(epoch + 1) + " (last finite loss " +
                           std::to_string(last_finite) + ")");
    }
    last_finite = loss_value;
    graph.backward(loss);

    // Gradients in parameters() order.
    std::vector<Tensor> grads;
    for (std::size_t l = 0; l < vars.layers.size(); ++l) {
      const auto& layer = vars.layers[l];
      for (Var v : {layer.A, layer.W_B, layer.W_C, layer.W_delta, layer.b_delta}) {
        grads.push_back(v.grad());
      }
      if (!vars.gates.empty()) grads.push_back(vars.gates[l].grad());
    }
    grads.push_back(vars.w_out.grad());
    grads.push_back(vars.b_out.grad());

    if (config.clip_norm) clip_global_norm(grads, *config.clip_norm);
    adam_step(slots, grads, state, config.lr, names);

    bool flipped = false;
    for (const auto& layer : params.layers) {
      for (double a : layer.ssm.A.values()) flipped = flipped || !(a < 0.0);
    }
    if (flipped) {
      if (history.a_sign_flips == 0) {
        std::cerr << "warning: state matrix entry became non-negative at epoch "
                  << epoch + 1 << '\n';
      }
      ++history.a_sign_flips;
    }

    history.loss.push_back(loss_value);
    history.seconds.push_back(std::chrono::duration<double>(
                                  std::chrono::steady_clock::now() - start)
                                  .count());
    ++history.epochs;
  }
  return history;
}

void write_history_csv(const std::filesystem::path& path,
                       const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.precision(17);
  out << "epoch,loss,seconds\n";
  for (std::size_t i = 0; i < history.loss.size(); ++i) {
    out << i + 1 << ',' << history.loss[i] << ',' << history.seconds[i] << '\n';
  }
}

}  // namespace mambastock::train
