#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mambastock/model.hpp"
#include "mambastock/tensor.hpp"

namespace mambastock::train {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  // Zero moments shaped like each parameter.
  explicit AdamState(std::span<const Tensor* const> params, AdamHyper hyper = {});

  const AdamHyper& hyper() const noexcept { return hyper_; }
  std::uint64_t step() const noexcept { return step_; }
  const std::vector<Tensor>& first_moment() const noexcept { return m_; }
  const std::vector<Tensor>& second_moment() const noexcept { return v_; }

 private:
  friend void adam_step(std::span<Tensor* const>, std::span<const Tensor>,
                        AdamState&, double, std::span<const std::string>);
  AdamHyper hyper_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t step_ = 0;
};

// One bias-corrected Adam update in place. `names` label parameters in
// error messages and may be empty.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
               AdamState& state, double lr,
               std::span<const std::string> names = {});

struct TrainConfig {
  std::size_t epochs = 100;
  double lr = 0.01;
  std::uint64_t seed = 42;
  std::size_t state_size = 16;
  std::size_t layer_count = 1;
  std::size_t test_size = 300;
  int horizon = 0;
  bool normalize = true;
  // Rescale gradients to this global L2 norm when exceeded.
  std::optional<double> clip_norm;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> loss;     // per-epoch loss, evaluated before the step
  std::vector<double> seconds;  // wall time per epoch
  std::size_t epochs = 0;
  // Epochs after which some A entry was no longer strictly negative.
  std::size_t a_sign_flips = 0;
};

// Full-sequence training: one forward/backward/Adam step per epoch.
// `features` is L x D (already normalized), `targets` has length L.
TrainHistory train(model::ModelParams& params, const Tensor& features,
                   std::span<const double> targets, const TrainConfig& config);

// Scales gradients in place to `max_norm`; returns the norm before scaling.
double clip_global_norm(std::span<Tensor> grads, double max_norm);

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

}  // namespace mambastock::train
