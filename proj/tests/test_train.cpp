#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <doctest.h>

#include "mambastock/errors.hpp"
#include "mambastock/train.hpp"

using namespace mambastock;
using namespace mambastock::train;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

model::ModelConfig small_config() {
  model::ModelConfig c;
  c.feature_dim = 3;
  c.state_size = 4;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("adam step examples") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor theta = Tensor::vector({0.3, -2.0});
    std::vector<Tensor*> slots{&theta};
    AdamState state(slots);
    const std::vector<Tensor> grads{Tensor({2}, 0.0)};
    adam_step(slots, grads, state, 0.01);
    CHECK(theta.storage() == std::vector<double>{0.3, -2.0});
    CHECK(state.step() == 1);
  }
  SUBCASE("first step moves by lr / (1 + eps)") {
    Tensor theta = Tensor::scalar(0.0);
    std::vector<Tensor*> slots{&theta};
    AdamState state(slots);
    const std::vector<Tensor> grads{Tensor::scalar(1.0)};
    adam_step(slots, grads, state, 0.01);
    CHECK(std::abs(theta.item() - (-0.01 / (1.0 + 1e-8))) <= 1e-15);
  }
  SUBCASE("step counter equals the number of updates") {
    Tensor theta = Tensor::scalar(1.0);
    std::vector<Tensor*> slots{&theta};
    AdamState state(slots);
    for (int k = 0; k < 7; ++k) {
      const std::vector<Tensor> grads{Tensor::scalar(theta.item())};
      adam_step(slots, grads, state, 0.01);
    }
    CHECK(state.step() == 7);
  }
  SUBCASE("moments follow the update rule") {
    Tensor theta = Tensor::scalar(0.0);
    std::vector<Tensor*> slots{&theta};
    AdamState state(slots);
    adam_step(slots, std::vector<Tensor>{Tensor::scalar(2.0)}, state, 0.1);
    adam_step(slots, std::vector<Tensor>{Tensor::scalar(-1.0)}, state, 0.1);
    const double m = 0.9 * (0.1 * 2.0) + 0.1 * -1.0;
    const double v = 0.999 * (0.001 * 4.0) + 0.001 * 1.0;
    CHECK(std::abs(state.first_moment()[0].item() - m) <= 1e-15);
    CHECK(std::abs(state.second_moment()[0].item() - v) <= 1e-15);
    const double first = -0.1 * (0.2 / 0.1) / (std::sqrt(0.004 / 0.001) + 1e-8);
    const double second = -0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.998001)) + 1e-8);
    CHECK(std::abs(theta.item() - (first + second)) <= 1e-14);
  }
}

TEST_CASE("adam step decreases a quadratic away from its minimum") {
  for (double start : {-3.0, -0.5, 0.2, 1.0, 40.0}) {
    Tensor theta = Tensor::scalar(start);
    std::vector<Tensor*> slots{&theta};
    AdamState state(slots);
    const double before = 0.5 * start * start;
    adam_step(slots, std::vector<Tensor>{Tensor::scalar(start)}, state, 0.01);
    CAPTURE(start);
    CHECK(0.5 * theta.item() * theta.item() < before);
  }
}

TEST_CASE("adam step errors") {
  Tensor theta = Tensor::vector({1.0, 2.0});
  std::vector<Tensor*> slots{&theta};
  const std::vector<std::string> names{"layer0.W_B"};
  AdamState state(slots);
  CHECK_THROWS_AS(adam_step(slots, std::vector<Tensor>{Tensor({3}, 0.0)}, state, 0.01),
                  ShapeError);
  CHECK_THROWS_AS(adam_step(slots, std::vector<Tensor>{Tensor({2}, 0.0)}, state, 0.0),
                  InvalidArgument);
  try {
    adam_step(slots, std::vector<Tensor>{Tensor::vector({0.0, NAN})}, state, 0.01, names);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("layer0.W_B") != std::string::npos);
  }
}

TEST_CASE("global norm clipping") {
  std::vector<Tensor> grads{Tensor::vector({3.0}), Tensor::vector({4.0})};
  CHECK(clip_global_norm(grads, 10.0) == 5.0);
  CHECK(grads[0].item() == 3.0);
  CHECK(clip_global_norm(grads, 1.0) == 5.0);
  CHECK(std::abs(grads[0].item() - 0.6) <= 1e-15);
  CHECK(std::abs(grads[1].item() - 0.8) <= 1e-15);
}

TEST_CASE("training defaults") {
  const TrainConfig c;
  CHECK(c.epochs == 100);
  CHECK(c.lr == 0.01);
  CHECK(c.state_size == 16);
  CHECK(c.test_size == 300);
  CHECK(c.horizon == 0);
  TrainConfig bad;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = {};
  bad.horizon = 2;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("history records every epoch") {
  std::mt19937_64 rng(31);
  auto p = model::init_params(small_config());
  const Tensor X = random_tensor({30, 3}, rng);
  const std::vector<double> y(30, 0.02);
  TrainConfig c;
  c.epochs = 12;
  const auto h = train::train(p, X, y, c);
  CHECK(h.epochs == 12);
  CHECK(h.loss.size() == 12);
  CHECK(h.seconds.size() == 12);
  CHECK(p.meta.epochs == 12);
  CHECK(p.meta.lr == 0.01);

  const auto path = std::filesystem::temp_directory_path() / "mambastock_test_history.csv";
  write_history_csv(path, h);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,loss,seconds");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 12);
  std::filesystem::remove(path);
}

TEST_CASE("constant zero targets are learned") {
  std::mt19937_64 rng(32);
  model::ModelConfig mc;
  mc.state_size = 16;
  auto p = model::init_params(mc);
  const Tensor X = random_tensor({200, 15}, rng, -2.0, 2.0);
  const std::vector<double> y(200, 0.0);
  const auto h = train::train(p, X, y, TrainConfig{});
  CHECK(h.loss.size() == 100);
  CHECK(model::mse_loss(model::forward(p, X), y) < 1e-3);
}

TEST_CASE("training is bit-reproducible") {
  std::mt19937_64 rng(33);
  const Tensor X = random_tensor({40, 3}, rng);
  std::vector<double> y(40);
  for (double& v : y) v = std::uniform_real_distribution<double>(-0.05, 0.05)(rng);
  TrainConfig c;
  c.epochs = 15;
  auto a = model::init_params(small_config());
  auto b = model::init_params(small_config());
  const auto ha = train::train(a, X, y, c);
  const auto hb = train::train(b, X, y, c);
  CHECK(ha.loss == hb.loss);
  CHECK(model::serialize_checkpoint(a) == model::serialize_checkpoint(b));
}

TEST_CASE("training rejects mismatched and diverging inputs") {
  auto p = model::init_params(small_config());
  TrainConfig c;
  c.epochs = 2;
  CHECK_THROWS_AS(train::train(p, Tensor({5, 3}), std::vector<double>(4, 0.0), c), ShapeError);
  CHECK_THROWS_AS(train::train(p, Tensor({0, 3}), std::vector<double>{}, c), DataError);
  std::vector<double> y(5, 0.0);
  y[2] = NAN;
  try {
    train::train(p, Tensor({5, 3}, 0.1), y, c);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("clipped training stays finite") {
  std::mt19937_64 rng(34);
  auto p = model::init_params(small_config());
  const Tensor X = random_tensor({25, 3}, rng);
  const std::vector<double> y(25, 0.5);
  TrainConfig c;
  c.epochs = 10;
  c.clip_norm = 1e-3;
  const auto h = train::train(p, X, y, c);
  CHECK(h.loss.back() < h.loss.front());
}
