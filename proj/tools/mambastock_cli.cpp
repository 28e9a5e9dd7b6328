// Command-line front end: train, predict, experiment, scan-bench.

#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mambastock/errors.hpp"
#include "mambastock/eval.hpp"

namespace {

using mambastock::eval::RunOptions;

struct SharedFlags {
  std::string input;
  std::string schema;
  std::size_t test_size = 300;
  std::size_t epochs = 100;
  double lr = 0.01;
  std::size_t state_size = 16;
  std::size_t layers = 1;
  std::uint64_t seed = 42;
  int horizon = 0;
  std::string metrics_on = "prices";
  std::string out = ".";
  bool gated = false;
  double clip_norm = 0.0;
  std::string dump_normalized;
};

void add_shared(CLI::App* cmd, SharedFlags& f) {
  cmd->add_option("--input", f.input, "Input CSV (date, close, 15 features)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--schema", f.schema, "Column rename file of canonical=source lines")
      ->check(CLI::ExistingFile);
  cmd->add_option("--test-size", f.test_size, "Rows in the test window")
      ->capture_default_str();
  cmd->add_option("--epochs", f.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--state-size", f.state_size, "SSM state size N")->capture_default_str();
  cmd->add_option("--layers", f.layers, "Stacked selective-SSM layers")
      ->capture_default_str();
  cmd->add_option("--seed", f.seed, "Initialization seed")->capture_default_str();
  cmd->add_option("--horizon", f.horizon,
                  "0: same-day features predict the day's rate; 1: prior-day features")
      ->check(CLI::IsMember({0, 1}))
      ->capture_default_str();
  cmd->add_option("--metrics-on", f.metrics_on, "Compute metrics on rates or prices")
      ->check(CLI::IsMember({"rates", "prices"}))
      ->capture_default_str();
  cmd->add_option("--out", f.out, "Output directory")->capture_default_str();
  cmd->add_flag("--gated", f.gated, "Wrap each SSM layer output in a sigmoid gate");
  cmd->add_option("--clip-norm", f.clip_norm, "Clip gradients to this global norm");
  cmd->add_option("--dump-normalized", f.dump_normalized,
                  "Write the normalized frame to this CSV");
}

RunOptions to_run_options(const SharedFlags& f) {
  RunOptions o;
  o.input = f.input;
  if (!f.schema.empty()) o.schema = f.schema;
  o.train.test_size = f.test_size;
  o.train.epochs = f.epochs;
  o.train.lr = f.lr;
  o.train.state_size = f.state_size;
  o.train.layer_count = f.layers;
  o.train.seed = f.seed;
  o.train.horizon = f.horizon;
  if (f.clip_norm > 0.0) o.train.clip_norm = f.clip_norm;
  o.metrics_on = mambastock::eval::parse_metrics_on(f.metrics_on);
  o.gated = f.gated;
  o.out_dir = f.out;
  if (!f.dump_normalized.empty()) o.dump_normalized = f.dump_normalized;
  return o;
}

void print_summary(const mambastock::eval::RunResult& r) {
  const auto& m = r.metrics;
  std::cout << "n=" << m.n << " MSE=" << m.mse << " RMSE=" << m.rmse
            << " MAE=" << m.mae;
  if (m.mape) std::cout << " MAPE=" << *m.mape;
  if (m.r2_paper) std::cout << " R2=" << *m.r2_paper;
  if (m.r2_standard) std::cout << " r2_standard=" << *m.r2_standard;
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective state-space stock movement forecaster"};
  app.require_subcommand(1);

  SharedFlags train_flags, predict_flags, experiment_flags;
  auto* train_cmd = app.add_subcommand("train", "Train and write model.ckpt, history.csv");
  add_shared(train_cmd, train_flags);

  auto* predict_cmd = app.add_subcommand(
      "predict", "Predict the test window; write metrics.json, predictions.csv, chart.svg");
  add_shared(predict_cmd, predict_flags);
  std::string checkpoint;
  predict_cmd->add_option("--checkpoint", checkpoint, "Trained model (default OUT/model.ckpt)");

  auto* experiment_cmd =
      app.add_subcommand("experiment", "Train then predict; writes every artifact");
  add_shared(experiment_cmd, experiment_flags);

  mambastock::eval::BenchOptions bench;
  std::string bench_out = ".";
  auto* bench_cmd = app.add_subcommand("scan-bench", "Time sequential vs parallel scans");
  bench_cmd->add_option("--lengths", bench.lengths, "Sequence lengths")->capture_default_str();
  bench_cmd->add_option("--state-sizes", bench.state_sizes, "State sizes N")
      ->capture_default_str();
  bench_cmd->add_option("--dims", bench.dims, "Channel counts D")->capture_default_str();
  bench_cmd->add_option("--chunks", bench.chunks, "Parallel chunk sizes")
      ->capture_default_str();
  bench_cmd->add_option("--reps", bench.repetitions, "Repetitions per case (>= 5)")
      ->capture_default_str();
  bench_cmd->add_option("--threads", bench.threads, "Worker threads (0 = all cores)")
      ->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed, "Input seed")->capture_default_str();
  bench_cmd->add_option("--out", bench_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << nlohmann::json{{"error", "usage"}, {"message", e.what()}}.dump() << '\n';
    return 2;
  }

  try {
    namespace eval = mambastock::eval;
    if (*train_cmd) {
      const auto result = eval::run_train(to_run_options(train_flags));
      std::cout << "final training loss " << result.history.loss.back() << '\n';
    } else if (*predict_cmd) {
      RunOptions options = to_run_options(predict_flags);
      const std::filesystem::path ckpt =
          checkpoint.empty() ? options.out_dir / "model.ckpt"
                             : std::filesystem::path(checkpoint);
      auto params = mambastock::model::load_checkpoint(ckpt);
      // Window and alignment default to what the model was trained with.
      if (predict_cmd->count("--test-size") == 0 && params.meta.test_size > 0) {
        options.train.test_size = params.meta.test_size;
      }
      if (predict_cmd->count("--horizon") == 0) options.train.horizon = params.meta.horizon;
      print_summary(eval::run_predict(options, std::move(params)));
    } else if (*experiment_cmd) {
      print_summary(eval::run_experiment(to_run_options(experiment_flags)));
    } else if (*bench_cmd) {
      const auto rows = eval::scan_bench(bench);
      std::filesystem::create_directories(bench_out);
      eval::write_bench_csv(std::filesystem::path(bench_out) / "bench.csv", rows);
      for (const auto& row : rows) {
        std::cout << row.length << ' ' << row.variant << ' ' << row.median_seconds
                  << "s dev=" << row.max_deviation << '\n';
      }
    }
  } catch (const mambastock::Error& e) {
    std::cerr << nlohmann::json{{"error", e.kind()}, {"message", e.what()}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}
