#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mambastock/data.hpp"
#include "mambastock/model.hpp"
#include "mambastock/train.hpp"

namespace mambastock::eval {

struct MetricsReport {
  std::size_t n = 0;
  double mse = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  // Empty when undefined: mape if any actual value is zero, both R^2 when
  // every actual value is equal.
  std::optional<double> mape;
  // sum (pred - mean)^2 / sum (actual - mean)^2, the explained-variance ratio.
  std::optional<double> r2_paper;
  // 1 - sum (pred - actual)^2 / sum (actual - mean)^2
  std::optional<double> r2_standard;
};

// Requires n >= 2 and equal lengths. Checks rmse^2 == mse and mae <= rmse.
MetricsReport compute_metrics(std::span<const double> pred,
                              std::span<const double> actual);

// prev_close[t] * (1 + rates[t]); throws on a rate <= -1 or a nonpositive
// anchor close.
std::vector<double> reconstruct_prices(std::span<const double> prev_close,
                                       std::span<const double> rates);

struct PredictionSeries {
  std::vector<std::string> dates;
  std::vector<double> actual_close;
  std::vector<double> actual_rate;
  std::vector<double> pred_rate;
  std::vector<double> pred_close;

  std::size_t size() const { return dates.size(); }
};

void write_predictions_csv(const std::filesystem::path& path,
                           const PredictionSeries& series);
// actual_rate is rebuilt from consecutive closes.
PredictionSeries read_predictions_csv(const std::filesystem::path& path);

// Self-contained SVG overlaying actual and predicted close by test index.
std::string render_chart_svg(const PredictionSeries& series,
                             const std::string& title = "");

enum class MetricsOn { kRates, kPrices };
MetricsOn parse_metrics_on(const std::string& text);
std::string to_string(MetricsOn on);

MetricsReport metrics_for(const PredictionSeries& series, MetricsOn on);

struct RunOptions {
  std::filesystem::path input;
  std::optional<std::filesystem::path> schema;
  train::TrainConfig train;
  MetricsOn metrics_on = MetricsOn::kPrices;
  bool gated = false;
  std::filesystem::path out_dir = ".";
  // Writes the normalized frame (debugging aid) when set.
  std::optional<std::filesystem::path> dump_normalized;
};

struct DataSummary {
  std::size_t rows = 0;
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;
  std::size_t dropped_rows = 0;
  std::string test_start;
  std::string test_end;
};

struct RunResult {
  model::ModelParams params;
  train::TrainHistory history;
  PredictionSeries predictions;
  MetricsReport metrics;
  DataSummary data;
};

// Versioned metrics document with the configuration echo. Contains no wall
// clock values, so identical runs produce identical bytes.
std::string metrics_json(const MetricsReport& report, MetricsOn on,
                         const model::ModelParams& params,
                         const DataSummary& data);

// load -> split -> normalize -> init -> train. Writes model.ckpt and
// history.csv into out_dir.
RunResult run_train(const RunOptions& options);

// Predicts the test window with a trained model. Writes metrics.json,
// predictions.csv and chart.svg into out_dir.
RunResult run_predict(const RunOptions& options, model::ModelParams params);

// run_train followed by run_predict.
RunResult run_experiment(const RunOptions& options);

// ---------------------------------------------------------------------------
// Scan benchmark

struct BenchOptions {
  std::vector<std::size_t> lengths{1024, 2048, 4096};
  std::vector<std::size_t> state_sizes{16};
  std::vector<std::size_t> dims{4};
  std::vector<std::size_t> chunks{16, 64, 256};
  std::size_t repetitions = 5;
  std::size_t threads = 0;
  std::uint64_t seed = 42;
};

struct BenchRow {
  std::size_t length;
  std::size_t state_size;
  std::size_t dim;
  std::string variant;  // "sequential" or "parallel-chunk-<k>"
  double median_seconds;
  double max_deviation;
};

// Median wall time over the repetitions and max |y - y_sequential|.
std::vector<BenchRow> scan_bench(const BenchOptions& options);
void write_bench_csv(const std::filesystem::path& path,
                     std::span<const BenchRow> rows);

}  // namespace mambastock::eval
