#include <fstream>

#include "mambastock/errors.hpp"
#include "mambastock/eval.hpp"

namespace mambastock::eval {

namespace {

data::SeriesFrame load_input(const RunOptions& options) {
  const data::SchemaMapping schema = options.schema
                                         ? data::SchemaMapping::from_file(*options.schema)
                                         : data::SchemaMapping{};
  return data::load_csv(options.input, schema);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

Tensor leading_rows(const Tensor& m, std::size_t rows) {
  const std::size_t width = m.dim(1);
  return Tensor({rows, width},
                std::vector<double>(m.storage().begin(),
                                    m.storage().begin() + static_cast<std::ptrdiff_t>(rows * width)));
}

struct PreparedData {
  data::SeriesFrame frame;       // raw prices, normalized features
  data::SampleSeries samples;
  std::size_t train_samples = 0;
  DataSummary summary;
};

PreparedData prepare(const data::SeriesFrame& raw, const data::NormStats& stats,
                     std::size_t test_size, int horizon) {
  const auto split = data::split_train_test(raw, test_size);
  PreparedData out;
  out.frame = raw;
  out.frame.features = data::apply_norm(raw.features, stats);
  out.samples = data::make_samples(out.frame, horizon);
  if (out.samples.size() <= test_size) {
    throw DataError("need at least " + std::to_string(test_size + 2) +
                    " rows for a test window of " + std::to_string(test_size) +
                    ", got " + std::to_string(raw.rows()));
  }
  out.train_samples = out.samples.size() - test_size;
  out.summary.rows = raw.rows();
  out.summary.train_rows = split.train.rows();
  out.summary.test_rows = split.test.rows();
  out.summary.dropped_rows = raw.dropped_rows;
  out.summary.test_start = split.test.dates.front();
  out.summary.test_end = split.test.dates.back();
  return out;
}

data::NormStats identity_stats(std::size_t width) {
  data::NormStats stats;
  stats.mean.assign(width, 0.0);
  stats.std.assign(width, 1.0);
  return stats;
}

}  // namespace

RunResult run_train(const RunOptions& options) {
  const auto& config = options.train;
  config.validate();
  std::filesystem::create_directories(options.out_dir);

  const data::SeriesFrame raw = load_input(options);
  const auto split = data::split_train_test(raw, config.test_size);
  const data::NormStats stats = config.normalize
                                    ? data::fit_norm_stats(split.train.features)
                                    : identity_stats(raw.features.dim(1));
  PreparedData prepared = prepare(raw, stats, config.test_size, config.horizon);
  if (options.dump_normalized) {
    data::write_frame_csv(*options.dump_normalized, prepared.frame);
  }

  RunResult result;
  model::ModelConfig model_config;
  model_config.feature_dim = raw.features.dim(1);
  model_config.state_size = config.state_size;
  model_config.layer_count = config.layer_count;
  model_config.seed = config.seed;
  model_config.gated = options.gated;
  result.params = model::init_params(model_config);
  result.params.norm = stats;

  const Tensor train_features =
      leading_rows(prepared.samples.features, prepared.train_samples);
  const std::span<const double> train_targets(prepared.samples.targets.data(),
                                              prepared.train_samples);
  result.history = train::train(result.params, train_features, train_targets, config);
  result.data = prepared.summary;

  model::save_checkpoint(options.out_dir / "model.ckpt", result.params);
  train::write_history_csv(options.out_dir / "history.csv", result.history);
  return result;
}

RunResult run_predict(const RunOptions& options, model::ModelParams params) {
  std::filesystem::create_directories(options.out_dir);
  const std::size_t test_size = options.train.test_size;
  const int horizon = options.train.horizon;

  const data::SeriesFrame raw = load_input(options);
  if (raw.features.dim(1) != params.config.feature_dim) {
    throw ShapeError("predict: model expects " +
                     std::to_string(params.config.feature_dim) +
                     " features, input has " + std::to_string(raw.features.dim(1)));
  }
  const data::NormStats stats =
      params.norm.empty() ? identity_stats(raw.features.dim(1)) : params.norm;
  const PreparedData prepared = prepare(raw, stats, test_size, horizon);
  params.meta.test_size = test_size;
  params.meta.horizon = horizon;

  // The model is causal, so running the whole history and keeping the tail
  // gives the test window the state accumulated over the training period.
  const std::vector<double> rates = model::forward(params, prepared.samples.features);

  RunResult result;
  PredictionSeries& series = result.predictions;
  std::vector<double> anchors;
  for (std::size_t k = prepared.train_samples; k < prepared.samples.size(); ++k) {
    const std::size_t row = prepared.samples.target_rows[k];
    series.dates.push_back(raw.dates[row]);
    series.actual_close.push_back(raw.close[row]);
    series.actual_rate.push_back(raw.rates[row]);
    series.pred_rate.push_back(rates[k]);
    anchors.push_back(raw.close[row - 1]);
  }
  series.pred_close = reconstruct_prices(anchors, series.pred_rate);

  result.metrics = metrics_for(series, options.metrics_on);
  result.data = prepared.summary;

  write_text(options.out_dir / "metrics.json",
             metrics_json(result.metrics, options.metrics_on, params, result.data));
  write_predictions_csv(options.out_dir / "predictions.csv", series);
  write_text(options.out_dir / "chart.svg",
             render_chart_svg(series, options.input.stem().string() +
                                          ": actual vs predicted close"));
  result.params = std::move(params);
  return result;
}

RunResult run_experiment(const RunOptions& options) {
  RunResult trained = run_train(options);
  RunResult predicted = run_predict(options, trained.params);
  predicted.history = std::move(trained.history);
  return predicted;
}

}  // namespace mambastock::eval
