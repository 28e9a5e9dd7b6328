#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mambastock/errors.hpp"
#include "mambastock/eval.hpp"

namespace mambastock::eval {

MetricsReport compute_metrics(std::span<const double> pred,
                              std::span<const double> actual) {
  if (pred.size() != actual.size()) {
    throw ShapeError("compute_metrics: " + std::to_string(pred.size()) +
                     " predictions vs " + std::to_string(actual.size()) +
                     " actual values");
  }
  if (pred.size() < 2) {
    throw InvalidArgument("compute_metrics: need at least 2 samples");
  }
  const std::size_t n = pred.size();
  const double count = static_cast<double>(n);

  double actual_mean = 0.0;
  for (double a : actual) actual_mean += a;
  actual_mean /= count;

  double sq_err = 0.0;
  double abs_err = 0.0;
  double pct_err = 0.0;
  double explained = 0.0;
  double total = 0.0;
  bool zero_actual = false;
  for (std::size_t t = 0; t < n; ++t) {
    const double err = pred[t] - actual[t];
    sq_err += err * err;
    abs_err += std::abs(err);
    if (actual[t] == 0.0) {
      zero_actual = true;
    } else {
      pct_err += std::abs(err) / std::abs(actual[t]);
    }
    explained += (pred[t] - actual_mean) * (pred[t] - actual_mean);
    total += (actual[t] - actual_mean) * (actual[t] - actual_mean);
  }

  MetricsReport report;
  report.n = n;
  report.mse = sq_err / count;
  report.rmse = std::sqrt(report.mse);
  report.mae = abs_err / count;
  if (!zero_actual) report.mape = pct_err / count;
  if (total > 0.0) {
    report.r2_paper = explained / total;
    report.r2_standard = 1.0 - sq_err / total;
  }

  if (std::abs(report.rmse * report.rmse - report.mse) >
      1e-12 * std::max(1.0, report.mse)) {
    throw Error("internal", "compute_metrics: rmse^2 != mse");
  }
  if (report.mae > report.rmse * (1.0 + 1e-12)) {
    throw Error("internal", "compute_metrics: mae exceeds rmse");
  }
  return report;
}

std::vector<double> reconstruct_prices(std::span<const double> prev_close,
                                       std::span<const double> rates) {
  if (prev_close.size() != rates.size()) {
    throw ShapeError("reconstruct_prices: " + std::to_string(prev_close.size()) +
                     " anchor closes vs " + std::to_string(rates.size()) + " rates");
  }
  std::vector<double> out(rates.size());
  for (std::size_t t = 0; t < rates.size(); ++t) {
    if (!(prev_close[t] > 0.0)) {
      throw DataError("reconstruct_prices: nonpositive anchor close at index " +
                      std::to_string(t));
    }
    if (!(rates[t] > -1.0)) {
      throw InvalidArgument("reconstruct_prices: rate <= -1 at index " +
                            std::to_string(t));
    }
    out[t] = prev_close[t] * (1.0 + rates[t]);
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_predictions_csv(const std::filesystem::path& path,
                           const PredictionSeries& series) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.precision(17);
  out << "date,actual_close,pred_rate,pred_close\n";
  for (std::size_t t = 0; t < series.size(); ++t) {
    out << series.dates[t] << ',' << series.actual_close[t] << ','
        << series.pred_rate[t] << ',' << series.pred_close[t] << '\n';
  }
}

PredictionSeries read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line.rfind("date,actual_close,pred_rate,pred_close", 0) != 0) {
    throw DataError("predictions csv: unexpected header '" + line + "'");
  }
  PredictionSeries series;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string date, a, r, p;
    std::getline(fields, date, ',');
    std::getline(fields, a, ',');
    std::getline(fields, r, ',');
    std::getline(fields, p, ',');
    series.dates.push_back(date);
    series.actual_close.push_back(std::stod(a));
    series.pred_rate.push_back(std::stod(r));
    series.pred_close.push_back(std::stod(p));
  }
  // The file carries no rate column for the actuals; the first anchor close
  // is recovered from the predicted pair.
  for (std::size_t t = 0; t < series.size(); ++t) {
    const double prev = t == 0 ? series.pred_close[0] / (1.0 + series.pred_rate[0])
                               : series.actual_close[t - 1];
    series.actual_rate.push_back(series.actual_close[t] / prev - 1.0);
  }
  return series;
}

MetricsOn parse_metrics_on(const std::string& text) {
  if (text == "rates") return MetricsOn::kRates;
  if (text == "prices") return MetricsOn::kPrices;
  throw InvalidArgument("metrics-on must be 'rates' or 'prices', got '" + text + "'");
}

std::string to_string(MetricsOn on) {
  return on == MetricsOn::kRates ? "rates" : "prices";
}

MetricsReport metrics_for(const PredictionSeries& series, MetricsOn on) {
  return on == MetricsOn::kPrices
             ? compute_metrics(series.pred_close, series.actual_close)
             : compute_metrics(series.pred_rate, series.actual_rate);
}

std::string metrics_json(const MetricsReport& report, MetricsOn on,
                         const model::ModelParams& params,
                         const DataSummary& data) {
  using nlohmann::ordered_json;
  auto optional = [](const std::optional<double>& v) {
    return v ? ordered_json(*v) : ordered_json(nullptr);
  };
  ordered_json doc;
  doc["schema"] = 1;
  doc["metrics_on"] = to_string(on);
  doc["n"] = report.n;
  doc["metrics"] = {{"MSE", report.mse},
                    {"RMSE", report.rmse},
                    {"MAE", report.mae},
                    {"MAPE", optional(report.mape)},
                    {"R2", optional(report.r2_paper)},
                    {"r2_standard", optional(report.r2_standard)}};
  ordered_json undefined = ordered_json::array();
  if (!report.mape) undefined.push_back("MAPE");
  if (!report.r2_paper) undefined.push_back("R2");
  if (!report.r2_standard) undefined.push_back("r2_standard");
  doc["undefined"] = undefined;

  const auto& c = params.config;
  const auto& m = params.meta;
  doc["config"] = {{"seed", c.seed},
                   {"epochs", m.epochs},
                   {"lr", m.lr},
                   {"state_size", c.state_size},
                   {"layers", c.layer_count},
                   {"feature_dim", c.feature_dim},
                   {"gated", c.gated},
                   {"test_size", m.test_size},
                   {"horizon", m.horizon},
                   {"alignment", data::alignment_name(m.horizon)}};
  doc["data"] = {{"rows", data.rows},
                 {"train_rows", data.train_rows},
                 {"test_rows", data.test_rows},
                 {"dropped_rows", data.dropped_rows},
                 {"test_start", data.test_start},
                 {"test_end", data.test_end}};
  return doc.dump(2) + "\n";
}

}  // namespace mambastock::eval
