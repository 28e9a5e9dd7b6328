#include "mambastock/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include "mambastock/errors.hpp"

namespace mambastock::data {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' ||
                        s.front() == '"' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' ||
                        s.back() == '"' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

bool parse_double(std::string_view text, double& out) {
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

bool all_digits(std::string_view s) {
  return !s.empty() &&
         std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

}  // namespace

// ---------------------------------------------------------------------------

SchemaMapping SchemaMapping::from_file(const std::filesystem::path& path) {
  return parse(read_file(path));
}

SchemaMapping SchemaMapping::parse(std::string_view text) {
  SchemaMapping schema;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t eol = text.find('\n');
    std::string_view line = trim(text.substr(0, eol));
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw DataError("schema line " + std::to_string(line_no) +
                      ": expected canonical=source, got '" + std::string(line) + "'");
    }
    schema.set(std::string(trim(line.substr(0, eq))),
               std::string(trim(line.substr(eq + 1))));
  }
  return schema;
}

void SchemaMapping::set(std::string canonical, std::string source) {
  renames_[std::move(canonical)] = std::move(source);
}

std::string SchemaMapping::source_for(std::string_view canonical) const {
  auto it = renames_.find(canonical);
  return it == renames_.end() ? std::string(canonical) : it->second;
}

std::string canonical_date(std::string_view text) {
  text = trim(text);
  std::string digits;
  if (text.size() == 10 && text[4] == '-' && text[7] == '-') {
    digits = std::string(text.substr(0, 4)) + std::string(text.substr(5, 2)) +
             std::string(text.substr(8, 2));
  } else {
    digits = std::string(text);
  }
  if (digits.size() != 8 || !all_digits(digits)) {
    throw DataError("unrecognized date '" + std::string(text) + "'");
  }
  const int month = std::stoi(digits.substr(4, 2));
  const int day = std::stoi(digits.substr(6, 2));
  if (month < 1 || month > 12 || day < 1 || day > 31) {
    throw DataError("unrecognized date '" + std::string(text) + "'");
  }
  return digits;
}

SeriesFrame SeriesFrame::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows()) {
    throw InvalidArgument("frame slice [" + std::to_string(begin) + ", " +
                          std::to_string(end) + ") out of range for " +
                          std::to_string(rows()) + " rows");
  }
  const std::size_t width = features.dim(1);
  SeriesFrame out;
  out.dates.assign(dates.begin() + static_cast<std::ptrdiff_t>(begin),
                   dates.begin() + static_cast<std::ptrdiff_t>(end));
  out.close.assign(close.begin() + static_cast<std::ptrdiff_t>(begin),
                   close.begin() + static_cast<std::ptrdiff_t>(end));
  out.rates.assign(rates.begin() + static_cast<std::ptrdiff_t>(begin),
                   rates.begin() + static_cast<std::ptrdiff_t>(end));
  const auto& src = features.storage();
  out.features = Tensor(
      {end - begin, width},
      std::vector<double>(src.begin() + static_cast<std::ptrdiff_t>(begin * width),
                          src.begin() + static_cast<std::ptrdiff_t>(end * width)));
  out.dropped_rows = dropped_rows;
  return out;
}

SeriesFrame parse_csv(std::string_view text, const SchemaMapping& schema) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);  // UTF-8 BOM
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    const std::size_t eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    if (!trim(line).empty()) lines.push_back(line);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
  }
  if (lines.empty()) throw DataError("csv: missing header row");

  const auto header = split_fields(lines.front());
  auto column_of = [&](std::string_view canonical) -> std::ptrdiff_t {
    const std::string source = schema.source_for(canonical);
    auto it = std::find(header.begin(), header.end(), source);
    return it == header.end() ? -1 : it - header.begin();
  };

  std::vector<std::string> missing;
  const std::ptrdiff_t date_col = column_of("date");
  const std::ptrdiff_t close_col = column_of("close");
  if (date_col < 0) missing.push_back(schema.source_for("date"));
  if (close_col < 0) missing.push_back(schema.source_for("close"));
  std::array<std::ptrdiff_t, kFeatureCount> feature_cols{};
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    feature_cols[f] = column_of(kFeatureNames[f]);
    if (feature_cols[f] < 0) missing.push_back(schema.source_for(kFeatureNames[f]));
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw DataError("csv: missing required columns: " + names);
  }

  struct Row {
    std::string date;
    double close;
    std::array<double, kFeatureCount> features;
  };
  std::vector<Row> rows;
  std::size_t dropped = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split_fields(lines[i]);
    auto field = [&](std::ptrdiff_t col) {
      return static_cast<std::size_t>(col) < fields.size()
                 ? fields[static_cast<std::size_t>(col)]
                 : std::string_view{};
    };
    Row row;
    bool ok = true;
    try {
      row.date = canonical_date(field(date_col));
    } catch (const DataError&) {
      ok = false;
    }
    ok = ok && parse_double(field(close_col), row.close);
    for (std::size_t f = 0; ok && f < kFeatureCount; ++f) {
      ok = parse_double(field(feature_cols[f]), row.features[f]);
    }
    if (!ok) {
      ++dropped;
      continue;
    }
    rows.push_back(std::move(row));
  }
  if (dropped > 0) {
    std::cerr << "warning: dropped " << dropped
              << " row(s) with missing or unparseable cells\n";
  }
  if (rows.empty()) throw DataError("csv: no usable rows");

  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.date < b.date; });

  SeriesFrame frame;
  frame.dropped_rows = dropped;
  frame.features = Tensor({rows.size(), kFeatureCount});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (r > 0 && rows[r].date == rows[r - 1].date) {
      throw DataError("csv: duplicate date " + rows[r].date);
    }
    if (!(rows[r].close > 0.0)) {
      throw DataError("csv: nonpositive close on " + rows[r].date);
    }
    frame.dates.push_back(rows[r].date);
    frame.close.push_back(rows[r].close);
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      frame.features.at(r, f) = rows[r].features[f];
    }
  }
  frame.rates = rows.size() >= 2
                    ? movement_rate(frame.close)
                    : std::vector<double>{std::numeric_limits<double>::quiet_NaN()};
  return frame;
}

SeriesFrame load_csv(const std::filesystem::path& path,
                     const SchemaMapping& schema) {
  return parse_csv(read_file(path), schema);
}

std::vector<double> movement_rate(std::span<const double> close) {
  if (close.size() < 2) {
    throw InvalidArgument("movement_rate: need at least 2 closes, got " +
                          std::to_string(close.size()));
  }
  for (std::size_t t = 0; t < close.size(); ++t) {
    if (!(close[t] > 0.0)) {
      throw DataError("movement_rate: nonpositive close at index " +
                      std::to_string(t));
    }
  }
  std::vector<double> rates(close.size());
  rates[0] = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t t = 1; t < close.size(); ++t) {
    rates[t] = close[t] / close[t - 1] - 1.0;
  }
  return rates;
}

SplitFrames split_train_test(const SeriesFrame& frame, std::size_t test_size) {
  if (test_size == 0) throw InvalidArgument("split: test_size must be positive");
  if (test_size >= frame.rows()) {
    throw InvalidArgument("split: test_size " + std::to_string(test_size) +
                          " must be smaller than the " +
                          std::to_string(frame.rows()) + " available rows");
  }
  const std::size_t cut = frame.rows() - test_size;
  return {frame.slice(0, cut), frame.slice(cut, frame.rows())};
}

// ---------------------------------------------------------------------------
// Normalization

double NormStats::scale(std::size_t feature) const {
  return std[feature] > 0.0 ? std[feature] : 1.0;
}

NormStats fit_norm_stats(const Tensor& features) {
  const std::size_t rows = features.dim(0);
  const std::size_t cols = features.dim(1);
  if (rows == 0) throw InvalidArgument("normalize: empty frame");
  NormStats stats;
  stats.mean.assign(cols, 0.0);
  stats.std.assign(cols, 0.0);
  for (std::size_t f = 0; f < cols; ++f) {
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) total += features.at(r, f);
    const double mean = total / static_cast<double>(rows);
    double sq = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double dev = features.at(r, f) - mean;
      sq += dev * dev;
    }
    stats.mean[f] = mean;
    stats.std[f] = std::sqrt(sq / static_cast<double>(rows));
    if (stats.std[f] == 0.0) stats.constant_features.push_back(f);
  }
  return stats;
}

Tensor apply_norm(const Tensor& features, const NormStats& stats) {
  const std::size_t cols = features.rank() == 2 ? features.dim(1) : 0;
  if (cols != stats.mean.size() || cols != stats.std.size()) {
    throw ShapeError("normalize: stats cover " + std::to_string(stats.mean.size()) +
                     " features, frame has shape " +
                     shape_to_string(features.shape()));
  }
  Tensor out = features;
  for (std::size_t r = 0; r < features.dim(0); ++r) {
    for (std::size_t f = 0; f < cols; ++f) {
      out.at(r, f) = (features.at(r, f) - stats.mean[f]) / stats.scale(f);
    }
  }
  return out;
}

Normalized normalize(const SeriesFrame& frame, const NormStats& stats) {
  Normalized out{frame, stats.empty() ? fit_norm_stats(frame.features) : stats};
  out.frame.features = apply_norm(frame.features, out.stats);
  return out;
}

// ---------------------------------------------------------------------------

SampleSeries make_samples(const SeriesFrame& frame, int horizon) {
  if (horizon != 0 && horizon != 1) {
    throw InvalidArgument("horizon must be 0 or 1, got " + std::to_string(horizon));
  }
  if (frame.rows() < 2) {
    throw DataError("need at least 2 rows to form movement-rate targets");
  }
  const std::size_t count = frame.rows() - 1;
  const std::size_t width = frame.features.dim(1);
  SampleSeries out;
  out.horizon = horizon;
  out.features = Tensor({count, width});
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t target_row = k + 1;
    const std::size_t feature_row = target_row - static_cast<std::size_t>(horizon);
    for (std::size_t f = 0; f < width; ++f) {
      out.features.at(k, f) = frame.features.at(feature_row, f);
    }
    out.targets.push_back(frame.rates[target_row]);
    out.target_rows.push_back(target_row);
  }
  return out;
}

std::string alignment_name(int horizon) {
  return horizon == 0 ? "same-day" : "next-day";
}

void write_frame_csv(const std::filesystem::path& path, const SeriesFrame& frame) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.precision(17);
  out << "date,close";
  for (auto name : kFeatureNames) out << ',' << name;
  out << ",rate\n";
  for (std::size_t r = 0; r < frame.rows(); ++r) {
    out << frame.dates[r] << ',' << frame.close[r];
    for (std::size_t f = 0; f < frame.features.dim(1); ++f) {
      out << ',' << frame.features.at(r, f);
    }
    out << ',';
    if (std::isfinite(frame.rates[r])) out << frame.rates[r];
    out << '\n';
  }
}

}  // namespace mambastock::data
