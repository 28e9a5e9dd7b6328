#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mambastock/tensor.hpp"

namespace mambastock::data {

inline constexpr std::size_t kFeatureCount = 15;

// Canonical feature column order.
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "open",         "high",        "low",         "volume",     "value",
    "turnover_rate", "volume_ratio", "pe",         "pb",         "ps",
    "total_share",  "float_share", "free_share",  "total_mv",   "circ_mv"};

inline constexpr std::size_t kDefaultTestSize = 300;

// Maps a canonical column name (`date`, `close`, or a feature) to the header
// used by the source file. Unmapped names are looked up verbatim.
class SchemaMapping {
 public:
  SchemaMapping() = default;

  // Reads `canonical=source` lines; blank lines and `#` comments are skipped.
  static SchemaMapping from_file(const std::filesystem::path& path);
  static SchemaMapping parse(std::string_view text);

  void set(std::string canonical, std::string source);
  std::string source_for(std::string_view canonical) const;

 private:
  std::map<std::string, std::string, std::less<>> renames_;
};

// Date-indexed table. Immutable once built; rows are in ascending date order.
struct SeriesFrame {
  std::vector<std::string> dates;  // YYYYMMDD
  Tensor features;                 // rows x kFeatureCount
  std::vector<double> close;
  // rates[t] = close[t] / close[t-1] - 1; rates[0] is NaN (no prior close).
  std::vector<double> rates;
  std::size_t dropped_rows = 0;

  std::size_t rows() const { return dates.size(); }
  // Rows [begin, end) as a new frame; rates[begin] keeps its value.
  SeriesFrame slice(std::size_t begin, std::size_t end) const;
};

// Accepts YYYY-MM-DD or YYYYMMDD; returns YYYYMMDD. Throws DataError.
std::string canonical_date(std::string_view text);

SeriesFrame load_csv(const std::filesystem::path& path,
                     const SchemaMapping& schema = {});
SeriesFrame parse_csv(std::string_view text, const SchemaMapping& schema = {});

// close[t] / close[t-1] - 1 for t >= 1; the first entry is NaN.
std::vector<double> movement_rate(std::span<const double> close);

struct SplitFrames {
  SeriesFrame train;
  SeriesFrame test;
};

// Last `test_size` rows form the test window; no shuffling.
SplitFrames split_train_test(const SeriesFrame& frame,
                             std::size_t test_size = kDefaultTestSize);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
  // Features whose fitted std was zero; they are centered with scale 1.
  std::vector<std::size_t> constant_features;

  bool empty() const { return mean.empty(); }
  double scale(std::size_t feature) const;
};

NormStats fit_norm_stats(const Tensor& features);
Tensor apply_norm(const Tensor& features, const NormStats& stats);

struct Normalized {
  SeriesFrame frame;
  NormStats stats;
};

// Fits stats on `frame` when `stats` is empty, otherwise applies them.
Normalized normalize(const SeriesFrame& frame, const NormStats& stats = {});

// Feature/target pairs indexed by target date. Sample k targets row
// k + 1 (so every target has a defined rate) and reads features from row
// k + 1 - horizon: horizon 0 uses same-day features, horizon 1 the prior day.
struct SampleSeries {
  Tensor features;                 // samples x kFeatureCount
  std::vector<double> targets;     // movement rates
  std::vector<std::size_t> target_rows;
  int horizon = 0;

  std::size_t size() const { return targets.size(); }
};

SampleSeries make_samples(const SeriesFrame& frame, int horizon);

std::string alignment_name(int horizon);

// Debug dump: date, close, the 15 features, rate.
void write_frame_csv(const std::filesystem::path& path, const SeriesFrame& frame);

}  // namespace mambastock::data
