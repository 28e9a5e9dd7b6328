#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include "mambastock/errors.hpp"
#include "mambastock/eval.hpp"
#include "mambastock/ssm.hpp"

namespace mambastock::eval {

namespace {

struct ScanInputs {
  ssm::DiscretizedSteps steps;
  Tensor C;
  Tensor x;
};

ScanInputs random_inputs(std::size_t length, std::size_t d, std::size_t n,
                         std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  ScanInputs in{{Tensor({1, length, d, n}), Tensor({1, length, d, n})},
                Tensor({1, length, n}),
                Tensor({1, length, d})};
  for (double& v : in.steps.A_bar.values()) v = 0.5 + 0.499 * unit(rng);
  for (double& v : in.steps.B_bar.values()) v = 0.1 * normal(rng);
  for (double& v : in.C.values()) v = normal(rng);
  for (double& v : in.x.values()) v = normal(rng);
  return in;
}

template <typename Fn>
std::pair<double, Tensor> time_median(std::size_t reps, Fn&& fn) {
  std::vector<double> seconds;
  Tensor y;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto start = std::chrono::steady_clock::now();
    y = fn();
    seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  std::sort(seconds.begin(), seconds.end());
  const std::size_t mid = seconds.size() / 2;
  const double median = seconds.size() % 2 == 1
                            ? seconds[mid]
                            : 0.5 * (seconds[mid - 1] + seconds[mid]);
  return {median, std::move(y)};
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

}  // namespace

std::vector<BenchRow> scan_bench(const BenchOptions& options) {
  if (options.repetitions < 5) {
    throw InvalidArgument("scan-bench: at least 5 repetitions required, got " +
                          std::to_string(options.repetitions));
  }
  for (const auto* list : {&options.lengths, &options.state_sizes, &options.dims}) {
    if (list->empty() || std::find(list->begin(), list->end(), 0u) != list->end()) {
      throw InvalidArgument("scan-bench: lengths and sizes must be positive");
    }
  }
  if (std::find(options.chunks.begin(), options.chunks.end(), 0u) != options.chunks.end()) {
    throw InvalidArgument("scan-bench: chunk sizes must be positive");
  }

  std::mt19937_64 rng(options.seed);
  std::vector<BenchRow> rows;
  for (std::size_t length : options.lengths) {
    for (std::size_t n : options.state_sizes) {
      for (std::size_t d : options.dims) {
        const ScanInputs in = random_inputs(length, d, n, rng);
        auto [seq_time, reference] = time_median(options.repetitions, [&] {
          return ssm::selective_scan_sequential(in.steps, in.C, in.x).y;
        });
        rows.push_back({length, n, d, "sequential", seq_time, 0.0});
        for (std::size_t chunk : options.chunks) {
          ssm::ParallelScanOptions scan_options{chunk, options.threads};
          auto [par_time, y] = time_median(options.repetitions, [&] {
            return ssm::selective_scan_parallel(in.steps, in.C, in.x, Tensor(Shape{0}),
                                                scan_options)
                .y;
          });
          rows.push_back({length, n, d, "parallel-chunk-" + std::to_string(chunk),
                          par_time, max_abs_diff(y, reference)});
        }
      }
    }
  }
  return rows;
}

void write_bench_csv(const std::filesystem::path& path,
                     std::span<const BenchRow> rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.precision(10);
  out << "length,state_size,dim,variant,median_seconds,max_deviation\n";
  for (const auto& row : rows) {
    out << row.length << ',' << row.state_size << ',' << row.dim << ','
        << row.variant << ',' << row.median_seconds << ',' << row.max_deviation
        << '\n';
  }
}

}  // namespace mambastock::eval
