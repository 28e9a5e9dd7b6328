#include <algorithm>
#include <cstdio>
#include <sstream>

#include "mambastock/eval.hpp"

namespace mambastock::eval {

namespace {

constexpr double kWidth = 960.0;
constexpr double kHeight = 480.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_chart_svg(const PredictionSeries& series,
                             const std::string& title) {
  const std::size_t n = series.size();
  double lo = 0.0;
  double hi = 1.0;
  if (n > 0) {
    const auto [amin, amax] =
        std::minmax_element(series.actual_close.begin(), series.actual_close.end());
    const auto [pmin, pmax] =
        std::minmax_element(series.pred_close.begin(), series.pred_close.end());
    lo = std::min(*amin, *pmin);
    hi = std::max(*amax, *pmax);
    if (hi == lo) {
      lo -= 1.0;
      hi += 1.0;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto x_of = [&](std::size_t i) {
    return kLeft + (n > 1 ? plot_w * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0);
  };
  auto y_of = [&](double v) { return kTop + plot_h * (hi - v) / (hi - lo); };
  auto polyline = [&](const std::vector<double>& values, const char* color) {
    std::ostringstream pts;
    for (std::size_t i = 0; i < n; ++i) {
      pts << (i ? " " : "") << fmt(x_of(i)) << ',' << fmt(y_of(values[i]));
    }
    return "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\" points=\"" + pts.str() + "\"/>\n";
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << ' '
      << kHeight << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"16\">" << escape(title) << "</text>\n";

  // axes and y ticks
  svg << "<g stroke=\"#444\" stroke-width=\"1\">\n"
      << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft
      << "\" y2=\"" << kTop + plot_h << "\"/>\n"
      << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\""
      << kLeft + plot_w << "\" y2=\"" << kTop + plot_h << "\"/>\n</g>\n";
  svg << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#444\">\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << fmt(y_of(v) + 4)
        << "\" text-anchor=\"end\">" << fmt(v) << "</text>\n";
  }
  if (n > 0) {
    svg << "<text x=\"" << kLeft << "\" y=\"" << kHeight - 28 << "\">"
        << escape(series.dates.front()) << "</text>\n"
        << "<text x=\"" << kLeft + plot_w << "\" y=\"" << kHeight - 28
        << "\" text-anchor=\"end\">" << escape(series.dates.back()) << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 10
      << "\" text-anchor=\"middle\">test day</text>\n</g>\n";

  svg << polyline(series.actual_close, "#1f77b4");
  svg << polyline(series.pred_close, "#d62728");

  svg << "<g font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<line x1=\"" << kLeft + 10 << "\" y1=\"" << kTop + 10 << "\" x2=\""
      << kLeft + 30 << "\" y2=\"" << kTop + 10 << "\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << kLeft + 36 << "\" y=\"" << kTop + 14 << "\">actual</text>\n"
      << "<line x1=\"" << kLeft + 10 << "\" y1=\"" << kTop + 28 << "\" x2=\""
      << kLeft + 30 << "\" y2=\"" << kTop + 28 << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << kLeft + 36 << "\" y=\"" << kTop + 32 << "\">predicted</text>\n"
      << "</g>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace mambastock::eval
