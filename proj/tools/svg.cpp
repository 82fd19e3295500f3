#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gncd::cli {

namespace {

constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

void write(const std::filesystem::path& path, const std::string& body) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << kW << R"(" height=")" << kH
    << R"(" font-family="sans-serif" font-size="12">)" << '\n'
    << R"(<rect width="100%" height="100%" fill="white"/>)" << '\n'
    << body << "</svg>\n";
}

std::string frame(const std::string& title, double ymin, double ymax) {
  std::ostringstream s;
  s << R"(<text x=")" << kW / 2 << R"(" y="24" text-anchor="middle" font-size="15">)" << esc(title)
    << "</text>\n";
  s << R"(<line x1=")" << kLeft << R"(" y1=")" << kH - kBottom << R"(" x2=")" << kW - kRight
    << R"(" y2=")" << kH - kBottom << R"(" stroke="black"/>)" << '\n';
  s << R"(<line x1=")" << kLeft << R"(" y1=")" << kTop << R"(" x2=")" << kLeft << R"(" y2=")"
    << kH - kBottom << R"(" stroke="black"/>)" << '\n';
  for (int t = 0; t <= 4; ++t) {
    const double v = ymin + (ymax - ymin) * t / 4.0;
    const double y = kH - kBottom - (kH - kTop - kBottom) * t / 4.0;
    s << R"(<text x=")" << kLeft - 6 << R"(" y=")" << y + 4 << R"(" text-anchor="end">)" << num(v)
      << "</text>\n";
  }
  return s.str();
}

}  // namespace

void write_line_plot(const std::filesystem::path& path, const std::string& title,
                     const std::string& x_label, const std::vector<Series>& series) {
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  std::ostringstream b;
  b << frame(title, ymin, ymax);
  b << R"(<text x=")" << kLeft + pw / 2 << R"(" y=")" << kH - 12 << R"(" text-anchor="middle">)"
    << esc(x_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % 6];
    b << R"(<polyline fill="none" stroke=")" << color << R"(" stroke-width="2" points=")";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      b << num(kLeft + pw * (s.x[i] - xmin) / (xmax - xmin)) << ','
        << num(kTop + ph * (1.0 - (s.y[i] - ymin) / (ymax - ymin))) << ' ';
    b << "\"/>\n";
    b << R"(<text x=")" << kW - kRight - 4 << R"(" y=")" << kTop + 14 * (k + 1)
      << R"(" text-anchor="end" fill=")" << color << R"(">)" << esc(s.name) << "</text>\n";
  }
  write(path, b.str());
}

void write_bar_plot(const std::filesystem::path& path, const std::string& title,
                    const std::vector<std::string>& labels, const std::vector<double>& values) {
  double ymax = 0.0;
  for (double v : values) ymax = std::max(ymax, v);
  if (ymax <= 0.0) ymax = 1.0;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  const double slot = values.empty() ? pw : pw / static_cast<double>(values.size());
  std::ostringstream b;
  b << frame(title, 0.0, ymax);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double h = ph * values[i] / ymax;
    const double x = kLeft + slot * static_cast<double>(i) + slot * 0.15;
    b << R"(<rect x=")" << num(x) << R"(" y=")" << num(kH - kBottom - h) << R"(" width=")"
      << num(slot * 0.7) << R"(" height=")" << num(h) << R"(" fill=")" << kColors[i % 6] << "\"/>\n";
    b << R"(<text x=")" << num(x + slot * 0.35) << R"(" y=")" << kH - kBottom + 16
      << R"(" text-anchor="middle">)" << esc(labels[i]) << "</text>\n";
    b << R"(<text x=")" << num(x + slot * 0.35) << R"(" y=")" << num(kH - kBottom - h - 4)
      << R"(" text-anchor="middle">)" << num(values[i]) << "</text>\n";
  }
  write(path, b.str());
}

}  // namespace gncd::cli
