#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace gncd::cli {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

void write_line_plot(const std::filesystem::path& path, const std::string& title,
                     const std::string& x_label, const std::vector<Series>& series);

void write_bar_plot(const std::filesystem::path& path, const std::string& title,
                    const std::vector<std::string>& labels, const std::vector<double>& values);

}  // namespace gncd::cli
