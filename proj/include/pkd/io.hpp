#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pkd {

// Writes to a sibling temp file and renames it over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

// Shortest round-trip decimal representation ("%.17g"), "nan" for NaN.
std::string format_double(double v);

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);
  CsvWriter& cell(double v);
  CsvWriter& cell(long long v);
  CsvWriter& cell(std::size_t v) { return cell(static_cast<long long>(v)); }
  CsvWriter& cell(int v) { return cell(static_cast<long long>(v)); }
  CsvWriter& cell(std::string_view v);
  void end_row();
  const std::string& str() const { return out_; }

 private:
  std::size_t columns_;
  std::size_t in_row_ = 0;
  std::string out_;
};

struct PlotSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
  bool lines = true;  // false: scatter markers only
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
};

// Minimal static SVG line/scatter chart.
std::string render_svg(const PlotSpec& spec, const std::vector<PlotSeries>& series);

}  // namespace pkd
