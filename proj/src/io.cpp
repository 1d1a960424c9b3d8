#include "pkd/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "pkd/error.hpp"

namespace pkd {

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("cannot write '" + tmp.string() + "'");
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw ConfigError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out_ += ',';
    out_ += header[i];
  }
  out_ += '\n';
}

CsvWriter& CsvWriter::cell(double v) { return cell(std::string_view(format_double(v))); }

CsvWriter& CsvWriter::cell(long long v) { return cell(std::string_view(std::to_string(v))); }

CsvWriter& CsvWriter::cell(std::string_view v) {
  if (in_row_ == columns_) throw Error("csv: too many cells in row");
  if (in_row_) out_ += ',';
  const bool quote = v.find_first_of(",\"\n") != std::string_view::npos;
  if (quote) {
    out_ += '"';
    for (char c : v) {
      if (c == '"') out_ += '"';
      out_ += c;
    }
    out_ += '"';
  } else {
    out_ += v;
  }
  ++in_row_;
  return *this;
}

void CsvWriter::end_row() {
  if (in_row_ != columns_) throw Error("csv: row has " + std::to_string(in_row_) +
                                       " cells, header has " + std::to_string(columns_));
  out_ += '\n';
  in_row_ = 0;
}

namespace {

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_svg(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
  constexpr double W = 640, H = 420, L = 70, R = 20, T = 40, B = 55;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  auto tx = [&](double x) { return spec.log_x ? std::log10(x) : x; };
  for (const auto& s : series) {
    for (auto [x, y] : s.points) {
      if (!std::isfinite(y) || !std::isfinite(x) || (spec.log_x && x <= 0)) continue;
      xmin = std::min(xmin, tx(x));
      xmax = std::max(xmax, tx(x));
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (!std::isfinite(xmin)) { xmin = 0; xmax = 1; ymin = 0; ymax = 1; }
  if (xmax == xmin) { xmin -= 0.5; xmax += 0.5; }
  if (ymax == ymin) { ymin -= 0.5; ymax += 0.5; }
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;
  auto px = [&](double x) { return L + (tx(x) - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << escape(spec.title) << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 4.0;
    const double xv = spec.log_x ? std::pow(10.0, fx) : fx;
    const double sx = L + (W - L - R) * i / 4.0;
    os << "<text x=\"" << num(sx) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">"
       << tick_label(xv) << "</text>\n";
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">"
       << tick_label(yv) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
     << escape(spec.x_label) << (spec.log_x ? " (log scale)" : "") << "</text>\n";
  os << "<text transform=\"translate(16," << (T + H - B) / 2
     << ") rotate(-90)\" text-anchor=\"middle\">" << escape(spec.y_label) << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kColors[si % std::size(kColors)];
    if (s.lines) {
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (auto [x, y] : s.points) {
        if (!std::isfinite(y) || (spec.log_x && x <= 0)) continue;
        os << num(px(x)) << ',' << num(py(y)) << ' ';
      }
      os << "\"/>\n";
    }
    for (auto [x, y] : s.points) {
      if (!std::isfinite(y) || (spec.log_x && x <= 0)) continue;
      os << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\""
         << (s.lines ? 3 : 1.5) << "\" fill=\"" << color << "\" fill-opacity=\""
         << (s.lines ? "1" : "0.5") << "\"/>\n";
    }
    os << "<text x=\"" << W - R - 150 << "\" y=\"" << T + 14 * si << "\" fill=\"" << color
       << "\">" << escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace pkd
