#include "pkd/param_vector.hpp"

#include <charconv>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "pkd/error.hpp"
#include "pkd/io.hpp"
#include "pkd/numeric.hpp"

namespace pkd {

namespace {

constexpr std::string_view kMagic = "pkd-params";
constexpr int kVersion = 1;

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

// Line-oriented reader that reports line numbers on malformed input.
class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  std::string_view next() {
    while (pos_ < text_.size()) {
      std::size_t end = text_.find('\n', pos_);
      if (end == std::string_view::npos) end = text_.size();
      std::string_view line = text_.substr(pos_, end - pos_);
      pos_ = end + 1;
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.empty() || line.front() == '#') continue;
      return line;
    }
    fail("unexpected end of file");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("checkpoint line " + std::to_string(line_no_) + ": " + what);
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
};

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream is{std::string(line)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::size_t parse_size(const LineReader& r, const std::string& tok) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size()) {
    r.fail("expected an unsigned integer, got '" + tok + "'");
  }
  return v;
}

}  // namespace

std::size_t ParamVector::add_segment(std::string name, Shape shape) {
  if (has_segment(name)) throw ConfigError("duplicate parameter segment '" + name + "'");
  const std::size_t offset = values_.size();
  Segment seg{std::move(name), std::move(shape), offset};
  values_.resize(offset + seg.size(), 0.0);
  layout_.push_back(std::move(seg));
  return offset;
}

bool ParamVector::has_segment(std::string_view name) const {
  for (const auto& s : layout_) {
    if (s.name == name) return true;
  }
  return false;
}

const Segment& ParamVector::segment(std::string_view name) const {
  for (const auto& s : layout_) {
    if (s.name == name) return s;
  }
  throw ConfigError("unknown parameter segment '" + std::string(name) + "'");
}

const std::string& ParamVector::segment_of(std::size_t i) const {
  for (const auto& s : layout_) {
    if (i >= s.offset && i < s.offset + s.size()) return s.name;
  }
  throw ConfigError("parameter index " + std::to_string(i) + " out of range");
}

std::span<double> ParamVector::segment_values(std::string_view name) {
  const Segment& s = segment(name);
  return std::span<double>(values_).subspan(s.offset, s.size());
}

std::span<const double> ParamVector::segment_values(std::string_view name) const {
  const Segment& s = segment(name);
  return std::span<const double>(values_).subspan(s.offset, s.size());
}

Tensor ParamVector::segment_tensor(std::string_view name) const {
  const Segment& s = segment(name);
  auto span = segment_values(name);
  return Tensor(s.shape, std::vector<double>(span.begin(), span.end()));
}

ParamVector ParamVector::with_values(std::vector<double> values) const {
  if (values.size() != values_.size()) {
    throw ShapeError("parameter vector: expected " + std::to_string(values_.size()) +
                     " values, got " + std::to_string(values.size()));
  }
  ParamVector out;
  out.layout_ = layout_;
  out.values_ = std::move(values);
  return out;
}

std::string ParamVector::serialize() const {
  std::string out;
  out += "# flat parameter vector; values are hex-float literals\n";
  out += std::string(kMagic) + " " + std::to_string(kVersion) + "\n";
  out += "segments " + std::to_string(layout_.size()) + "\n";
  for (const auto& s : layout_) {
    out += "segment " + s.name + " " + std::to_string(s.offset) + " " +
           std::to_string(s.shape.size());
    for (std::size_t d : s.shape) out += " " + std::to_string(d);
    out += "\n";
  }
  out += "values " + std::to_string(values_.size()) + "\n";
  for (double v : values_) {
    out += hexfloat(v);
    out += '\n';
  }
  out += "end\n";
  return out;
}

ParamVector ParamVector::parse(std::string_view text) {
  LineReader r(text);
  auto header = split_ws(r.next());
  if (header.size() != 2 || header[0] != kMagic) r.fail("missing 'pkd-params' header");
  if (header[1] != std::to_string(kVersion)) r.fail("unsupported version " + header[1]);

  auto seg_line = split_ws(r.next());
  if (seg_line.size() != 2 || seg_line[0] != "segments") r.fail("expected 'segments <count>'");
  const std::size_t n_segments = parse_size(r, seg_line[1]);

  ParamVector pv;
  for (std::size_t i = 0; i < n_segments; ++i) {
    auto toks = split_ws(r.next());
    if (toks.size() < 4 || toks[0] != "segment") r.fail("expected 'segment <name> <offset> <rank> dims...'");
    const std::size_t offset = parse_size(r, toks[2]);
    const std::size_t rank = parse_size(r, toks[3]);
    if (toks.size() != 4 + rank) r.fail("segment '" + toks[1] + "' rank does not match dims");
    Shape shape;
    for (std::size_t d = 0; d < rank; ++d) shape.push_back(parse_size(r, toks[4 + d]));
    if (offset != pv.size()) r.fail("segment '" + toks[1] + "' offset is not contiguous");
    pv.add_segment(toks[1], shape);
  }

  auto val_line = split_ws(r.next());
  if (val_line.size() != 2 || val_line[0] != "values") r.fail("expected 'values <count>'");
  const std::size_t n_values = parse_size(r, val_line[1]);
  if (n_values != pv.size()) r.fail("value count does not match layout");

  for (std::size_t i = 0; i < n_values; ++i) {
    std::string tok(r.next());
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') r.fail("bad float literal '" + tok + "'");
    pv.values_[i] = v;
  }
  if (r.next() != "end") r.fail("expected 'end'");
  return pv;
}

void ParamVector::save(const std::filesystem::path& path) const {
  write_file_atomic(path, serialize());
}

ParamVector ParamVector::load(const std::filesystem::path& path) {
  return parse(read_file(path));
}

std::uint64_t ParamVector::hash() const {
  std::uint64_t h = fnv1a(std::string_view("pkd-params"));
  for (const auto& s : layout_) {
    h = fnv1a(std::span<const unsigned char>(
                  reinterpret_cast<const unsigned char*>(s.name.data()), s.name.size()),
              h);
    h = fnv1a(std::span<const unsigned char>(
                  reinterpret_cast<const unsigned char*>(s.shape.data()),
                  s.shape.size() * sizeof(std::size_t)),
              h);
  }
  return fnv1a(std::span<const unsigned char>(
                   reinterpret_cast<const unsigned char*>(values_.data()),
                   values_.size() * sizeof(double)),
               h);
}

std::string ParamVector::hash_hex() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

}  // namespace pkd
