#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pkd/tensor.hpp"

namespace pkd {

struct Segment {
  std::string name;
  Shape shape;
  std::size_t offset = 0;

  std::size_t size() const { return shape_size(shape); }
  bool operator==(const Segment&) const = default;
};

// Flat parameter vector with a named layout. Segments are contiguous and
// appended in order, so offsets never overlap.
class ParamVector {
 public:
  ParamVector() = default;

  // Appends a zero-filled segment and returns its offset.
  std::size_t add_segment(std::string name, Shape shape);

  std::size_t size() const { return values_.size(); }
  const std::vector<Segment>& layout() const { return layout_; }
  bool has_segment(std::string_view name) const;
  const Segment& segment(std::string_view name) const;
  // Name of the segment containing flat index i.
  const std::string& segment_of(std::size_t i) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> segment_values(std::string_view name);
  std::span<const double> segment_values(std::string_view name) const;
  Tensor segment_tensor(std::string_view name) const;

  bool same_layout(const ParamVector& other) const {
    return layout_ == other.layout_;
  }
  // Copy of this layout with new values; length must match.
  ParamVector with_values(std::vector<double> values) const;

  // Checkpoint text (see docs/formats.md). Values are C99 hex-float literals
  // so that parse(serialize()) reproduces every bit.
  std::string serialize() const;
  static ParamVector parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static ParamVector load(const std::filesystem::path& path);

  std::uint64_t hash() const;
  std::string hash_hex() const;

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<Segment> layout_;
  std::vector<double> values_;
};

}  // namespace pkd
