#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace pkd {

inline double sigmoid(double s) {
  if (s >= 0.0) {
    return 1.0 / (1.0 + std::exp(-s));
  }
  const double e = std::exp(s);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

// Neumaier-compensated summation. Result is independent of how the caller
// chunked the input up to ~1 ulp of the total.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double compensated_sum(std::span<const double> values);

struct MeanStat {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  double sem = 0.0;  // standard error of the mean
};

MeanStat mean_stat(std::span<const double> values);

// Spearman rank correlation with average ranks for ties. NaN entries are
// dropped pairwise.
double spearman(std::span<const double> a, std::span<const double> b);

// Deterministic 64-bit seed for a named substream of a master seed, so that
// e.g. the eval stream does not depend on how many draws the pkd stream made.
std::uint64_t substream_seed(std::uint64_t seed, std::string_view name);

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::string_view stream) {
  return Rng(substream_seed(seed, stream));
}

// FNV-1a over raw bytes; used for checkpoint and manifest hashes.
std::uint64_t fnv1a(std::span<const unsigned char> bytes,
                    std::uint64_t h = 1469598103934665603ULL);
std::uint64_t fnv1a(std::string_view text);

std::vector<double> log_spaced(double lo, double hi, std::size_t count);

}  // namespace pkd
