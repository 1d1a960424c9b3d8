#include "pkd/numeric.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace pkd {

double compensated_sum(std::span<const double> values) {
  CompensatedSum s;
  for (double v : values) s.add(v);
  return s.value();
}

MeanStat mean_stat(std::span<const double> values) {
  MeanStat out;
  const std::size_t n = values.size();
  if (n == 0) return out;
  out.mean = compensated_sum(values) / static_cast<double>(n);
  if (n < 2) return out;
  CompensatedSum sq;
  for (double v : values) {
    const double d = v - out.mean;
    sq.add(d * d);
  }
  out.stddev = std::sqrt(sq.value() / static_cast<double>(n - 1));
  out.sem = out.stddev / std::sqrt(static_cast<double>(n));
  return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    if (std::isnan(a[i]) || std::isnan(b[i])) continue;
    x.push_back(a[i]);
    y.push_back(b[i]);
  }
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(rx.size());
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(ry.size());
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a(std::string_view text) {
  return fnv1a(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::uint64_t substream_seed(std::uint64_t seed, std::string_view name) {
  // splitmix64 finalizer over (seed, name hash)
  std::uint64_t z = seed ^ fnv1a(name);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<double> log_spaced(double lo, double hi, std::size_t count) {
  std::vector<double> out;
  if (count == 0) return out;
  if (count == 1) return {lo};
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1)));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

}  // namespace pkd
