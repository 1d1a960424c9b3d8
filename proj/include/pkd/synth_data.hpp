#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pkd/config.hpp"
#include "pkd/tensor.hpp"

namespace pkd {

struct MixtureComponent {
  double weight = 0.0;
  std::vector<double> mean;
  std::vector<double> variance;  // diagonal covariance
};

// Label probability sigmoid(slope * (direction . x + offset)).
struct AttributeFunction {
  std::string name;
  std::vector<double> direction;
  double offset = 0.0;
  double slope = 1.0;

  double logit(std::span<const double> x) const;
  double probability(std::span<const double> x) const;
};

// Gaussian mixture over R^d with logistic attribute labels.
class AttributeMixtureSpec {
 public:
  AttributeMixtureSpec(std::size_t dimension, std::vector<MixtureComponent> components,
                       std::vector<AttributeFunction> attributes);

  // Reads the key/value schema documented in docs/formats.md.
  static AttributeMixtureSpec from_config(const KeyValueConfig& cfg);
  static AttributeMixtureSpec load(const std::filesystem::path& path);

  std::size_t dimension() const { return dimension_; }
  const std::vector<MixtureComponent>& components() const { return components_; }
  const std::vector<AttributeFunction>& attributes() const { return attributes_; }
  const AttributeFunction& attribute(std::string_view name) const;

  double log_density(std::span<const double> x) const;

 private:
  std::size_t dimension_;
  std::vector<MixtureComponent> components_;
  std::vector<AttributeFunction> attributes_;
};

struct LabeledSample {
  Tensor x;  // shape [d]
  std::map<std::string, double, std::less<>> attributes;
};

std::vector<LabeledSample> sample(const AttributeMixtureSpec& spec, std::size_t n,
                                  std::uint64_t seed);

// Draws only the points, as a [n, d] batch, with component indices.
Tensor sample_points(const AttributeMixtureSpec& spec, std::size_t n, std::uint64_t seed,
                     std::vector<std::size_t>* component = nullptr);

double true_posterior(const AttributeMixtureSpec& spec, std::string_view attribute,
                      std::span<const double> x);

// Normalized hypothetical density: P_H(x) = P_X(x) * odds_l(x) / Z with
// odds = P_l / (1 - P_l) and Z = E_{P_X}[odds] estimated by importance
// sampling from P_X.
class HypotheticalDensity {
 public:
  static constexpr std::size_t kDefaultSamples = 1'000'000;

  HypotheticalDensity(const AttributeMixtureSpec& spec, std::string attribute,
                      std::size_t samples = kDefaultSamples, std::uint64_t seed = 0);

  double normalizer() const { return normalizer_; }
  // Throws NumericError when P_l(x) >= 1 - 1e-12.
  double log_density(std::span<const double> x) const;

 private:
  const AttributeMixtureSpec* spec_;
  std::string attribute_;
  double normalizer_;
};

// Monte Carlo estimate of E_{P_X}[odds_l] over `samples` draws.
double estimate_odds_normalizer(const AttributeMixtureSpec& spec, std::string_view attribute,
                                std::size_t samples, std::uint64_t seed);

std::string to_csv(const AttributeMixtureSpec& spec, std::span<const LabeledSample> samples);

}  // namespace pkd
