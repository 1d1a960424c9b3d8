#include "pkd/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "pkd/error.hpp"
#include "pkd/io.hpp"
#include "pkd/numeric.hpp"

namespace pkd {

double AttributeFunction::logit(std::span<const double> x) const {
  double s = offset;
  for (std::size_t i = 0; i < direction.size(); ++i) s += direction[i] * x[i];
  return slope * s;
}

double AttributeFunction::probability(std::span<const double> x) const {
  return sigmoid(logit(x));
}

AttributeMixtureSpec::AttributeMixtureSpec(std::size_t dimension,
                                           std::vector<MixtureComponent> components,
                                           std::vector<AttributeFunction> attributes)
    : dimension_(dimension), components_(std::move(components)), attributes_(std::move(attributes)) {
  if (dimension_ == 0) throw ConfigError("mixture spec: dimension must be positive");
  if (components_.empty()) throw ConfigError("mixture spec: no components");
  double total = 0.0;
  for (std::size_t k = 0; k < components_.size(); ++k) {
    const auto& c = components_[k];
    const std::string id = "component " + std::to_string(k);
    if (!(c.weight > 0.0)) throw ConfigError("mixture spec: " + id + " weight must be positive");
    if (c.mean.size() != dimension_ || c.variance.size() != dimension_) {
      throw ConfigError("mixture spec: " + id + " mean/variance must have " +
                        std::to_string(dimension_) + " entries");
    }
    for (double v : c.variance) {
      if (!(v > 0.0)) throw ConfigError("mixture spec: " + id + " variance must be positive");
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("mixture spec: weights sum to " + format_double(total) + ", expected 1");
  }
  if (attributes_.size() < 2) {
    throw ConfigError("mixture spec: need a knowledge attribute and at least one remaining attribute");
  }
  for (const auto& a : attributes_) {
    if (a.direction.size() != dimension_) {
      throw ConfigError("mixture spec: attribute '" + a.name + "' direction must have " +
                        std::to_string(dimension_) + " entries");
    }
  }
}

AttributeMixtureSpec AttributeMixtureSpec::from_config(const KeyValueConfig& cfg) {
  const auto d = static_cast<std::size_t>(cfg.get_int("dimension"));
  const auto n_comp = static_cast<std::size_t>(cfg.get_int("components"));
  std::vector<MixtureComponent> comps;
  for (std::size_t k = 0; k < n_comp; ++k) {
    const std::string p = "component." + std::to_string(k) + ".";
    MixtureComponent c;
    c.weight = cfg.get_double(p + "weight");
    c.mean = cfg.get_doubles(p + "mean");
    if (cfg.has(p + "variance")) {
      c.variance = cfg.get_doubles(p + "variance");
      if (c.variance.size() == 1) c.variance.assign(d, c.variance[0]);
    } else {
      c.variance.assign(d, 1.0);
    }
    comps.push_back(std::move(c));
  }
  std::vector<AttributeFunction> attrs;
  for (const auto& name : cfg.get_strings("attributes")) {
    const std::string p = "attribute." + name + ".";
    AttributeFunction a;
    a.name = name;
    a.direction = cfg.get_doubles(p + "direction");
    a.offset = cfg.get_double(p + "offset", 0.0);
    a.slope = cfg.get_double(p + "slope", 1.0);
    attrs.push_back(std::move(a));
  }
  return AttributeMixtureSpec(d, std::move(comps), std::move(attrs));
}

AttributeMixtureSpec AttributeMixtureSpec::load(const std::filesystem::path& path) {
  return from_config(KeyValueConfig::load(path));
}

const AttributeFunction& AttributeMixtureSpec::attribute(std::string_view name) const {
  for (const auto& a : attributes_) {
    if (a.name == name) return a;
  }
  throw ConfigError("mixture spec: unknown attribute '" + std::string(name) + "'");
}

double AttributeMixtureSpec::log_density(std::span<const double> x) const {
  std::vector<double> terms;
  terms.reserve(components_.size());
  for (const auto& c : components_) {
    double t = std::log(c.weight);
    for (std::size_t i = 0; i < dimension_; ++i) {
      const double diff = x[i] - c.mean[i];
      t += -0.5 * (diff * diff / c.variance[i] + std::log(2.0 * std::numbers::pi * c.variance[i]));
    }
    terms.push_back(t);
  }
  const double m = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

Tensor sample_points(const AttributeMixtureSpec& spec, std::size_t n, std::uint64_t seed,
                     std::vector<std::size_t>* component) {
  if (n == 0) throw ConfigError("sample: n must be at least 1");
  const std::size_t d = spec.dimension();
  Rng rng = make_rng(seed, "data");
  std::vector<double> weights;
  for (const auto& c : spec.components()) weights.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor out(Shape{n, d});
  if (component) component->assign(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t k = pick(rng);
    if (component) (*component)[r] = k;
    const auto& c = spec.components()[k];
    for (std::size_t i = 0; i < d; ++i) {
      out.at(r, i) = c.mean[i] + std::sqrt(c.variance[i]) * normal(rng);
    }
  }
  return out;
}

std::vector<LabeledSample> sample(const AttributeMixtureSpec& spec, std::size_t n,
                                  std::uint64_t seed) {
  const Tensor pts = sample_points(spec, n, seed);
  const std::size_t d = spec.dimension();
  std::vector<LabeledSample> out;
  out.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = pts.row_span(r);
    LabeledSample s{Tensor(Shape{d}, std::vector<double>(row.begin(), row.end())), {}};
    for (const auto& a : spec.attributes()) s.attributes.emplace(a.name, a.probability(row));
    out.push_back(std::move(s));
  }
  return out;
}

double true_posterior(const AttributeMixtureSpec& spec, std::string_view attribute,
                      std::span<const double> x) {
  return spec.attribute(attribute).probability(x);
}

double estimate_odds_normalizer(const AttributeMixtureSpec& spec, std::string_view attribute,
                                std::size_t samples, std::uint64_t seed) {
  const auto& attr = spec.attribute(attribute);
  // Chunked so that 1e6 draws do not materialize at once.
  constexpr std::size_t kChunk = 65536;
  CompensatedSum sum;
  std::size_t done = 0;
  std::uint64_t chunk_seed = seed;
  while (done < samples) {
    const std::size_t n = std::min(kChunk, samples - done);
    const Tensor pts = sample_points(spec, n, substream_seed(chunk_seed++, "normalizer"));
    for (std::size_t r = 0; r < n; ++r) sum.add(std::exp(attr.logit(pts.row_span(r))));
    done += n;
  }
  return sum.value() / static_cast<double>(samples);
}

HypotheticalDensity::HypotheticalDensity(const AttributeMixtureSpec& spec, std::string attribute,
                                         std::size_t samples, std::uint64_t seed)
    : spec_(&spec), attribute_(std::move(attribute)) {
  const auto& attr = spec.attribute(attribute_);
  if (attr.slope == 0.0) {
    normalizer_ = 1.0;  // odds are identically 1
  } else {
    normalizer_ = estimate_odds_normalizer(spec, attribute_, samples, seed);
  }
}

double HypotheticalDensity::log_density(std::span<const double> x) const {
  const auto& attr = spec_->attribute(attribute_);
  const double p = attr.probability(x);
  if (p >= 1.0 - 1e-12) {
    throw NumericError("hypothetical density: P_l(x) = " + format_double(p) +
                       " >= 1 - 1e-12, density ratio diverges");
  }
  // log P_l - log(1 - P_l) is exactly the attribute logit.
  return spec_->log_density(x) + attr.logit(x) - std::log(normalizer_);
}

std::string to_csv(const AttributeMixtureSpec& spec, std::span<const LabeledSample> samples) {
  std::vector<std::string> header;
  for (std::size_t i = 0; i < spec.dimension(); ++i) header.push_back("x_" + std::to_string(i));
  for (const auto& a : spec.attributes()) header.push_back(a.name);
  CsvWriter csv(header);
  for (const auto& s : samples) {
    for (double v : s.x.values()) csv.cell(v);
    for (const auto& a : spec.attributes()) csv.cell(s.attributes.at(a.name));
    csv.end_row();
  }
  return csv.str();
}

}  // namespace pkd
