#include "purekit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "purekit/error.hpp"
#include "purekit/rng.hpp"

namespace purekit {

double mean(std::span<const double> values) {
  if (values.empty()) throw ConfigError("mean of an empty sample");
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc / static_cast<double>(values.size());
}

namespace {

std::vector<double> resampled_means(std::span<const double> values, int resamples,
                                    std::uint64_t seed) {
  if (values.empty()) throw ConfigError("bootstrap of an empty sample");
  if (resamples < 1) throw ConfigError("bootstrap needs at least one resample");
  RngStream rng = RngStream::named(seed, "bootstrap");
  const auto n = static_cast<std::uint32_t>(values.size());
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (double& m : means) {
    double acc = 0.0;
    for (std::uint32_t i = 0; i < n; ++i) acc += values[rng.next_below(n)];
    m = acc / n;
  }
  std::sort(means.begin(), means.end());
  return means;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

MeanInterval bootstrap_mean(std::span<const double> values, double confidence, int resamples,
                            std::uint64_t seed) {
  if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("confidence must be in (0, 1)");
  const auto means = resampled_means(values, resamples, seed);
  return {mean(values), quantile_sorted(means, (1.0 - confidence) / 2.0),
          quantile_sorted(means, (1.0 + confidence) / 2.0)};
}

double bootstrap_lower_bound(std::span<const double> values, double confidence, int resamples,
                             std::uint64_t seed) {
  if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("confidence must be in (0, 1)");
  return quantile_sorted(resampled_means(values, resamples, seed), 1.0 - confidence);
}

}  // namespace purekit
