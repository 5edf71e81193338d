#pragma once

#include <cstdint>
#include <span>

namespace purekit {

double mean(std::span<const double> values);

struct MeanInterval {
  double mean = 0.0;
  double lo = 0.0;  // lower percentile bound
  double hi = 0.0;  // upper percentile bound
};

// Percentile bootstrap of the mean: the (1-confidence)/2 and (1+confidence)/2
// quantiles of `resamples` resampled means. Deterministic given `seed`.
MeanInterval bootstrap_mean(std::span<const double> values, double confidence,
                            int resamples, std::uint64_t seed);

// One-sided lower bound: the (1-confidence) quantile of resampled means.
double bootstrap_lower_bound(std::span<const double> values, double confidence, int resamples,
                             std::uint64_t seed);

}  // namespace purekit
