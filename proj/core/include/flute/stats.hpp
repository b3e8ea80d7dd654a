#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace flute::eval {

inline constexpr double kZ95 = 1.96;

struct ConfidenceInterval {
  double mean = 0.0;
  double halfwidth = 0.0;
};

/// mean +- 1.96 * s / sqrt(n) with s the sample standard deviation. n >= 2.
ConfidenceInterval confidence_interval(std::span<const double> values);

struct RankResult {
  std::vector<double> ranks;  // 1 = best
  std::vector<bool> tied_for_best;
};

/// True when a two-sample z-test at 95% rejects equal means.
bool significantly_different(std::span<const double> a, std::span<const double> b);

/// Ranks methods of one table row from their per-episode accuracies.
///
/// Methods are ordered by mean accuracy. A method's rank is the average of the
/// positions of every method it cannot be distinguished from (itself
/// included), so two tied leaders both get 1.5. Methods indistinguishable from
/// the best-mean method are flagged as tied for best.
RankResult compute_ranks(const std::vector<std::vector<double>>& samples);

}  // namespace flute::eval
