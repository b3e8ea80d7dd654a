#include "flute/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flute/error.hpp"

namespace flute::eval {

namespace {

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // sample variance (n-1)
  std::size_t n = 0;
};

Moments moments(std::span<const double> v) {
  Moments m;
  m.n = v.size();
  if (m.n == 0) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(m.n);
  double residual = 0.0;
  for (double x : v) residual += x - m.mean;
  m.mean += residual / static_cast<double>(m.n);
  if (m.n > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.variance = ss / static_cast<double>(m.n - 1);
  }
  return m;
}

}  // namespace

ConfidenceInterval confidence_interval(std::span<const double> values) {
  if (values.size() < 2) throw DataError("confidence_interval: need at least 2 values");
  const auto m = moments(values);
  return {m.mean, kZ95 * std::sqrt(m.variance) / std::sqrt(static_cast<double>(m.n))};
}

bool significantly_different(std::span<const double> a, std::span<const double> b) {
  const auto ma = moments(a);
  const auto mb = moments(b);
  const double se = std::sqrt(ma.variance / static_cast<double>(ma.n) + mb.variance / static_cast<double>(mb.n));
  const double diff = std::abs(ma.mean - mb.mean);
  if (se == 0.0) return diff > 0.0;
  return diff > kZ95 * se;
}

RankResult compute_ranks(const std::vector<std::vector<double>>& samples) {
  if (samples.size() < 2) throw DataError("compute_ranks: need at least 2 methods");
  for (const auto& s : samples) {
    if (s.empty()) throw DataError("compute_ranks: empty accuracy sample");
  }
  const std::size_t k = samples.size();
  std::vector<double> means(k);
  for (std::size_t i = 0; i < k; ++i) means[i] = moments(samples[i]).mean;
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return means[a] > means[b]; });
  std::vector<double> position(k);
  for (std::size_t p = 0; p < k; ++p) position[order[p]] = static_cast<double>(p + 1);

  RankResult out;
  out.ranks.resize(k);
  out.tied_for_best.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    double acc = 0.0;
    std::size_t members = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j || !significantly_different(samples[i], samples[j])) {
        acc += position[j];
        ++members;
      }
    }
    out.ranks[i] = acc / static_cast<double>(members);
  }
  const std::size_t best = order.front();
  for (std::size_t i = 0; i < k; ++i) {
    out.tied_for_best[i] = (i == best) || !significantly_different(samples[i], samples[best]);
  }
  return out;
}

}  // namespace flute::eval
