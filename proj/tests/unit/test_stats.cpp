#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "flute/error.hpp"
#include "flute/stats.hpp"

using namespace flute;
using namespace flute::eval;

TEST_CASE("confidence interval closed form") {
  std::vector<double> v;
  for (int i = 0; i < 300; ++i) {
    v.push_back(0.0);
    v.push_back(1.0);
  }
  const auto ci = confidence_interval(v);
  CHECK(ci.mean == 0.5);
  const double s = std::sqrt(600.0 * 0.25 / 599.0);
  CHECK(ci.halfwidth == doctest::Approx(1.96 * s / std::sqrt(600.0)).epsilon(1e-14));
  CHECK(std::abs(ci.halfwidth - 0.0400) <= 1e-3);
  CHECK(confidence_interval(std::vector<double>(10, 0.7)).halfwidth == 0.0);
  CHECK_THROWS_AS(confidence_interval(std::vector<double>{0.5}), DataError);
}

TEST_CASE("doubling the sample shrinks the interval by sqrt 2") {
  std::mt19937_64 rng(1);
  std::bernoulli_distribution coin(0.6);
  double small = 0.0, large = 0.0;
  const int reps = 400;
  for (int r = 0; r < reps; ++r) {
    std::vector<double> a(300), b(600);
    for (auto& x : a) x = coin(rng);
    for (auto& x : b) x = coin(rng);
    small += confidence_interval(a).halfwidth;
    large += confidence_interval(b).halfwidth;
  }
  CHECK(small / large == doctest::Approx(std::sqrt(2.0)).epsilon(0.01));
}

TEST_CASE("rank examples") {
  const std::vector<double> same{0.1, 0.5, 0.9, 0.4};
  auto r = compute_ranks({same, same});
  CHECK(r.ranks == std::vector<double>{1.5, 1.5});
  CHECK(r.tied_for_best == std::vector<bool>{true, true});

  std::vector<double> hi(600), lo(600);
  for (std::size_t i = 0; i < 600; ++i) {
    hi[i] = 0.9 + (i % 2 ? 1e-3 : -1e-3);
    lo[i] = 0.1 + (i % 2 ? 1e-3 : -1e-3);
  }
  r = compute_ranks({lo, hi});
  CHECK(r.ranks == std::vector<double>{2.0, 1.0});
  CHECK(r.tied_for_best == std::vector<bool>{false, true});

  std::vector<double> a(600), b(600), c(600);
  for (std::size_t i = 0; i < 600; ++i) {
    a[i] = i % 2 ? 0.9 : 0.7;
    b[i] = i % 2 ? 0.91 : 0.69;
    c[i] = i % 2 ? 0.3 : 0.1;
  }
  r = compute_ranks({a, b, c});
  CHECK(r.ranks == std::vector<double>{1.5, 1.5, 3.0});
  CHECK(r.tied_for_best == std::vector<bool>{true, true, false});
}

TEST_CASE("ranks are equivariant under method permutation") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + trial % 4;
    std::vector<std::vector<double>> samples(k);
    for (auto& s : samples) {
      const double p = std::uniform_real_distribution<double>(0.4, 0.6)(rng);
      std::bernoulli_distribution coin(p);
      s.resize(100 + trial);
      for (auto& x : s) x = coin(rng);
    }
    const auto base = compute_ranks(samples);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<double>> shuffled;
    for (auto p : perm) shuffled.push_back(samples[p]);
    const auto moved = compute_ranks(shuffled);
    std::vector<double> means(k);
    for (std::size_t i = 0; i < k; ++i)
      means[i] = std::accumulate(samples[i].begin(), samples[i].end(), 0.0) / samples[i].size();
    const bool distinct_means = std::set<double>(means.begin(), means.end()).size() == k;
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(base.ranks[i] >= 1.0);
      CHECK(base.ranks[i] <= static_cast<double>(k));
      if (distinct_means) {
        CHECK(moved.ranks[i] == doctest::Approx(base.ranks[perm[i]]).epsilon(1e-15));
        CHECK(moved.tied_for_best[i] == base.tied_for_best[perm[i]]);
      }
    }
    CHECK(std::count(base.tied_for_best.begin(), base.tied_for_best.end(), true) >= 1);
  }
}

TEST_CASE("significance test") {
  CHECK_FALSE(significantly_different(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.5}));
  CHECK(significantly_different(std::vector<double>{0.5, 0.5}, std::vector<double>{0.6, 0.6}));
  CHECK_FALSE(significantly_different(std::vector<double>{0.0, 1.0}, std::vector<double>{0.1, 0.9, 0.2}));
}

TEST_CASE("rank errors") {
  CHECK_THROWS_AS(compute_ranks({{0.5}}), DataError);
  CHECK_THROWS_AS(compute_ranks({{0.5}, {}}), DataError);
}
