#include <doctest.h>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <random>

#include "flute/error.hpp"
#include "flute/ops.hpp"
#include "support/gradcheck.hpp"

using namespace flute;
using flute::testing::gradcheck;
using flute::testing::random_tensor;

namespace {

// Direct quadruple loop over output pixels.
Tensor naive_conv(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = k.dim(0), KH = k.dim(2), KW = k.dim(3);
  const std::size_t OH = (H + 2 * pad - KH) / stride + 1, OW = (W + 2 * pad - KW) / stride + 1;
  Tensor y({B, O, OH, OW});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < OH; ++i)
        for (std::size_t j = 0; j < OW; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < KH; ++u)
              for (std::size_t v = 0; v < KW; ++v) {
                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long s = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (r < 0 || s < 0 || r >= static_cast<long>(H) || s >= static_cast<long>(W)) continue;
                acc += x[((b * C + c) * H + r) * W + s] * k[((o * C + c) * KH + u) * KW + v];
              }
          y[((b * O + o) * OH + i) * OW + j] = acc;
        }
  return y;
}

Var weighted(Tape& tape, const Var& v, const Tensor& w) { return ops::sum(ops::mul(v, tape.constant(w))); }

constexpr int kSeeds = 100;
constexpr double kTol = 1e-5;

}  // namespace

TEST_CASE("conv2d: identity kernel and all-ones sum") {
  Tape tape;
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({1, 1, 4, 5}, rng);
  Var y = ops::conv2d(tape.constant(x), tape.constant(Tensor({1, 1, 1, 1}, 1.0)), 1, 0);
  CHECK(y.value().same_values(x));
  Var s = ops::conv2d(tape.constant(Tensor({1, 1, 3, 3}, 1.0)), tape.constant(Tensor({1, 1, 3, 3}, 1.0)), 1, 0);
  CHECK(s.shape() == Shape{1, 1, 1, 1});
  CHECK(s.value()[0] == 9.0);
}

TEST_CASE("conv2d matches the loop oracle") {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor k = random_tensor({3, 2, 3, 3}, rng);
    for (auto [stride, pad] : {std::pair{2, 1}, std::pair{1, 0}, std::pair{1, 1}}) {
      Tape tape;
      const auto got = ops::conv2d(tape.constant(x), tape.constant(k), stride, pad).value();
      const auto want = naive_conv(x, k, stride, pad);
      REQUIRE(got.shape() == want.shape());
      for (std::size_t i = 0; i < got.numel(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d rejects mismatched shapes") {
  Tape tape;
  CHECK_THROWS_AS(ops::conv2d(tape.constant(Tensor({1, 2, 5, 5})), tape.constant(Tensor({3, 1, 3, 3})), 1, 0),
                  ShapeError);
  CHECK_THROWS_AS(ops::conv2d(tape.constant(Tensor({1, 1, 2, 2})), tape.constant(Tensor({1, 1, 3, 3})), 1, 0),
                  ShapeError);
}

TEST_CASE("softmax cross entropy examples") {
  Tape tape;
  Var l = ops::softmax_cross_entropy(tape.constant(Tensor({1, 2}, 0.0)), Tensor({1, 2}, std::vector<double>{0, 1}));
  CHECK(l.value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  Var big = ops::softmax_cross_entropy(tape.constant(Tensor({1, 2}, std::vector<double>{1000, 0})),
                                       Tensor({1, 2}, std::vector<double>{1, 0}));
  CHECK(std::isfinite(big.value().item()));
  CHECK(big.value().item() < 1e-300);
  CHECK_THROWS_AS(ops::softmax_cross_entropy(tape.constant(Tensor({2, 1}, 0.0)), Tensor({2, 1}, 1.0)), Error);
  CHECK_THROWS_AS(ops::softmax_cross_entropy(tape.constant(Tensor({1, 3}, 0.0)),
                                             Tensor({1, 3}, std::vector<double>{1, 1, 0})),
                  Error);
}

TEST_CASE("softmax cross entropy matches a 50-digit oracle") {
  using big = boost::multiprecision::cpp_bin_float_50;
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor logits = random_tensor({4, 3}, rng, -5.0, 5.0);
    std::vector<std::size_t> labels(4);
    for (auto& y : labels) y = std::uniform_int_distribution<std::size_t>(0, 2)(rng);
    big total = 0;
    for (std::size_t b = 0; b < 4; ++b) {
      big z = 0;
      for (std::size_t c = 0; c < 3; ++c) z += boost::multiprecision::exp(big(logits[b * 3 + c]));
      total += boost::multiprecision::log(z) - big(logits[b * 3 + labels[b]]);
    }
    const double want = static_cast<double>(total / 4);
    Tape tape;
    const double got = ops::softmax_cross_entropy(tape.constant(logits), ops::one_hot(labels, 3)).value().item();
    CHECK(std::abs(got - want) <= 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("softmax cross entropy gradient is (softmax - onehot)/B") {
  std::mt19937_64 rng(3);
  Tensor logits = random_tensor({3, 4}, rng);
  logits.set_requires_grad(true);
  const std::vector<std::size_t> labels{0, 3, 1};
  Tape tape;
  tape.backward(ops::softmax_cross_entropy(tape.param(logits), ops::one_hot(labels, 4)));
  for (std::size_t b = 0; b < 3; ++b) {
    double z = 0;
    for (std::size_t c = 0; c < 4; ++c) z += std::exp(logits[b * 4 + c]);
    for (std::size_t c = 0; c < 4; ++c) {
      const double p = std::exp(logits[b * 4 + c]) / z;
      CHECK(logits.grad()[b * 4 + c] == doctest::Approx((p - (labels[b] == c ? 1.0 : 0.0)) / 3.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("l2_normalize examples") {
  Tape tape;
  const auto n = ops::l2_normalize(tape.constant(Tensor::vector({3, 4})), 0).value();
  CHECK(n[0] == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(n[1] == doctest::Approx(0.8).epsilon(1e-14));
  const auto u = ops::l2_normalize(tape.constant(Tensor::vector({0.6, 0.8})), 0).value();
  CHECK(u[0] == doctest::Approx(0.6).epsilon(1e-14));
  std::mt19937_64 rng(4);
  Tensor v = random_tensor({3, 5}, rng);
  Tensor sv = v;
  for (auto& x : sv.values()) x *= 7.3;
  const auto a = ops::l2_normalize(tape.constant(v), 1).value();
  const auto b = ops::l2_normalize(tape.constant(sv), 1).value();
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));
  const auto z = ops::l2_normalize(tape.constant(Tensor::vector({0, 0})), 0).value();
  CHECK(z.all_finite());
}

TEST_CASE("mean_over_rows is invariant to row order") {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({7, 4}, rng);
  Tape tape;
  const auto a = ops::mean_over_rows(tape.constant(x)).value();
  std::vector<std::size_t> perm{3, 6, 0, 2, 5, 1, 4};
  Tensor y({7, 4});
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 4; ++c) y[r * 4 + c] = x[perm[r] * 4 + c];
  CHECK(ops::mean_over_rows(tape.constant(y)).value().same_values(a));
}

TEST_CASE("class_means rejects an empty class") {
  Tape tape;
  std::vector<std::size_t> labels{0, 0, 2};
  CHECK_THROWS_AS(ops::class_means(tape.constant(Tensor({3, 2}, 1.0)), labels, 3), DataError);
}

TEST_CASE("finite-difference gradients of every primitive, 100 seeds") {
  double worst = 0.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(seed);
    auto check = [&](const flute::testing::LossFn& fn, std::vector<Tensor> in, std::size_t coords = 0) {
      const auto r = gradcheck(fn, std::move(in), rng, coords);
      worst = std::max(worst, r.max_rel_error);
      CHECK(r.max_rel_error <= kTol);
      CHECK(r.checked > 0);
    };
    const Tensor w23 = random_tensor({2, 3}, rng);
    check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::add(v[0], v[1]), w23); },
          {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
    check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::sub(v[0], v[1]), w23); },
          {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
    check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::mul(v[0], v[1]), w23); },
          {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
    check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::mul_scalar(v[0], v[1]), w23); },
          {random_tensor({2, 3}, rng), random_tensor({1}, rng)});
    check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::relu(v[0]), w23); },
          {random_tensor({2, 3}, rng)});
    check([&](Tape&, const std::vector<Var>& v) { return ops::mean(v[0]); }, {random_tensor({2, 3}, rng)});
    check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::reshape(v[0], {2, 3}), w23); },
          {random_tensor({6}, rng)});
    check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::slice_rows(v[0], 1, 3), w23); },
          {random_tensor({4, 3}, rng)});

    const Tensor wc = random_tensor({1, 3, 3, 3}, rng);
    check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::conv2d(v[0], v[1], 2, 1), wc); },
          {random_tensor({1, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng)});
    const Tensor wp = random_tensor({2, 2, 2, 2}, rng);
    check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::max_pool2x2(v[0]), wp); },
          {random_tensor({2, 2, 5, 4}, rng)});
    const Tensor wg = random_tensor({2, 3}, rng);
    check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::global_avg_pool(v[0]), wg); },
          {random_tensor({2, 3, 3, 4}, rng)});
    const Tensor wm = random_tensor({4}, rng);
    check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::mean_over_rows(v[0]), wm); },
          {random_tensor({5, 4}, rng)});
    const Tensor w34 = random_tensor({3, 4}, rng);
    check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::matmul_nt(v[0], v[1]), w34); },
          {random_tensor({3, 5}, rng), random_tensor({4, 5}, rng)});
    check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::linear(v[0], v[1], v[2]), w34); },
          {random_tensor({3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)});
    const Tensor w35 = random_tensor({3, 5}, rng);
    check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::l2_normalize(v[0], 1), w35); },
          {random_tensor({3, 5}, rng)});
    const Tensor w5 = random_tensor({5}, rng);
    check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::l2_normalize(v[0], 0), w5); },
          {random_tensor({5}, rng)});
    std::vector<std::size_t> labels{0, 2, 1, 2};
    check([&](Tape&, const std::vector<Var>& v) { return ops::softmax_cross_entropy(v[0], ops::one_hot(labels, 3)); },
          {random_tensor({4, 3}, rng, -3, 3)});
    const Tensor w32 = random_tensor({3, 2}, rng);
    check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::class_means(v[0], labels, 3), w32); },
          {random_tensor({4, 2}, rng)});
  }
  MESSAGE("worst relative error over primitives: " << worst);
}
