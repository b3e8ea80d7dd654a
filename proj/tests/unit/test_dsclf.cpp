#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flute/dsclf.hpp"
#include "flute/error.hpp"
#include "flute/ops.hpp"
#include "support/gradcheck.hpp"

using namespace flute;
using namespace flute::dsclf;
using flute::testing::random_tensor;

namespace {

ArchSpec small_arch() {
  ArchSpec a;
  a.image_size = 16;
  a.stem_width = 3;
  a.blocks = {{3, 4, 2}};
  return a;
}

FilmBank random_bank(std::size_t m, std::mt19937_64& rng) {
  FilmBank bank;
  for (std::size_t i = 0; i < m; ++i) {
    FilmSet f = scratch_init(small_arch());
    for (auto& l : f.layers) {
      l.gamma = random_tensor({l.channels()}, rng, 0.5, 1.5);
      l.beta = random_tensor({l.channels()}, rng, -0.5, 0.5);
    }
    for (auto& s : f.stats) {
      for (auto& v : s.running_mean) v = std::uniform_real_distribution<double>(-1, 1)(rng);
      for (auto& v : s.running_var) v = std::uniform_real_distribution<double>(0.2, 3)(rng);
    }
    bank.sets.push_back(std::move(f));
    bank.names.push_back("d" + std::to_string(i));
  }
  return bank;
}

// Every coordinate of `f`, flattened in a fixed order.
std::vector<double> flatten(const FilmSet& f) {
  std::vector<double> out;
  for (std::size_t i = 0; i < f.layers.size(); ++i) {
    out.insert(out.end(), f.layers[i].gamma.values().begin(), f.layers[i].gamma.values().end());
    out.insert(out.end(), f.layers[i].beta.values().begin(), f.layers[i].beta.values().end());
    out.insert(out.end(), f.stats[i].running_mean.begin(), f.stats[i].running_mean.end());
    out.insert(out.end(), f.stats[i].running_var.begin(), f.stats[i].running_var.end());
  }
  return out;
}

const data::SplitCorpus& corpus() {
  static const data::SplitCorpus c = [] {
    auto spec = data::CorpusSpec::desk_default(31);
    for (auto& d : spec.domains) {
      d.image_size = 16;
      d.examples_per_class = 30;
    }
    return data::build_corpus(spec);
  }();
  return c;
}

BlendWeights weights_of(std::vector<double> v) { return BlendWeights{std::move(v)}; }

}  // namespace

TEST_CASE("blend properties over 200 random trials") {
  for (std::uint64_t trial = 0; trial < 200; ++trial) {
    std::mt19937_64 rng(trial);
    const std::size_t m = 1 + trial % 4;
    const auto bank = random_bank(m, rng);
    const auto clf = DsClfParams::init(m, 1, 4, 2, trial);
    const Tensor support = random_tensor({5, 1, 16, 16}, rng, 0, 1);
    const auto b = blend(support, clf, bank);
    b.weights.validate();
    REQUIRE(b.weights.values.size() == m);
    CHECK(b.film.matches(small_arch()));

    // Convex hull, coordinate-wise.
    const auto blended = flatten(b.film);
    std::vector<std::vector<double>> members;
    for (const auto& s : bank.sets) members.push_back(flatten(s));
    for (std::size_t i = 0; i < blended.size(); ++i) {
      double lo = members[0][i], hi = members[0][i];
      for (const auto& mm : members) {
        lo = std::min(lo, mm[i]);
        hi = std::max(hi, mm[i]);
      }
      CHECK(blended[i] >= lo - 1e-12);
      CHECK(blended[i] <= hi + 1e-12);
    }

    // One-hot weights recover the member exactly.
    for (std::size_t k = 0; k < m; ++k) {
      std::vector<double> e(m, 0.0);
      e[k] = 1.0;
      CHECK(blend_with_weights(bank, e).same_values(bank.sets[k]));
    }
    CHECK(hard_blend(support, clf, bank).same_values(bank.sets[b.weights.argmax()]));
  }
}

TEST_CASE("equal logits give the member mean and a lowest-index hard blend") {
  std::mt19937_64 rng(9);
  const auto bank = random_bank(3, rng);
  auto clf = DsClfParams::init(3, 1, 4, 2, 1);
  std::fill(clf.head_weight.values().begin(), clf.head_weight.values().end(), 0.0);
  std::fill(clf.head_bias.values().begin(), clf.head_bias.values().end(), 0.0);
  const Tensor support = random_tensor({5, 1, 16, 16}, rng, 0, 1);
  const auto b = blend(support, clf, bank);
  for (double w : b.weights.values) CHECK(w == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const auto blended = flatten(b.film);
  const auto a0 = flatten(bank.sets[0]), a1 = flatten(bank.sets[1]), a2 = flatten(bank.sets[2]);
  for (std::size_t i = 0; i < blended.size(); ++i) {
    CHECK(std::abs(blended[i] - (a0[i] + a1[i] + a2[i]) / 3.0) <= 1e-12);
  }
  CHECK(hard_blend(support, clf, bank).same_values(bank.sets[0]));
  CHECK(weights_of({0.25, 0.5, 0.25 - 1e-17, 1e-17 + 0.0}).argmax() == 1);
  CHECK(weights_of({0.5, 0.5}).argmax() == 0);
}

TEST_CASE("a single-member bank blends to that member") {
  std::mt19937_64 rng(10);
  const auto bank = random_bank(1, rng);
  const auto clf = DsClfParams::init(1, 1, 4, 2, 2);
  const auto b = blend(random_tensor({5, 1, 16, 16}, rng, 0, 1), clf, bank);
  CHECK(b.weights.values == std::vector<double>{1.0});
  CHECK(b.film.same_values(bank.sets[0]));
}

TEST_CASE("classifier logits ignore support order and duplication") {
  std::mt19937_64 rng(11);
  const auto clf = DsClfParams::init(3, 1, 8, 2, 3);
  const Tensor support = random_tensor({6, 1, 16, 16}, rng, 0, 1);
  const auto base = dsclf_logits(support, clf);
  const std::size_t img = 256;
  std::vector<std::size_t> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  for (int t = 0; t < 20; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor p({6, 1, 16, 16});
    for (std::size_t r = 0; r < 6; ++r)
      std::copy_n(support.values().begin() + perm[r] * img, img, p.values().begin() + r * img);
    CHECK(dsclf_logits(p, clf) == base);
  }
  Tensor twice({12, 1, 16, 16});
  std::copy(support.values().begin(), support.values().end(), twice.values().begin());
  std::copy(support.values().begin(), support.values().end(), twice.values().begin() + 6 * img);
  const auto dup = dsclf_logits(twice, clf);
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(std::abs(dup[i] - base[i]) <= 1e-12);
}

TEST_CASE("blend weight validation") {
  CHECK_THROWS_AS(weights_of({}).validate(), NumericError);
  CHECK_THROWS_AS(weights_of({0.5, 0.6}).validate(), NumericError);
  CHECK_THROWS_AS(weights_of({1.5, -0.5}).validate(), NumericError);
  CHECK_THROWS_AS(weights_of({std::nan(""), 1.0}).validate(), NumericError);
  CHECK_NOTHROW(weights_of({0.25, 0.75}).validate());
  std::mt19937_64 rng(12);
  const auto bank = random_bank(2, rng);
  CHECK_THROWS_AS(blend_with_weights(bank, std::vector<double>{1.0}), ShapeError);
  CHECK_THROWS_AS(blend(random_tensor({5, 1, 16, 16}, rng), DsClfParams::init(3, 1, 4, 2, 1), bank), ShapeError);
}

TEST_CASE("softmax") {
  const auto p = softmax(std::vector<double>{1.0, 0.0});
  CHECK(p[0] == doctest::Approx(0.7310585786300049).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(0.2689414213699951).epsilon(1e-14));
  const auto big = softmax(std::vector<double>{1000.0, 1000.0});
  CHECK(big[0] == 0.5);
}

TEST_CASE("classifier gradients against central differences") {
  double worst = 0.0;
  std::size_t checked = 0;
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(500 + seed);
    auto clf = DsClfParams::init(3, 1, 4, 2, seed);
    const Tensor batch = random_tensor({4, 1, 8, 8}, rng, 0, 1);
    const Tensor w = random_tensor({1, 3}, rng);
    auto loss = [&](Tape& t) { return ops::sum(ops::mul(dsclf_logits(t, t.constant(batch), clf, false), t.constant(w))); };
    auto evaluate = [&](std::uint64_t& sig) {
      Tape t;
      const double v = loss(t).value().item();
      sig = t.branch_signature();
      return v;
    };
    clf.set_requires_grad(true);
    std::uint64_t base_sig = 0;
    {
      Tape t;
      Var l = loss(t);
      base_sig = t.branch_signature();
      t.backward(l);
    }
    for (auto* tensor : clf.tensors()) {
      const auto analytic = tensor->grad();
      for (std::size_t k = 0; k < 6; ++k) {
        const auto i = std::uniform_int_distribution<std::size_t>(0, tensor->numel() - 1)(rng);
        const double orig = (*tensor)[i];
        const double h = 1e-5;
        std::uint64_t sp = 0, sm = 0;
        (*tensor)[i] = orig + h;
        const double up = evaluate(sp);
        (*tensor)[i] = orig - h;
        const double dn = evaluate(sm);
        (*tensor)[i] = orig;
        if (sp != base_sig || sm != base_sig) continue;
        const double err = flute::testing::relative_error(analytic[i], (up - dn) / (2 * h));
        worst = std::max(worst, err);
        ++checked;
        CHECK(err <= 1e-5);
      }
    }
  }
  CHECK(checked > 200);
  MESSAGE("worst relative error over the classifier: " << worst);
}

TEST_CASE("training from zero steps keeps the initial classifier") {
  DsClfTrainConfig config;
  config.steps = 0;
  config.width = 8;
  config.depth = 2;
  config.batch_size = 8;
  config.val_batches_per_domain = 10;
  const auto r = train_dsclf(corpus(), config);
  CHECK(r.curve.size() == 1);
  CHECK(r.best_step == 0);
  CHECK(r.best_accuracy < 0.8);
  MESSAGE("untrained dataset-classification accuracy: " << r.best_accuracy);
}

TEST_CASE("short training lowers the validation loss and is reproducible") {
  DsClfTrainConfig config;
  config.steps = 300;
  config.decay_steps = 300;
  config.eval_every = 100;
  config.width = 8;
  config.depth = 2;
  config.batch_size = 8;
  config.val_batches_per_domain = 10;
  config.initial_lr = 0.01;
  const auto r = train_dsclf(corpus(), config);
  REQUIRE(r.curve.size() == 4);
  CHECK(r.curve.back().loss < r.curve.front().loss);
  CHECK(r.curve.back().loss < std::log(3.0));
  CHECK(r.curve[r.best_index].step == r.best_step);
  CHECK(r.curve[r.best_index].accuracy == r.best_accuracy);
  for (const auto& pt : r.curve) {
    CHECK(pt.accuracy <= r.best_accuracy);
    if (pt.accuracy == r.best_accuracy) CHECK(pt.loss >= r.curve[r.best_index].loss);
  }
  const auto again = train_dsclf(corpus(), config);
  CHECK(again.best_step == r.best_step);
  CHECK(again.params.head_weight.same_values(r.params.head_weight));
}
