#include <benchmark/benchmark.h>

#include <random>

#include "flute/episodes.hpp"
#include "flute/eval.hpp"
#include "flute/model.hpp"
#include "flute/ops.hpp"

using namespace flute;

namespace {

Tensor uniform(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

const data::SplitCorpus& corpus() {
  static const data::SplitCorpus c = data::build_corpus(data::CorpusSpec::desk_default(1));
  return c;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  Tensor x = uniform({batch, 16, 16, 16}, 1);
  Tensor k = uniform({32, 16, 3, 3}, 2);
  k.set_requires_grad(true);
  for (auto _ : state) {
    Tape tape;
    Var y = ops::conv2d(tape.constant(x), tape.param(k), 1, 1);
    tape.backward(ops::sum(y));
    benchmark::DoNotOptimize(k.grad().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(1)->Arg(25)->Arg(75);

void BM_ExtractFeatures(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto arch = ArchSpec::restiny();
  const auto phi = Template::init(arch, 3);
  const auto psi = scratch_init(arch);
  const Tensor x = uniform({batch, 1, arch.image_size, arch.image_size}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(extract_features(x, phi, psi, {}).values().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_ExtractFeatures)->Arg(25)->Arg(75);

void BM_SolveEpisode(benchmark::State& state) {
  const auto arch = ArchSpec::restiny();
  const auto phi = Template::init(arch, 5);
  FilmBank bank;
  bank.sets.push_back(scratch_init(arch));
  bank.names.push_back("glyphs");
  data::EpisodeRequest req{corpus().training_domains(), data::Split::Test, 5, 5, 10};
  const auto ep = data::sample_episode(corpus(), req, 7).episode;
  eval::FinetuneConfig ft;
  ft.steps = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    const auto r = eval::solve_episode(ep, phi, bank, nullptr, {eval::InitKind::Anchor, 0}, ft);
    benchmark::DoNotOptimize(r.query_accuracy);
  }
}
BENCHMARK(BM_SolveEpisode)->Arg(0)->Arg(6)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
