#include <CLI11.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "commands.hpp"
#include "flute/checkpoint.hpp"
#include "flute/config.hpp"
#include "flute/corpus_io.hpp"
#include "flute/dsclf.hpp"
#include "flute/eval.hpp"
#include "flute/optim.hpp"
#include "flute/stats.hpp"
#include "flute/train_joint.hpp"
#include "support/grad_suite.hpp"

using namespace flute;
namespace fs = std::filesystem;
using flute::testing::random_tensor;

namespace {

// Tolerances and sizes of every criterion.
constexpr double kGradTol = 1e-5;
constexpr std::size_t kGradSeeds = 100;
constexpr double kGradSeconds = 120.0;
constexpr std::size_t kMaskSteps = 50;
constexpr double kScheduleTol = 1e-12;
constexpr std::size_t kBlendTrials = 200;
constexpr double kBlendTol = 1e-12;
constexpr std::size_t kNccInstances = 100;
constexpr double kNccTol = 1e-12;
constexpr std::size_t kEpisodes = 200;
constexpr double kClfAccuracy = 0.95;
constexpr double kTrueWeight = 0.9;
constexpr double kBlendVsTrue = 0.02;
constexpr double kHardSoft = 0.01;
constexpr double kCiTol = 1e-3;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  flute::testing::SuiteResult r;
  for (std::size_t seed = 0; seed < kGradSeeds; ++seed) {
    flute::testing::primitive_suite(r, seed);
    flute::testing::layer_suite(r, 1000 + seed);
    flute::testing::network_suite(r, 2000 + seed, 2);
  }
  const double secs = seconds_since(t0);
  std::string worst_case;
  for (const auto& [name, c] : r.cases)
    if (c.max_rel_error == r.worst()) worst_case = name;
  bool every_case_checked = true;
  for (const auto& [name, c] : r.cases) every_case_checked = every_case_checked && c.checked > 0;
  return {r.worst() <= kGradTol && secs < kGradSeconds && every_case_checked,
          std::to_string(r.cases.size()) + " cases, " + std::to_string(r.checked()) + " coordinates, max rel err " +
              fmt("%.2e", r.worst()) + " (" + worst_case + "), " + fmt("%.1f s", secs)};
}

Outcome gradient_masking(const data::SplitCorpus& corpus, const RunConfig& config) {
  auto tc = config.train_config();
  auto state = train::JointState::init(corpus, tc);
  std::mt19937_64 rng(data::mix_seed(tc.seed, 77));
  std::size_t violations = 0, moved = 0;
  for (std::size_t step = 0; step < kMaskSteps; ++step) {
    const auto before = state;
    const auto batch = train::sample_training_batch(corpus, tc, rng);
    train::joint_step(state, batch, step, tc);
    for (std::size_t m = 0; m < state.bank.size(); ++m) {
      const bool same = state.bank.sets[m].same_values(before.bank.sets[m]) &&
                        state.heads.weights[m].same_values(before.heads.weights[m]);
      if (m == batch.dataset)
        moved += same ? 0 : 1;
      else
        violations += same ? 0 : 1;
    }
  }
  return {violations == 0 && moved == kMaskSteps,
          std::to_string(kMaskSteps) + " steps, " + std::to_string(violations) + " non-batch changes, " +
              std::to_string(moved) + " batch sets updated"};
}

// Restart index from the geometric series of round lengths.
double restarts_oracle(std::size_t step, const optim::Schedule& s) {
  double frac = double(step) / double(s.first_decay_steps);
  const double i = std::floor(std::log(1.0 - frac * (1.0 - s.t_mul)) / std::log(s.t_mul) + 1e-12);
  frac = (frac - (1.0 - std::pow(s.t_mul, i)) / (1.0 - s.t_mul)) / std::pow(s.t_mul, i);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  return s.initial_lr * std::pow(s.m_mul, i) * ((1.0 - s.alpha) * cosine + s.alpha);
}

Outcome schedule(const RunConfig& config) {
  const auto& s = config.train.schedule;
  optim::Schedule grid = s;
  grid.first_decay_steps = 100;  // rounds end at 100, 300 and 700 within the grid
  double worst = 0.0;
  for (const auto& sc : {s, grid})
    for (std::size_t step = 0; step < 1000; ++step)
      worst = std::max(worst, std::abs(optim::cosine_decay_restarts(step, sc) - restarts_oracle(step, sc)));
  const double lr0 = optim::cosine_decay_restarts(0, s);
  const bool appendix = s.initial_lr == 0.01 && s.t_mul == 2.0 && s.m_mul == 1.0 && s.alpha == 0.0;
  return {worst <= kScheduleTol && lr0 == 0.01 && appendix,
          "max abs err " + fmt("%.2e", worst) + ", lr(0) = " + fmt("%.17g", lr0)};
}

FilmBank random_bank(const ArchSpec& arch, std::size_t m, std::mt19937_64& rng) {
  FilmBank bank;
  for (std::size_t i = 0; i < m; ++i) {
    FilmSet f = scratch_init(arch);
    for (auto& l : f.layers) {
      l.gamma = random_tensor({l.channels()}, rng, 0.5, 1.5);
      l.beta = random_tensor({l.channels()}, rng, -0.5, 0.5);
    }
    for (auto& st : f.stats) {
      for (auto& v : st.running_mean) v = std::uniform_real_distribution<double>(-1, 1)(rng);
      for (auto& v : st.running_var) v = std::uniform_real_distribution<double>(0.2, 3)(rng);
    }
    bank.sets.push_back(std::move(f));
    bank.names.push_back("d" + std::to_string(i));
  }
  return bank;
}

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

Outcome blend_properties() {
  ArchSpec arch;
  arch.image_size = 16;
  arch.stem_width = 3;
  arch.blocks = {{3, 4, 2}};
  const std::size_t img = 16 * 16;
  std::size_t failures = 0;
  double sum_err = 0.0, onehot_err = 0.0, hull_err = 0.0, perm_err = 0.0;
  for (std::size_t trial = 0; trial < kBlendTrials; ++trial) {
    std::mt19937_64 rng(trial);
    const std::size_t m = 1 + trial % 5;
    const auto bank = random_bank(arch, m, rng);
    const auto clf = dsclf::DsClfParams::init(m, 1, 8, 2, trial);
    const std::size_t n = 3 + trial % 6;
    const Tensor support = random_tensor({n, 1, 16, 16}, rng, 0, 1);
    const auto b = dsclf::blend(support, clf, bank);

    double total = 0.0;
    for (double w : b.weights.values) {
      failures += w >= 0.0 ? 0 : 1;
      total += w;
    }
    sum_err = std::max(sum_err, std::abs(total - 1.0));

    const auto blended = flatten(b.film);
    std::vector<std::vector<double>> members;
    for (const auto& s : bank.sets) members.push_back(flatten(s));
    for (std::size_t i = 0; i < blended.size(); ++i) {
      double lo = members[0][i], hi = members[0][i];
      for (const auto& mm : members) {
        lo = std::min(lo, mm[i]);
        hi = std::max(hi, mm[i]);
      }
      hull_err = std::max({hull_err, lo - blended[i], blended[i] - hi});
    }

    for (std::size_t k = 0; k < m; ++k) {
      std::vector<double> e(m, 0.0);
      e[k] = 1.0;
      const auto rec = flatten(dsclf::blend_with_weights(bank, e));
      for (std::size_t i = 0; i < rec.size(); ++i) onehot_err = std::max(onehot_err, std::abs(rec[i] - members[k][i]));
    }

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor shuffled({n, 1, 16, 16}), twice({2 * n, 1, 16, 16});
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(support.values().begin() + perm[r] * img, img, shuffled.values().begin() + r * img);
      std::copy_n(support.values().begin() + r * img, img, twice.values().begin() + r * img);
      std::copy_n(support.values().begin() + r * img, img, twice.values().begin() + (n + r) * img);
    }
    for (const auto& variant : {shuffled, twice}) {
      const auto w = dsclf::blend(variant, clf, bank).weights.values;
      for (std::size_t k = 0; k < m; ++k) perm_err = std::max(perm_err, std::abs(w[k] - b.weights.values[k]));
    }
  }
  const bool ok = failures == 0 && sum_err <= kBlendTol && onehot_err <= kBlendTol && hull_err <= kBlendTol &&
                  perm_err <= kBlendTol;
  return {ok, std::to_string(kBlendTrials) + " trials, sum err " + fmt("%.1e", sum_err) + ", one-hot err " +
                  fmt("%.1e", onehot_err) + ", hull excess " + fmt("%.1e", std::max(hull_err, 0.0)) +
                  ", permutation/duplication err " + fmt("%.1e", perm_err)};
}

Outcome ncc_oracles() {
  using big = boost::multiprecision::cpp_bin_float_50;
  double cent_err = 0.0, prob_err = 0.0, row_err = 0.0;
  for (std::size_t seed = 0; seed < kNccInstances; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t ways = 2 + seed % 5, shots = 1 + seed % 4, dim = 3 + seed % 9, rows = 4 + seed % 7;
    std::vector<std::size_t> labels(ways * shots);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % ways;
    std::shuffle(labels.begin(), labels.end(), rng);
    const Tensor support = random_tensor({ways * shots, dim}, rng, -2, 2);
    const Tensor feats = random_tensor({rows, dim}, rng, -2, 2);
    const Tensor c = eval::ncc_centroids(support, labels, ways);
    const Tensor p = eval::ncc_probs(feats, c);

    std::vector<std::vector<big>> oc(ways, std::vector<big>(dim, 0));
    for (std::size_t i = 0; i < labels.size(); ++i)
      for (std::size_t k = 0; k < dim; ++k) oc[labels[i]][k] += big(support[i * dim + k]) / big(shots);
    for (std::size_t j = 0; j < ways; ++j)
      for (std::size_t k = 0; k < dim; ++k)
        cent_err = std::max(cent_err, std::abs(c[j * dim + k] - static_cast<double>(oc[j][k])));

    for (std::size_t b = 0; b < rows; ++b) {
      std::vector<big> e(ways);
      big z = 0, fn = 0;
      for (std::size_t k = 0; k < dim; ++k) fn += big(feats[b * dim + k]) * big(feats[b * dim + k]);
      for (std::size_t j = 0; j < ways; ++j) {
        big dot = 0, cn = 0;
        for (std::size_t k = 0; k < dim; ++k) {
          dot += big(feats[b * dim + k]) * oc[j][k];
          cn += oc[j][k] * oc[j][k];
        }
        e[j] = boost::multiprecision::exp(dot / boost::multiprecision::sqrt(fn * cn));
        z += e[j];
      }
      double row = 0.0;
      for (std::size_t j = 0; j < ways; ++j) {
        prob_err = std::max(prob_err, std::abs(p[b * ways + j] - static_cast<double>(e[j] / z)));
        row += p[b * ways + j];
      }
      row_err = std::max(row_err, std::abs(row - 1.0));
    }
  }
  return {cent_err <= kNccTol && prob_err <= kNccTol && row_err <= kNccTol,
          std::to_string(kNccInstances) + " instances, centroid err " + fmt("%.1e", cent_err) + ", prob err " +
              fmt("%.1e", prob_err) + ", row-sum err " + fmt("%.1e", row_err)};
}

Outcome pass_accounting(const data::SplitCorpus& corpus, const RunConfig& config, const io::TemplateCheckpoint& tpl,
                        const dsclf::DsClfParams& clf) {
  data::EpisodeRequest req{corpus.training_domains(), data::Split::Val, config.ways, config.shots, config.queries};
  const auto ep = data::sample_episode(corpus, req, 5).episode;
  std::string detail;
  bool ok = true;
  const auto sum = tpl.phi.checksum();
  for (std::size_t t : {0, 1, 6}) {
    eval::FinetuneConfig ft = config.finetune;
    ft.steps = t;
    const auto r = eval::solve_episode(ep, tpl.phi, tpl.bank, &clf, {eval::InitKind::Blender, 0}, ft);
    ok = ok && r.passes.total() == 2 * t + 1 && r.passes.forward == t + 1 && r.passes.backward == t;
    detail += (detail.empty() ? "" : ", ") + std::string("T=") + std::to_string(t) + ": " +
              std::to_string(r.passes.total());
  }
  ok = ok && tpl.phi.checksum() == sum;
  return {ok, detail + " passes"};
}

// Per-episode query accuracies of one scheme on paired episodes.
struct Runner {
  const data::SplitCorpus& corpus;
  const RunConfig& config;
  const io::TemplateCheckpoint& tpl;
  const dsclf::DsClfParams& clf;

  data::Episode episode(std::size_t domain, data::Split split, std::size_t i) const {
    data::EpisodeRequest req{{domain}, split, config.ways, config.shots, config.queries};
    return data::sample_episode(corpus, req, data::mix_seed(data::mix_seed(config.seed, 900 + domain), i)).episode;
  }

  std::vector<double> accuracies(std::size_t domain, data::Split split, eval::InitScheme scheme, std::size_t steps,
                                 std::vector<std::vector<double>>* weights = nullptr) const {
    eval::FinetuneConfig ft = config.finetune;
    ft.steps = steps;
    std::vector<double> out;
    for (std::size_t i = 0; i < kEpisodes; ++i) {
      const auto r = eval::solve_episode(episode(domain, split, i), tpl.phi, tpl.bank, &clf, scheme, ft);
      out.push_back(r.query_accuracy);
      if (weights) weights->push_back(r.blend_weights);
    }
    return out;
  }
};

Outcome weak_generalization(const Runner& run) {
  const auto ids = run.corpus.training_domains();
  bool ok = true;
  std::string detail;
  for (std::size_t m = 0; m < ids.size(); ++m) {
    std::vector<std::vector<double>> weights;
    const auto blender = run.accuracies(ids[m], data::Split::Val, {eval::InitKind::Blender, 0}, 0, &weights);
    const auto truth = run.accuracies(ids[m], data::Split::Val, {eval::InitKind::Anchor, m}, 0);
    std::size_t hits = 0;
    double true_weight = 0.0;
    for (const auto& w : weights) {
      hits += dsclf::BlendWeights{w}.argmax() == m ? 1 : 0;
      true_weight += w[m];
    }
    const double acc = double(hits) / double(weights.size());
    true_weight /= double(weights.size());
    const double gap = std::abs(mean(blender) - mean(truth));
    ok = ok && acc >= kClfAccuracy && true_weight >= kTrueWeight && gap <= kBlendVsTrue;
    detail += (detail.empty() ? "" : "; ") + run.tpl.bank.names[m] + ": clf acc " + fmt("%.3f", acc) +
              ", true weight " + fmt("%.3f", true_weight) + ", blender " + fmt("%.3f", mean(blender)) + " vs true " +
              fmt("%.3f", mean(truth));
  }
  return {ok, detail};
}

Outcome strong_generalization(const Runner& run) {
  const std::size_t anchor = run.tpl.bank.id_of(run.config.train.anchor_domain);
  const std::size_t t = run.config.finetune.steps;
  bool ok = t == 6 && run.config.finetune.lr == 0.005;
  std::string detail;
  for (auto d : run.corpus.held_out_domains()) {
    const std::vector<std::pair<std::string, std::vector<double>>> methods{
        {"blender+ft", run.accuracies(d, data::Split::Test, {eval::InitKind::Blender, 0}, t)},
        {"scratch", run.accuracies(d, data::Split::Test, {eval::InitKind::Scratch, 0}, 0)},
        {"anchor", run.accuracies(d, data::Split::Test, {eval::InitKind::Anchor, anchor}, 0)},
        {"scratch+ft", run.accuracies(d, data::Split::Test, {eval::InitKind::Scratch, 0}, t)},
        {"anchor+ft", run.accuracies(d, data::Split::Test, {eval::InitKind::Anchor, anchor}, t)},
        {"hard+ft", run.accuracies(d, data::Split::Test, {eval::InitKind::HardBlender, 0}, t)}};
    std::vector<std::vector<double>> samples;
    for (const auto& [name, acc] : methods) samples.push_back(acc);
    const auto ranks = eval::compute_ranks(samples).ranks;
    const double b = mean(methods[0].second);
    bool best_rank = true;
    for (std::size_t i = 1; i < ranks.size(); ++i) best_rank = best_rank && ranks[0] <= ranks[i];
    ok = ok && b > mean(methods[1].second) && b > mean(methods[2].second) && best_rank;
    detail += (detail.empty() ? "" : "; ") + run.corpus.domains[d].spec.name + ":";
    for (std::size_t i = 0; i < methods.size(); ++i)
      detail += " " + methods[i].first + " " + fmt("%.3f", mean(methods[i].second)) + " (r" + fmt("%.1f", ranks[i]) + ")";
  }
  return {ok, detail};
}

Outcome hard_soft_parity(const Runner& run) {
  const auto ids = run.corpus.training_domains();
  bool ok = true;
  std::string detail;
  for (std::size_t t : {std::size_t{0}, run.config.finetune.steps}) {
    for (std::size_t m = 0; m < ids.size(); ++m) {
      const double soft = mean(run.accuracies(ids[m], data::Split::Test, {eval::InitKind::Blender, 0}, t));
      const double hard = mean(run.accuracies(ids[m], data::Split::Test, {eval::InitKind::HardBlender, 0}, t));
      ok = ok && std::abs(soft - hard) <= kHardSoft;
      detail += (detail.empty() ? "" : "; ") + run.tpl.bank.names[m] + " T=" + std::to_string(t) + ": " +
                fmt("%.4f", soft) + " vs " + fmt("%.4f", hard);
    }
  }
  return {ok, detail};
}

Outcome statistics() {
  std::vector<double> v(600);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i % 2 ? 1.0 : 0.0;
  const auto ci = eval::confidence_interval(v);
  const std::vector<double> same{0.1, 0.5, 0.9, 0.4};
  const auto r = eval::compute_ranks({same, same});
  const bool ok = ci.mean == 0.5 && std::abs(ci.halfwidth - 0.0400) <= kCiTol && r.ranks == std::vector<double>{1.5, 1.5};
  return {ok, "CI " + fmt("%.4f", ci.mean) + " +- " + fmt("%.4f", ci.halfwidth) + ", tied ranks " +
                  fmt("%.1f", r.ranks[0]) + "/" + fmt("%.1f", r.ranks[1])};
}

void run_pipeline(const RunConfig& config, const fs::path& dir, bool evaluate) {
  cli::gen_data(config, dir / "corpus");
  cli::train_template_cmd(config, dir / "corpus", dir / "template");
  cli::train_dsclassifier_cmd(config, dir / "corpus", dir / "dsclf");
  if (evaluate) {
    cli::evaluate_cmd(config, dir / "corpus", dir / "template" / "template.ckpt", dir / "dsclf" / "dsclf.ckpt",
                      cli::EvalRequest{}, dir / "eval");
  }
}

bool same_template(const io::TemplateCheckpoint& a, const io::TemplateCheckpoint& b) {
  if (a.phi.checksum() != b.phi.checksum() || a.bank.size() != b.bank.size() || a.bank.names != b.bank.names) return false;
  for (std::size_t m = 0; m < a.bank.size(); ++m)
    if (!a.bank.sets[m].same_values(b.bank.sets[m])) return false;
  return a.step == b.step && a.seed == b.seed && a.config_hash == b.config_hash;
}

Outcome determinism(const RunConfig& reduced, const fs::path& work, const fs::path& full_template) {
  const auto a = work / "rerun_a", b = work / "rerun_b";
  run_pipeline(reduced, a, true);
  run_pipeline(reduced, b, true);
  const std::vector<fs::path> files{"template/template.ckpt", "template/template_with_heads.ckpt", "dsclf/dsclf.ckpt",
                                    "eval/summary.json", "eval/episodes.csv"};
  std::size_t identical = 0;
  for (const auto& f : files) identical += read_bytes(a / f) == read_bytes(b / f) && !read_bytes(a / f).empty() ? 1 : 0;

  const auto loaded = io::load_template(full_template);
  const auto copy = work / "roundtrip.ckpt";
  io::save_template(copy, loaded);
  const bool bytes = read_bytes(copy) == read_bytes(full_template);
  const bool values = same_template(loaded, io::load_template(copy));
  return {identical == files.size() && bytes && values,
          std::to_string(identical) + "/" + std::to_string(files.size()) + " rerun artifacts identical, round trip " +
              (values ? "value-exact" : "differs") + (bytes ? ", re-save byte-identical" : ", re-save differs")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string config_path, reduced_path, work_dir;
  std::set<int> only;
  app.add_option("--config", config_path, "Full-scale run configuration")->required()->check(CLI::ExistingFile);
  app.add_option("--reduced-config", reduced_path, "Small configuration for the rerun check")
      ->required()
      ->check(CLI::ExistingFile);
  app.add_option("--work", work_dir, "Scratch directory (default: a fresh temporary one)");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const auto config = load_config(config_path);
  const auto reduced = load_config(reduced_path);
  const fs::path work = work_dir.empty() ? fs::temp_directory_path() / ("flute-acceptance-" + std::to_string(::getpid()))
                                         : fs::path(work_dir);
  fs::remove_all(work);
  fs::create_directories(work);
  const auto want = [&](int id) { return only.empty() || only.count(id) > 0; };
  const auto needs_pipeline = [&] {
    for (int id : {2, 6, 7, 8, 9, 11})
      if (want(id)) return true;
    return false;
  }();

  int failed = 0;
  const auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    if (!want(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s C%d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  };

  report(1, "gradient suite", gradient_suite);
  report(3, "restart schedule", [&] { return schedule(config); });
  report(4, "blend properties", blend_properties);
  report(5, "NCC oracles", ncc_oracles);
  report(10, "statistics", statistics);

  if (needs_pipeline) {
    const auto t0 = std::chrono::steady_clock::now();
    run_pipeline(config, work / "full", false);
    std::printf("pipeline trained in %.1f s\n", seconds_since(t0));
    std::fflush(stdout);
    const auto corpus = io::load_corpus(work / "full" / "corpus");
    const auto tpl = io::load_template(work / "full" / "template" / "template.ckpt");
    const auto clf = io::load_dsclf(work / "full" / "dsclf" / "dsclf.ckpt");
    const Runner run{corpus, config, tpl, clf.params};
    report(2, "gradient masking", [&] { return gradient_masking(corpus, config); });
    report(6, "pass accounting", [&] { return pass_accounting(corpus, config, tpl, clf.params); });
    report(7, "weak generalization", [&] { return weak_generalization(run); });
    report(8, "strong generalization", [&] { return strong_generalization(run); });
    report(9, "hard vs soft blender", [&] { return hard_soft_parity(run); });
    report(11, "determinism and persistence",
           [&] { return determinism(reduced, work, work / "full" / "template" / "template.ckpt"); });
  }
  if (work_dir.empty()) fs::remove_all(work);
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
