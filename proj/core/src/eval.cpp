#include "flute/eval.hpp"

#include <algorithm>
#include <cmath>

#include "flute/error.hpp"
#include "flute/ops.hpp"
#include "flute/optim.hpp"

namespace flute::eval {

std::string InitScheme::name() const {
  switch (kind) {
    case InitKind::Blender: return "blender";
    case InitKind::HardBlender: return "hard_blender";
    case InitKind::Scratch: return "scratch";
    case InitKind::Anchor: return "anchor";
  }
  return "?";
}

InitScheme InitScheme::parse(const std::string& text, const FilmBank& bank, std::size_t default_anchor) {
  if (text == "blender") return {InitKind::Blender, 0};
  if (text == "hard_blender") return {InitKind::HardBlender, 0};
  if (text == "scratch") return {InitKind::Scratch, 0};
  if (text == "anchor") {
    if (default_anchor >= bank.size()) throw ConfigError("anchor dataset id out of range");
    return {InitKind::Anchor, default_anchor};
  }
  if (text.rfind("anchor:", 0) == 0) return {InitKind::Anchor, bank.id_of(text.substr(7))};
  throw ConfigError("unknown init scheme '" + text + "'");
}

std::vector<InitScheme> InitScheme::all(std::size_t anchor_id) {
  return {{InitKind::Blender, 0}, {InitKind::HardBlender, 0}, {InitKind::Scratch, 0}, {InitKind::Anchor, anchor_id}};
}

void FinetuneConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("finetune: lr must be positive");
}

std::string to_string(FinetuneOptimizer opt) { return opt == FinetuneOptimizer::Adam ? "adam" : "gd"; }

FinetuneOptimizer parse_optimizer(const std::string& s) {
  if (s == "adam") return FinetuneOptimizer::Adam;
  if (s == "gd") return FinetuneOptimizer::PlainGD;
  throw ConfigError("unknown fine-tune optimizer '" + s + "'");
}

Tensor ncc_centroids(const Tensor& features, std::span<const std::size_t> labels, std::size_t ways) {
  Tape tape;
  return ops::class_means(tape.constant(features), labels, ways).value();
}

Var ncc_logits(const Var& features, const Var& centroids) {
  return ops::matmul_nt(ops::l2_normalize(features, 1), ops::l2_normalize(centroids, 1));
}

Tensor ncc_probs(const Tensor& features, const Tensor& centroids) {
  Tape tape;
  Tensor cos = ncc_logits(tape.constant(features), tape.constant(centroids)).value();
  const std::size_t rows = cos.dim(0), cols = cos.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = cos.data().data() + r * cols;
    const double m = *std::max_element(row, row + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - m);
      total += row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= total;
  }
  return cos;
}

Var ncc_support_loss(const Var& features, std::span<const std::size_t> labels, std::size_t ways) {
  Var centroids = ops::class_means(features, labels, ways);
  Var logits = ncc_logits(features, centroids);
  return ops::scale(ops::softmax_cross_entropy(logits, ops::one_hot(labels, ways)),
                    static_cast<double>(labels.size()));
}

std::vector<std::size_t> predict(const Tensor& scores) {
  if (scores.rank() != 2) throw ShapeError("predict: expected a [B,N] score matrix");
  const std::size_t rows = scores.dim(0), cols = scores.dim(1);
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (scores[r * cols + c] > scores[r * cols + best]) best = c;
    }
    out[r] = best;
  }
  return out;
}

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels) {
  if (predicted.size() != labels.size() || labels.empty()) throw ShapeError("accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

namespace {

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() == 0) throw ShapeError("concat_rows: rank mismatch");
  for (std::size_t i = 1; i < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) throw ShapeError("concat_rows: trailing dimensions differ");
  }
  Shape s = a.shape();
  s[0] += b.dim(0);
  std::vector<double> data(a.values());
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Tensor(std::move(s), std::move(data));
}

struct FinalPass {
  double support_loss = 0.0;
  double support_accuracy = 0.0;
  std::vector<std::size_t> query_predictions;
};

// One extractor pass over support (+ query). Support statistics normalize
// every row; centroids come from the support rows.
FinalPass evaluate_pass(const data::Episode& ep, const Template& phi, const FilmSet& film, bool with_query,
                        PassCounter* counter) {
  const std::size_t ns = ep.support.dim(0);
  Tensor batch = with_query ? concat_rows(ep.support, ep.query) : ep.support;
  Tape tape;
  nn::NormOptions opt{nn::NormMode::BatchStats, ns, false};
  Var feats = extract_features(tape, tape.constant(std::move(batch)), phi, film, opt);
  if (counter) ++counter->forward;
  Var support = with_query ? ops::slice_rows(feats, 0, ns) : feats;
  Var centroids = ops::class_means(support, ep.support_labels, ep.ways);
  Var s_logits = ncc_logits(support, centroids);
  FinalPass out;
  out.support_loss = ops::softmax_cross_entropy(s_logits, ops::one_hot(ep.support_labels, ep.ways)).value()[0] *
                     static_cast<double>(ns);
  out.support_accuracy = accuracy(predict(s_logits.value()), ep.support_labels);
  if (with_query) {
    Var query = ops::slice_rows(feats, ns, feats.shape()[0]);
    out.query_predictions = predict(ncc_logits(query, centroids).value());
  }
  return out;
}

struct TuneOutcome {
  FinetuneResult result;
  std::vector<double> query_trajectory;
  std::vector<std::size_t> predictions;
};

TuneOutcome run_finetune(const data::Episode& ep, const Template& phi, const FilmSet& init,
                         const FinetuneConfig& config, PassCounter* counter, bool with_query) {
  config.validate();
  if (!init.matches(phi.arch)) throw ShapeError("finetune: initial FiLM set does not match the template");
  TuneOutcome out;
  FilmSet film = init;
  film.set_requires_grad(true);
  optim::AdamState adam;
  const auto tensors = film.tensors();

  for (std::size_t step = 0; step < config.steps; ++step) {
    Tape tape;
    auto stats = film.stats;
    const auto phi_vars = bind(tape, phi);
    const auto film_vars = bind(tape, film);
    Var feats = forward_features(tape.constant(ep.support), phi.arch, phi_vars, film_vars, stats,
                                 nn::NormOptions{nn::NormMode::BatchStats, 0, false});
    if (counter) ++counter->forward;
    Var centroids = ops::class_means(feats, ep.support_labels, ep.ways);
    Var logits = ncc_logits(feats, centroids);
    Var loss = ops::scale(ops::softmax_cross_entropy(logits, ops::one_hot(ep.support_labels, ep.ways)),
                          static_cast<double>(ep.support_labels.size()));
    const double loss_value = loss.value()[0];
    if (!std::isfinite(loss_value)) {
      out.result.diverged = true;
      break;
    }
    out.result.support_loss.push_back(loss_value);
    out.result.support_accuracy.push_back(accuracy(predict(logits.value()), ep.support_labels));
    if (config.track_query) {
      out.query_trajectory.push_back(
          accuracy(evaluate_pass(ep, phi, film, true, counter).query_predictions, ep.query_labels));
    }
    tape.backward(loss);
    if (counter) ++counter->backward;

    FilmSet before = film;
    bool ok = true;
    try {
      if (config.optimizer == FinetuneOptimizer::Adam) {
        optim::adam_update(tensors, adam, config.lr);
      } else {
        for (auto* t : tensors) {
          const auto& g = t->grad();
          for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] -= config.lr * g[i];
        }
      }
      for (auto* t : tensors) ok = ok && t->all_finite();
    } catch (const NumericError&) {
      ok = false;
    }
    if (!ok) {
      film = std::move(before);
      out.result.diverged = true;
      break;
    }
    ++out.result.steps_taken;
  }

  film.set_requires_grad(false);
  const FinalPass last = evaluate_pass(ep, phi, film, with_query, counter);
  if (std::isfinite(last.support_loss)) {
    out.result.support_loss.push_back(last.support_loss);
    out.result.support_accuracy.push_back(last.support_accuracy);
  } else {
    out.result.diverged = true;
  }
  out.predictions = last.query_predictions;
  if (config.track_query && with_query) {
    out.query_trajectory.push_back(accuracy(last.query_predictions, ep.query_labels));
  }
  out.result.film = std::move(film);
  return out;
}

}  // namespace

FinetuneResult finetune_film(const data::Episode& episode, const Template& phi, const FilmSet& init,
                             const FinetuneConfig& config, PassCounter* counter) {
  return run_finetune(episode, phi, init, config, counter, false).result;
}

FilmSet initialize_film(const InitScheme& scheme, const Tensor& support, const Template& phi, const FilmBank& bank,
                        const dsclf::DsClfParams* clf, std::vector<double>* weights_out) {
  switch (scheme.kind) {
    case InitKind::Scratch: return scratch_init(phi);
    case InitKind::Anchor: return anchor_init(bank, scheme.anchor_id);
    case InitKind::Blender:
    case InitKind::HardBlender: {
      if (!clf) throw ConfigError(scheme.name() + " initialization needs a dataset classifier");
      auto b = dsclf::blend(support, *clf, bank);
      b.weights.validate();
      if (weights_out) *weights_out = b.weights.values;
      if (scheme.kind == InitKind::HardBlender) return anchor_init(bank, b.weights.argmax());
      return std::move(b.film);
    }
  }
  throw ConfigError("unknown init scheme");
}

EpisodeResult solve_episode(const data::Episode& episode, const Template& phi, const FilmBank& bank,
                            const dsclf::DsClfParams* clf, const InitScheme& scheme, const FinetuneConfig& config) {
  EpisodeResult out;
  FilmSet init = initialize_film(scheme, episode.support, phi, bank, clf, &out.blend_weights);
  auto tuned = run_finetune(episode, phi, init, config, &out.passes, true);
  out.support_accuracy = std::move(tuned.result.support_accuracy);
  out.support_loss = std::move(tuned.result.support_loss);
  out.query_trajectory = std::move(tuned.query_trajectory);
  out.predictions = std::move(tuned.predictions);
  out.diverged = tuned.result.diverged;
  out.query_accuracy = accuracy(out.predictions, episode.query_labels);
  return out;
}

}  // namespace flute::eval
