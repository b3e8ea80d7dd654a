#include "flute/dsclf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "flute/error.hpp"
#include "flute/ops.hpp"

namespace flute::dsclf {

DsClfParams DsClfParams::init(std::size_t datasets, std::size_t in_channels, std::size_t width, std::size_t depth,
                              std::uint64_t seed) {
  if (datasets == 0) throw ConfigError("dataset classifier needs at least one dataset");
  std::mt19937_64 rng(seed);
  DsClfParams p;
  p.encoder = nn::SetEncoderParams::init(in_channels, width, depth, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(width));
  std::uniform_real_distribution<double> dist(-bound, bound);
  p.head_weight = Tensor({datasets, width});
  for (auto& v : p.head_weight.values()) v = dist(rng);
  p.head_bias = Tensor({datasets}, 0.0);
  return p;
}

std::vector<Tensor*> DsClfParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& k : encoder.kernels) out.push_back(&k);
  for (auto& n : encoder.norms) {
    out.push_back(&n.gamma);
    out.push_back(&n.beta);
  }
  out.push_back(&head_weight);
  out.push_back(&head_bias);
  return out;
}

std::vector<const Tensor*> DsClfParams::tensors() const {
  std::vector<const Tensor*> out;
  for (const auto& k : encoder.kernels) out.push_back(&k);
  for (const auto& n : encoder.norms) {
    out.push_back(&n.gamma);
    out.push_back(&n.beta);
  }
  out.push_back(&head_weight);
  out.push_back(&head_bias);
  return out;
}

void DsClfParams::set_requires_grad(bool on) {
  for (auto* t : tensors()) t->set_requires_grad(on);
}

void DsClfParams::validate() const {
  const auto d = encoder.depth();
  if (d == 0 || encoder.norms.size() != d || encoder.stats.size() != d) {
    throw ShapeError("dataset classifier: inconsistent set-encoder depth");
  }
  if (head_weight.rank() != 2 || head_weight.dim(1) != encoder.width() || head_bias.shape() != Shape{head_weight.dim(0)}) {
    throw ShapeError("dataset classifier: head does not match the encoder width");
  }
}

Var dsclf_logits(Tape& tape, const Var& batch, DsClfParams& params, bool update_running) {
  Var code = nn::set_encode(tape, batch, params.encoder, update_running);
  Var row = ops::reshape(code, {1, code.numel()});
  return ops::linear(row, tape.param(params.head_weight), tape.param(params.head_bias));
}

std::vector<double> dsclf_logits(const Tensor& batch, const DsClfParams& params) {
  Tape tape;
  Var code = nn::set_encode(tape, tape.constant(batch), params.encoder);
  Var row = ops::reshape(code, {1, code.numel()});
  Var logits = ops::linear(row, tape.param(params.head_weight), tape.param(params.head_bias));
  return logits.value().values();
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

void BlendWeights::validate() const {
  if (values.empty()) throw NumericError("blend weights are empty");
  double total = 0.0;
  for (double w : values) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw NumericError("blend weight is negative or non-finite");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw NumericError("blend weights do not sum to 1");
}

std::size_t BlendWeights::argmax() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

void DsClfTrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("dsclf: batch_size must be positive");
  if (!(initial_lr > 0.0)) throw ConfigError("dsclf: initial_lr must be positive");
  if (width == 0 || depth == 0) throw ConfigError("dsclf: encoder width and depth must be positive");
  if (eval_every == 0) throw ConfigError("dsclf: eval_every must be positive");
  if (val_batches_per_domain == 0) throw ConfigError("dsclf: val_batches_per_domain must be positive");
}

namespace {

Tensor random_batch(const data::Domain& d, const std::vector<std::size_t>& classes, std::size_t size,
                    std::mt19937_64& rng) {
  const std::size_t pool = classes.size() * d.images.per_class;
  if (pool == 0) throw DataError("domain " + d.spec.name + " has an empty split");
  std::vector<std::size_t> flat(pool);
  std::iota(flat.begin(), flat.end(), 0);
  const std::size_t take = std::min(size, pool);
  for (std::size_t i = 0; i < take; ++i) {
    const auto j = std::uniform_int_distribution<std::size_t>(i, pool - 1)(rng);
    std::swap(flat[i], flat[j]);
  }
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t i = 0; i < take; ++i) {
    picks.emplace_back(classes[flat[i] / d.images.per_class], flat[i] % d.images.per_class);
  }
  return data::stack_images(d, picks);
}

}  // namespace

double dsclf_accuracy(const DsClfParams& params, const data::SplitCorpus& corpus, data::Split split,
                      std::size_t batches_per_domain, std::size_t batch_size, std::uint64_t seed, double* mean_loss) {
  const auto train_ids = corpus.training_domains();
  if (train_ids.size() != params.datasets()) throw ShapeError("dsclf_accuracy: classifier/corpus dataset mismatch");
  std::mt19937_64 rng(seed);
  std::size_t correct = 0, total = 0;
  double loss = 0.0;
  for (std::size_t m = 0; m < train_ids.size(); ++m) {
    const auto& d = corpus.domains[train_ids[m]];
    for (std::size_t b = 0; b < batches_per_domain; ++b) {
      const auto logits = dsclf_logits(random_batch(d, d.split.of(split), batch_size, rng), params);
      const auto p = softmax(logits);
      BlendWeights w{p};
      correct += (w.argmax() == m) ? 1 : 0;
      loss -= std::log(std::max(p[m], 1e-300));
      ++total;
    }
  }
  if (mean_loss) *mean_loss = loss / static_cast<double>(total);
  return static_cast<double>(correct) / static_cast<double>(total);
}

DsClfTrainResult train_dsclf(const data::SplitCorpus& corpus, const DsClfTrainConfig& config) {
  config.validate();
  const auto train_ids = corpus.training_domains();
  if (train_ids.size() < 2) throw ConfigError("dataset classifier needs at least 2 training domains");
  DsClfTrainResult result;
  DsClfParams params = DsClfParams::init(train_ids.size(), 1, config.width, config.depth, config.seed);
  params.set_requires_grad(true);
  optim::AdamState adam;
  std::mt19937_64 rng(data::mix_seed(config.seed, 0xd5c1f));
  const std::uint64_t val_seed = data::mix_seed(config.seed, 0x7a1);

  auto evaluate = [&](std::size_t step) {
    ValidationPoint pt;
    pt.step = step;
    pt.accuracy = dsclf_accuracy(params, corpus, data::Split::Val, config.val_batches_per_domain, config.batch_size,
                                 val_seed, &pt.loss);
    result.curve.push_back(pt);
    const bool better = pt.accuracy > result.best_accuracy ||
                        (pt.accuracy == result.best_accuracy && pt.loss < result.curve[result.best_index].loss);
    if (result.curve.size() == 1 || better) {
      result.best_index = result.curve.size() - 1;
      result.best_accuracy = pt.accuracy;
      result.best_step = step;
      result.params = params;
    }
  };

  evaluate(0);
  const auto tensors = params.tensors();
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto m = std::uniform_int_distribution<std::size_t>(0, train_ids.size() - 1)(rng);
    const auto& d = corpus.domains[train_ids[m]];
    Tensor batch = random_batch(d, d.split.train, config.batch_size, rng);
    Tape tape;
    Var logits = dsclf_logits(tape, tape.constant(std::move(batch)), params, true);
    std::vector<std::size_t> label{m};
    Var loss = ops::softmax_cross_entropy(logits, ops::one_hot(label, train_ids.size()));
    if (!std::isfinite(loss.value()[0])) {
      throw NumericError("dataset classifier: non-finite loss at step " + std::to_string(step));
    }
    tape.backward(loss);
    optim::adam_update(tensors, adam, optim::cosine_decay(step, config.initial_lr, config.decay_steps));
    if ((step + 1) % config.eval_every == 0 || step + 1 == config.steps) evaluate(step + 1);
  }
  result.params.set_requires_grad(false);
  return result;
}

FilmSet blend_with_weights(const FilmBank& bank, std::span<const double> weights) {
  if (bank.size() == 0) throw ShapeError("blend: empty FiLM bank");
  if (weights.size() != bank.size()) {
    throw ShapeError("blend: " + std::to_string(weights.size()) + " weights for a bank of " +
                     std::to_string(bank.size()));
  }
  const FilmSet& first = bank.sets.front();
  for (const auto& s : bank.sets) {
    if (s.layers.size() != first.layers.size() || s.stats.size() != first.stats.size()) {
      throw ShapeError("blend: FiLM sets are not structurally identical");
    }
    for (std::size_t i = 0; i < s.layers.size(); ++i) {
      if (s.layers[i].gamma.shape() != first.layers[i].gamma.shape() ||
          s.layers[i].beta.shape() != first.layers[i].beta.shape() ||
          s.stats[i].running_mean.size() != first.stats[i].running_mean.size()) {
        throw ShapeError("blend: FiLM sets are not structurally identical");
      }
    }
  }
  FilmSet out;
  for (std::size_t i = 0; i < first.layers.size(); ++i) {
    const auto c = first.layers[i].channels();
    nn::FilmLayerParams layer{Tensor({c}, 0.0), Tensor({c}, 0.0)};
    nn::BatchNormState st = first.stats[i];
    std::fill(st.running_mean.begin(), st.running_mean.end(), 0.0);
    std::fill(st.running_var.begin(), st.running_var.end(), 0.0);
    for (std::size_t m = 0; m < bank.size(); ++m) {
      const double w = weights[m];
      const auto& src = bank.sets[m];
      for (std::size_t k = 0; k < c; ++k) {
        layer.gamma[k] += w * src.layers[i].gamma[k];
        layer.beta[k] += w * src.layers[i].beta[k];
        st.running_mean[k] += w * src.stats[i].running_mean[k];
        st.running_var[k] += w * src.stats[i].running_var[k];
      }
    }
    out.layers.push_back(std::move(layer));
    out.stats.push_back(std::move(st));
  }
  return out;
}

BlendResult blend(const Tensor& support, const DsClfParams& clf, const FilmBank& bank) {
  if (clf.datasets() != bank.size()) {
    throw ShapeError("blend: classifier has " + std::to_string(clf.datasets()) + " outputs, bank has " +
                     std::to_string(bank.size()) + " sets");
  }
  BlendResult out;
  out.weights.values = softmax(dsclf_logits(support, clf));
  out.film = blend_with_weights(bank, out.weights.values);
  return out;
}

FilmSet hard_blend(const Tensor& support, const DsClfParams& clf, const FilmBank& bank) {
  if (clf.datasets() != bank.size()) throw ShapeError("hard_blend: classifier/bank size mismatch");
  BlendWeights w{softmax(dsclf_logits(support, clf))};
  return anchor_init(bank, w.argmax());
}

}  // namespace flute::dsclf
