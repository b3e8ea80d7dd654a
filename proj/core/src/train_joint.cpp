#include "flute/train_joint.hpp"

#include <cmath>
#include <cstdio>

#include "flute/error.hpp"
#include "flute/eval.hpp"
#include "flute/ops.hpp"

namespace flute::train {

void JointTrainConfig::validate() const {
  arch.validate();
  if (batch_size < 2) throw ConfigError("train: batch_size must be at least 2");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must lie in [0,1)");
  if (!(wd_conv >= 0.0) || !(wd_film >= 0.0)) throw ConfigError("train: weight decay must be non-negative");
  if (!(anchor_probability >= 0.0 && anchor_probability <= 1.0)) {
    throw ConfigError("train: anchor_probability must lie in [0,1]");
  }
  if (!(initial_temperature > 0.0)) throw ConfigError("train: initial_temperature must be positive");
  schedule.validate();
}

namespace {

std::size_t anchor_position(const data::SplitCorpus& corpus, const JointTrainConfig& config) {
  const auto ids = corpus.training_domains();
  for (std::size_t m = 0; m < ids.size(); ++m) {
    if (corpus.domains[ids[m]].spec.name == config.anchor_domain) return m;
  }
  throw ConfigError("train: anchor domain '" + config.anchor_domain + "' is not a training domain");
}

TrainingBatch draw_batch(const data::Domain& d, std::size_t dataset, std::size_t size, std::mt19937_64& rng) {
  const auto& classes = d.split.train;
  if (classes.empty()) throw DataError("domain " + d.spec.name + " has no training classes");
  std::uniform_int_distribution<std::size_t> pick_class(0, classes.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_example(0, d.images.per_class - 1);
  TrainingBatch b;
  b.dataset = dataset;
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t i = 0; i < size; ++i) {
    const auto c = pick_class(rng);
    picks.emplace_back(classes[c], pick_example(rng));
    b.labels.push_back(c);
  }
  b.images = data::stack_images(d, picks);
  return b;
}

double batch_accuracy(const Tensor& logits, std::span<const std::size_t> labels) {
  return eval::accuracy(eval::predict(logits), labels);
}

}  // namespace

TrainingBatch sample_training_batch(const data::SplitCorpus& corpus, const JointTrainConfig& config,
                                    std::mt19937_64& rng) {
  const auto ids = corpus.training_domains();
  if (ids.empty()) throw DataError("corpus has no training domains");
  const auto anchor = anchor_position(corpus, config);
  std::size_t m = anchor;
  if (ids.size() > 1) {
    const bool use_anchor = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < config.anchor_probability;
    if (!use_anchor) {
      m = std::uniform_int_distribution<std::size_t>(0, ids.size() - 2)(rng);
      if (m >= anchor) ++m;
    }
  }
  return draw_batch(corpus.domains[ids[m]], m, config.batch_size, rng);
}

JointState JointState::init(const data::SplitCorpus& corpus, const JointTrainConfig& config) {
  config.validate();
  const auto ids = corpus.training_domains();
  if (ids.empty()) throw DataError("corpus has no training domains");
  if (corpus.image_size() != config.arch.image_size) {
    throw ConfigError("train: corpus image size " + std::to_string(corpus.image_size()) +
                      " does not match the architecture (" + std::to_string(config.arch.image_size) + ")");
  }
  anchor_position(corpus, config);
  JointState s;
  s.phi = Template::init(config.arch, data::mix_seed(config.seed, 1));
  std::vector<std::size_t> counts;
  for (auto id : ids) {
    s.bank.sets.push_back(scratch_init(config.arch));
    s.bank.names.push_back(corpus.domains[id].spec.name);
    counts.push_back(corpus.domains[id].split.train.size());
  }
  std::mt19937_64 rng(data::mix_seed(config.seed, 2));
  s.heads = ReadoutHeads::init(counts, config.arch.feature_dim(), config.initial_temperature, rng);
  s.phi_velocity.resize(s.phi.tensors().size());
  s.film_velocity.assign(ids.size(), std::vector<std::vector<double>>(s.bank.sets.front().tensors().size()));
  s.head_velocity.resize(ids.size());
  return s;
}

StepResult joint_step(JointState& state, const TrainingBatch& batch, std::size_t step, const JointTrainConfig& config) {
  const std::size_t d = batch.dataset;
  if (d >= state.bank.size()) throw DataError("joint_step: batch dataset id out of range");
  FilmSet& film = state.bank.sets[d];
  Tensor& head = state.heads.weights[d];

  state.phi.set_requires_grad(true);
  film.set_requires_grad(true);
  head.set_requires_grad(true);
  state.heads.temperature.set_requires_grad(true);

  const auto saved_stats = film.stats;
  auto release = [&] {
    state.phi.set_requires_grad(false);
    film.set_requires_grad(false);
    head.set_requires_grad(false);
    state.heads.temperature.set_requires_grad(false);
  };
  Tape tape;
  Var logits, loss;
  StepResult r;
  try {
    const auto phi_vars = bind(tape, state.phi);
    const auto film_vars = bind(tape, film);
    Var feats = forward_features(tape.constant(batch.images), state.phi.arch, phi_vars, film_vars, film.stats,
                                 nn::NormOptions{nn::NormMode::BatchStats, 0, true});
    logits = nn::cosine_readout(feats, tape.param(head), tape.param(state.heads.temperature));
    loss = ops::softmax_cross_entropy(logits, ops::one_hot(batch.labels, head.dim(0)));
    r.loss = loss.value()[0];
    if (!std::isfinite(r.loss)) throw NumericError("joint training: non-finite loss at step " + std::to_string(step));
  } catch (...) {
    film.stats = saved_stats;
    release();
    throw;
  }
  r.accuracy = batch_accuracy(logits.value(), batch.labels);
  r.lr = optim::cosine_decay_restarts(step, config.schedule);
  tape.backward(loss);

  const auto phi_tensors = state.phi.tensors();
  for (std::size_t i = 0; i < phi_tensors.size(); ++i) {
    optim::sgd_momentum_step(*phi_tensors[i], state.phi_velocity[i], r.lr, config.momentum, config.wd_conv, 0.0);
  }
  const auto film_tensors = film.tensors();
  for (std::size_t i = 0; i < film_tensors.size(); ++i) {
    const double target = (i % 2 == 0) ? 1.0 : 0.0;
    optim::sgd_momentum_step(*film_tensors[i], state.film_velocity[d][i], r.lr, config.momentum, config.wd_film,
                             target);
  }
  optim::sgd_momentum_step(head, state.head_velocity[d], r.lr, config.momentum, 0.0, 0.0);
  optim::sgd_momentum_step(state.heads.temperature, state.temperature_velocity, r.lr, config.momentum, 0.0, 0.0);

  release();
  for (auto* t : phi_tensors) t->clear_grad();
  for (auto* t : film_tensors) t->clear_grad();
  head.clear_grad();
  state.heads.temperature.clear_grad();
  return r;
}

std::string metrics_csv_header() { return "step,domain,split,loss,accuracy,lr"; }

std::string metrics_csv_row(const MetricRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%s,%s,%.10g,%.10g,%.10g", r.step, r.domain.c_str(), r.split.c_str(), r.loss,
                r.accuracy, r.lr);
  return buf;
}

double train_split_accuracy(const JointState& state, const data::SplitCorpus& corpus, std::size_t dataset,
                            std::size_t batches, std::size_t batch_size, std::uint64_t seed) {
  const auto ids = corpus.training_domains();
  if (dataset >= ids.size() || dataset >= state.bank.size()) throw DataError("train_split_accuracy: bad dataset id");
  if (batches == 0) throw ConfigError("train_split_accuracy: batches must be positive");
  std::mt19937_64 rng(seed);
  double total = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    const auto batch = draw_batch(corpus.domains[ids[dataset]], dataset, batch_size, rng);
    Tape tape;
    Var feats = extract_features(tape, tape.constant(batch.images), state.phi, state.bank.sets[dataset],
                                 nn::NormOptions{nn::NormMode::BatchStats, 0, false});
    Var logits = nn::cosine_readout(feats, tape.param(state.heads.weights[dataset]),
                                    tape.param(state.heads.temperature));
    total += batch_accuracy(logits.value(), batch.labels);
  }
  return total / static_cast<double>(batches);
}

namespace {

double val_episode_accuracy(const JointState& state, const data::SplitCorpus& corpus, std::size_t dataset,
                            std::size_t episodes, std::uint64_t seed) {
  const auto ids = corpus.training_domains();
  data::EpisodeRequest req;
  req.domains = {ids[dataset]};
  req.split = data::Split::Val;
  eval::FinetuneConfig ft;
  ft.steps = 0;
  const eval::InitScheme own{eval::InitKind::Anchor, dataset};
  double total = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    const auto ep = data::sample_episode(corpus, req, data::mix_seed(seed, e));
    total += eval::solve_episode(ep.episode, state.phi, state.bank, nullptr, own, ft).query_accuracy;
  }
  return total / static_cast<double>(episodes);
}

}  // namespace

TrainResult train_template(const data::SplitCorpus& corpus, const JointTrainConfig& config, const MetricSink& sink) {
  TrainResult result{JointState::init(corpus, config), {}};
  auto& state = result.state;
  std::mt19937_64 rng(data::mix_seed(config.seed, 3));
  auto emit = [&](MetricRecord rec) {
    if (sink) sink(rec);
    result.metrics.push_back(std::move(rec));
  };

  auto evaluate = [&](std::size_t step) {
    const double lr = optim::cosine_decay_restarts(step, config.schedule);
    for (std::size_t m = 0; m < state.bank.size(); ++m) {
      const auto seed = data::mix_seed(config.seed, 1000 + m);
      emit({step, state.bank.names[m], "train", 0.0, train_split_accuracy(state, corpus, m, 4, config.batch_size, seed),
            lr});
      if (config.eval_episodes > 0) {
        emit({step, state.bank.names[m], "val", 0.0,
              val_episode_accuracy(state, corpus, m, config.eval_episodes, seed), lr});
      }
    }
  };

  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto batch = sample_training_batch(corpus, config, rng);
    const auto r = joint_step(state, batch, step, config);
    if (config.log_every > 0 && (step % config.log_every == 0 || step + 1 == config.steps)) {
      emit({step, state.bank.names[batch.dataset], "batch", r.loss, r.accuracy, r.lr});
    }
    if (config.eval_every > 0 && (step + 1) % config.eval_every == 0) evaluate(step + 1);
  }
  if (config.eval_every > 0 && config.steps % config.eval_every != 0) evaluate(config.steps);
  return result;
}

}  // namespace flute::train
