#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "flute/episodes.hpp"
#include "flute/model.hpp"
#include "flute/optim.hpp"

namespace flute::train {

struct JointTrainConfig {
  ArchSpec arch = ArchSpec::restiny();
  std::size_t steps = 4000;
  std::size_t batch_size = 32;
  double momentum = 0.9;
  double wd_conv = 7e-4;
  double wd_film = 1e-3;
  std::string anchor_domain = "glyphs";
  double anchor_probability = 0.5;
  optim::Schedule schedule{0.01, 1000, 0.0, 1.0, 2.0};
  double initial_temperature = 10.0;
  std::uint64_t seed = 0;
  /// Metrics cadence: batch loss every `log_every` steps, per-domain
  /// evaluation every `eval_every` steps and after the last step (0 = never).
  std::size_t log_every = 50;
  std::size_t eval_every = 1000;
  std::size_t eval_episodes = 20;

  void validate() const;
};

/// A homogeneous batch: every example comes from training dataset `dataset`
/// (position in SplitCorpus::training_domains()).
struct TrainingBatch {
  std::size_t dataset = 0;
  Tensor images;                    // [B,1,H,W]
  std::vector<std::size_t> labels;  // index into the domain's train classes
};

/// With probability anchor_probability the batch comes from the anchor
/// domain, otherwise from a uniformly chosen non-anchor training domain.
TrainingBatch sample_training_batch(const data::SplitCorpus& corpus, const JointTrainConfig& config,
                                    std::mt19937_64& rng);

/// Template, FiLM bank, readout heads and their momentum buffers.
struct JointState {
  Template phi;
  FilmBank bank;
  ReadoutHeads heads;
  std::vector<std::vector<double>> phi_velocity;
  std::vector<std::vector<std::vector<double>>> film_velocity;  // [dataset][tensor]
  std::vector<std::vector<double>> head_velocity;               // [dataset]
  std::vector<double> temperature_velocity;

  static JointState init(const data::SplitCorpus& corpus, const JointTrainConfig& config);
};

struct StepResult {
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
};

/// One SGD-momentum update routed through the batch's FiLM set and readout
/// head. Only phi, psi_d, omega_d and the temperature move; weight decay is
/// decoupled from the gradient (phi toward 0, gamma toward 1, beta toward 0).
/// On a non-finite loss the state is left untouched and NumericError thrown.
StepResult joint_step(JointState& state, const TrainingBatch& batch, std::size_t step, const JointTrainConfig& config);

struct MetricRecord {
  std::size_t step = 0;
  std::string domain;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricRecord& r);

/// Classification accuracy of readout head `dataset` on `batches` random
/// train-split batches (batch statistics).
double train_split_accuracy(const JointState& state, const data::SplitCorpus& corpus, std::size_t dataset,
                            std::size_t batches, std::size_t batch_size, std::uint64_t seed);

struct TrainResult {
  JointState state;
  std::vector<MetricRecord> metrics;
};

using MetricSink = std::function<void(const MetricRecord&)>;

/// Runs `config.steps` joint steps from a seeded initialization.
TrainResult train_template(const data::SplitCorpus& corpus, const JointTrainConfig& config,
                           const MetricSink& sink = {});

}  // namespace flute::train
