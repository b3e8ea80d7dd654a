#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "flute/episodes.hpp"
#include "flute/model.hpp"
#include "flute/nn.hpp"
#include "flute/optim.hpp"

namespace flute::dsclf {

/// Dataset classifier: permutation-invariant set encoder followed by an
/// M-way linear head.
struct DsClfParams {
  nn::SetEncoderParams encoder;
  Tensor head_weight;  // [M,E]
  Tensor head_bias;    // [M]

  static DsClfParams init(std::size_t datasets, std::size_t in_channels, std::size_t width, std::size_t depth,
                          std::uint64_t seed);
  std::size_t datasets() const { return head_bias.numel(); }
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  void set_requires_grad(bool on);
  void validate() const;
};

/// l(g(B)) for a batch [B,C,H,W], as a [1,M] row.
Var dsclf_logits(Tape& tape, const Var& batch, DsClfParams& params, bool update_running);
/// Frozen evaluation; returns the M logits.
std::vector<double> dsclf_logits(const Tensor& batch, const DsClfParams& params);

std::vector<double> softmax(std::span<const double> logits);

/// Convex combination coefficients over the FiLM bank.
struct BlendWeights {
  std::vector<double> values;

  /// Throws NumericError unless coordinates are >= 0 and sum to 1 within 1e-12.
  void validate() const;
  std::size_t argmax() const;  // lowest index wins ties
};

struct DsClfTrainConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 16;
  double initial_lr = 0.003;
  std::size_t decay_steps = 3000;
  std::size_t width = 32;
  std::size_t depth = 3;
  std::size_t eval_every = 100;
  std::size_t val_batches_per_domain = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ValidationPoint {
  std::size_t step = 0;
  double accuracy = 0.0;
  double loss = 0.0;
};

struct DsClfTrainResult {
  DsClfParams params;  // best validation checkpoint
  std::vector<ValidationPoint> curve;
  std::size_t best_step = 0;
  std::size_t best_index = 0;  // into curve
  double best_accuracy = 0.0;
};

/// Dataset-classification accuracy over `batches_per_domain` random batches
/// drawn from `split` of every training domain.
double dsclf_accuracy(const DsClfParams& params, const data::SplitCorpus& corpus, data::Split split,
                      std::size_t batches_per_domain, std::size_t batch_size, std::uint64_t seed,
                      double* mean_loss = nullptr);

/// Adam on M-way cross entropy; each step draws a domain uniformly and a batch
/// from its train split. Keeps the checkpoint with the best validation
/// accuracy; ties go to the lower validation loss, then the earlier step.
DsClfTrainResult train_dsclf(const data::SplitCorpus& corpus, const DsClfTrainConfig& config);

/// sum_m w_m * psi_m over gamma, beta and the running statistics.
FilmSet blend_with_weights(const FilmBank& bank, std::span<const double> weights);

struct BlendResult {
  FilmSet film;
  BlendWeights weights;
};

/// softmax(l(g(support)))^T psi.
BlendResult blend(const Tensor& support, const DsClfParams& clf, const FilmBank& bank);

/// Copy of the bank entry the classifier ranks most likely.
FilmSet hard_blend(const Tensor& support, const DsClfParams& clf, const FilmBank& bank);

}  // namespace flute::dsclf
