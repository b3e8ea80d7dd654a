#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <vector>

#include "flute/tensor.hpp"

namespace flute::nn {

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel FiLM scale and shift of one normalization site.
struct FilmLayerParams {
  Tensor gamma;  // [C]
  Tensor beta;   // [C]

  static FilmLayerParams identity(std::size_t channels);
  std::size_t channels() const { return gamma.numel(); }
};

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = kBatchNormMomentum;
  double eps = kBatchNormEps;

  static BatchNormState fresh(std::size_t channels);
  std::size_t channels() const { return running_mean.size(); }
};

enum class NormMode { BatchStats, RunningStats };

struct NormOptions {
  NormMode mode = NormMode::BatchStats;
  /// In BatchStats mode, statistics come from the first `stat_rows` examples
  /// of the batch (0 = all) and are applied to every example.
  std::size_t stat_rows = 0;
  /// In BatchStats mode, fold the batch moments into the running state.
  bool update_running = true;
};

/// gamma * (x - mean) / sqrt(var + eps) + beta over NCHW input.
///
/// BatchStats mode differentiates through the batch moments. Per-example
/// partial sums are combined in ascending order, so the moments do not depend
/// on example order. RunningStats mode treats the stored moments as constants.
Var film_batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, const NormOptions& opt);

/// Trainable Vars of one normalization site.
struct FilmVars {
  Var gamma;
  Var beta;
};

struct ResidualKernels {
  Var conv1;
  Var conv2;
  std::optional<Var> projection;  // 1x1, used when shape changes
};

/// conv -> FiLM-BN -> ReLU -> conv -> FiLM-BN, plus identity or 1x1 projected
/// skip, then ReLU.
Var residual_block(const Var& x, const ResidualKernels& kernels, std::size_t stride, const FilmVars& film1,
                   const FilmVars& film2, BatchNormState& state1, BatchNormState& state2, const NormOptions& opt);

/// temperature * cos(features[b], weights[k]).
Var cosine_readout(const Var& features, const Var& weights, const Var& temperature);

/// He-uniform initialization of a conv kernel [O,I,KH,KW].
Tensor he_uniform_kernel(std::size_t out_ch, std::size_t in_ch, std::size_t kh, std::size_t kw,
                         std::mt19937_64& rng);

/// Set encoder: `depth` blocks of 3x3 conv -> BN -> ReLU -> 2x2 max-pool,
/// global average pooling, then a mean over the examples of the set.
struct SetEncoderParams {
  std::vector<Tensor> kernels;  // [W, Cin, 3, 3]
  std::vector<FilmLayerParams> norms;
  std::vector<BatchNormState> stats;

  static SetEncoderParams init(std::size_t in_channels, std::size_t width, std::size_t depth, std::mt19937_64& rng);
  std::size_t depth() const { return kernels.size(); }
  std::size_t width() const { return kernels.empty() ? 0 : kernels.front().dim(0); }
  std::size_t minimum_input_size() const;
};

/// Encodes the batch [B,C,H,W] into one vector [E]. Normalization uses the
/// statistics of the whole set. Mutable params get gradients when their
/// tensors require grad.
Var set_encode(Tape& tape, const Var& batch, SetEncoderParams& params, bool update_running);
Var set_encode(Tape& tape, const Var& batch, const SetEncoderParams& params);

}  // namespace flute::nn
