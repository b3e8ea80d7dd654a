#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flute/dsclf.hpp"
#include "flute/episodes.hpp"
#include "flute/model.hpp"

namespace flute::eval {

enum class InitKind { Blender, HardBlender, Scratch, Anchor };

/// How psi_{d*} is initialized before fine-tuning.
struct InitScheme {
  InitKind kind = InitKind::Blender;
  std::size_t anchor_id = 0;

  std::string name() const;
  /// "blender", "hard_blender", "scratch", "anchor" or "anchor:<dataset>".
  static InitScheme parse(const std::string& text, const FilmBank& bank, std::size_t default_anchor = 0);
  /// The set named by `--scheme all`.
  static std::vector<InitScheme> all(std::size_t anchor_id);
};

enum class FinetuneOptimizer { Adam, PlainGD };

struct FinetuneConfig {
  std::size_t steps = 6;
  double lr = 0.005;
  FinetuneOptimizer optimizer = FinetuneOptimizer::Adam;
  /// Also evaluate query accuracy after every step (costs T extra passes).
  bool track_query = false;

  void validate() const;
};

std::string to_string(FinetuneOptimizer opt);
FinetuneOptimizer parse_optimizer(const std::string& s);

/// Feature-extractor passes performed while solving an episode.
struct PassCounter {
  std::size_t forward = 0;
  std::size_t backward = 0;
  std::size_t total() const { return forward + backward; }
};

/// c_j = mean of class-j support features. Throws DataError on an empty class.
Tensor ncc_centroids(const Tensor& features, std::span<const std::size_t> labels, std::size_t ways);

/// Row-wise softmax of the cosine similarity to each centroid.
Tensor ncc_probs(const Tensor& features, const Tensor& centroids);

/// Differentiable cosine-similarity logits [B,N].
Var ncc_logits(const Var& features, const Var& centroids);

/// Summed NCC cross entropy of `features` against centroids computed from
/// the same features; gradients reach both.
Var ncc_support_loss(const Var& features, std::span<const std::size_t> labels, std::size_t ways);

/// Argmax per row; ties go to the lowest class index.
std::vector<std::size_t> predict(const Tensor& scores);
double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels);

struct FinetuneResult {
  FilmSet film;
  std::vector<double> support_loss;      // steps 0..T
  std::vector<double> support_accuracy;  // steps 0..T
  bool diverged = false;
  std::size_t steps_taken = 0;
};

/// T optimizer steps on the support-set NCC loss, updating only the FiLM
/// parameters. Normalization uses support-batch statistics. On a non-finite
/// loss, stops and returns the last finite state with `diverged` set.
FinetuneResult finetune_film(const data::Episode& episode, const Template& phi, const FilmSet& init,
                             const FinetuneConfig& config, PassCounter* counter = nullptr);

struct EpisodeResult {
  double query_accuracy = 0.0;
  std::vector<double> support_accuracy;  // steps 0..T
  std::vector<double> support_loss;      // steps 0..T
  std::vector<double> query_trajectory;  // steps 0..T when tracked
  std::vector<double> blend_weights;     // Blender / HardBlender only
  std::vector<std::size_t> predictions;
  bool diverged = false;
  PassCounter passes;
};

/// Initial FiLM set for a scheme. Blender variants need a classifier.
FilmSet initialize_film(const InitScheme& scheme, const Tensor& support, const Template& phi, const FilmBank& bank,
                        const dsclf::DsClfParams* clf, std::vector<double>* weights_out = nullptr);

/// Initialize, fine-tune, then classify the queries with NCC under the final
/// FiLM set. The final pass runs support and query together, normalizing with
/// support statistics, so the solver costs exactly 2T+1 extractor passes.
EpisodeResult solve_episode(const data::Episode& episode, const Template& phi, const FilmBank& bank,
                            const dsclf::DsClfParams* clf, const InitScheme& scheme, const FinetuneConfig& config);

}  // namespace flute::eval
