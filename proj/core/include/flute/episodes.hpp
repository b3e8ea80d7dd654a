#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flute/tensor.hpp"

namespace flute::data {

enum class GeneratorKind { Glyphs, Textures, Blobs, Rings, Checkers };
enum class DomainRole { Train, HeldOut };
enum class Split { Train, Val, Test };

std::string to_string(GeneratorKind kind);
std::string to_string(DomainRole role);
std::string to_string(Split split);
GeneratorKind parse_generator(const std::string& s);
DomainRole parse_role(const std::string& s);
Split parse_split(const std::string& s);

inline constexpr double kPixelJitter = 0.05;

struct DomainSpec {
  std::string name;
  GeneratorKind kind = GeneratorKind::Glyphs;
  std::size_t classes = 20;
  std::size_t examples_per_class = 40;
  std::size_t image_size = 32;
  std::uint64_t seed = 0;
  DomainRole role = DomainRole::Train;

  /// Throws ConfigError unless the domain can serve episodes of up to
  /// `max_shots` + `max_queries` examples per class after splitting.
  void validate(std::size_t max_shots = 5, std::size_t max_queries = 10) const;
  bool operator==(const DomainSpec&) const = default;
};

/// Grayscale images stored class-major: [classes][examples][H][W].
struct LabeledImages {
  std::size_t classes = 0;
  std::size_t per_class = 0;
  std::size_t image_size = 0;
  std::vector<double> pixels;

  std::size_t image_numel() const { return image_size * image_size; }
  std::span<const double> image(std::size_t cls, std::size_t index) const;
  /// Flat example id inside the domain.
  std::size_t example_id(std::size_t cls, std::size_t index) const { return cls * per_class + index; }
};

/// Renders a domain. Each class has a distinct latent pattern; examples of a
/// class differ by position/contrast jitter and additive pixel noise.
LabeledImages generate_domain(const DomainSpec& spec);

/// Disjoint partition of a domain's classes.
struct ClassSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  const std::vector<std::size_t>& of(Split s) const;
};

struct Domain {
  DomainSpec spec;
  LabeledImages images;
  ClassSplit split;
};

struct CorpusSpec {
  std::vector<DomainSpec> domains;
  /// Class partition of training domains; held-out domains put every class
  /// into the test split.
  std::size_t train_classes = 10;
  std::size_t val_classes = 5;
  std::size_t test_classes = 5;
  std::uint64_t seed = 0;

  /// Glyphs/Textures/Blobs for training, Rings/Checkers held out.
  static CorpusSpec desk_default(std::uint64_t seed = 0);
  void validate() const;
};

struct SplitCorpus {
  std::uint64_t seed = 0;
  std::vector<Domain> domains;

  std::size_t image_size() const;
  /// Indices (into `domains`) of training domains; position = dataset id.
  std::vector<std::size_t> training_domains() const;
  std::vector<std::size_t> held_out_domains() const;
  std::size_t index_of(const std::string& name) const;
  void validate() const;
};

SplitCorpus build_corpus(const CorpusSpec& spec);

/// Stacks images into a [B,1,H,W] tensor. `picks` holds (class, index) pairs.
Tensor stack_images(const Domain& domain, std::span<const std::pair<std::size_t, std::size_t>> picks);

/// A k-shot N-way task. Labels are 0..N-1. Carries no source information.
struct Episode {
  std::size_t ways = 0;
  std::size_t shots = 0;
  std::size_t queries_per_class = 0;
  Tensor support;  // [N*k,1,H,W], class-major
  std::vector<std::size_t> support_labels;
  Tensor query;  // [N*q,1,H,W]
  std::vector<std::size_t> query_labels;
};

/// Bookkeeping kept away from the solver.
struct EpisodeSource {
  std::size_t domain = 0;
  Split split = Split::Test;
  std::vector<std::size_t> classes;  // global class id of episode label j
  std::vector<std::size_t> support_ids;
  std::vector<std::size_t> query_ids;
};

struct SampledEpisode {
  Episode episode;
  EpisodeSource source;
};

struct EpisodeRequest {
  /// Candidate domains; one is chosen uniformly per episode.
  std::vector<std::size_t> domains;
  Split split = Split::Test;
  std::size_t ways = 5;
  std::size_t shots = 5;
  std::size_t queries = 10;
};

SampledEpisode sample_episode(const SplitCorpus& corpus, const EpisodeRequest& request, std::uint64_t seed);

/// Checks the structural episode invariants; throws DataError on violation.
void check_episode(const SampledEpisode& e);

/// SplitMix64 finalizer, used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace flute::data
