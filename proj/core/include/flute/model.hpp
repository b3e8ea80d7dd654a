#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "flute/nn.hpp"
#include "flute/tensor.hpp"

namespace flute {

struct BlockSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;

  bool operator==(const BlockSpec&) const = default;
};

/// Architecture descriptor of the residual feature extractor.
struct ArchSpec {
  std::size_t in_channels = 1;
  std::size_t image_size = 32;
  std::size_t stem_width = 16;
  std::size_t stem_stride = 2;
  std::vector<BlockSpec> blocks{{16, 32, 2}, {32, 32, 1}};

  /// Default desk-scale network: stem + two residual blocks, D = 32.
  static ArchSpec restiny() { return ArchSpec{}; }

  std::size_t feature_dim() const;
  /// Channel count of every normalization site, in forward order.
  std::vector<std::size_t> norm_sites() const;
  void validate() const;

  bool operator==(const ArchSpec&) const = default;
};

/// Shared convolutional weights (the universal template).
struct Template {
  struct Block {
    Tensor conv1;
    Tensor conv2;
    std::optional<Tensor> projection;
  };

  ArchSpec arch;
  Tensor stem;
  std::vector<Block> blocks;

  /// He-uniform kernels from a seeded generator.
  static Template init(const ArchSpec& arch, std::uint64_t seed);

  std::size_t parameter_count() const;
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  void set_requires_grad(bool on);
  /// FNV-1a over the raw bytes of every kernel.
  std::uint64_t checksum() const;
};

/// One dataset's FiLM parameters and normalization state, one entry per site.
struct FilmSet {
  std::vector<nn::FilmLayerParams> layers;
  std::vector<nn::BatchNormState> stats;

  std::size_t parameter_count() const;
  bool matches(const ArchSpec& arch) const;
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  void set_requires_grad(bool on);
  /// Bitwise equality of FiLM values and running statistics.
  bool same_values(const FilmSet& other) const;
};

/// The M trained FiLM sets, indexed by dataset id.
struct FilmBank {
  std::vector<FilmSet> sets;
  std::vector<std::string> names;

  std::size_t size() const { return sets.size(); }
  const FilmSet& at(std::size_t id) const;
  FilmSet& at(std::size_t id);
  std::size_t id_of(const std::string& name) const;
  void validate(const ArchSpec& arch) const;
};

/// Per-dataset cosine-classifier weights and the shared temperature.
struct ReadoutHeads {
  std::vector<Tensor> weights;  // [classes_m, D]
  Tensor temperature;           // scalar

  static ReadoutHeads init(const std::vector<std::size_t>& class_counts, std::size_t feature_dim,
                           double temperature, std::mt19937_64& rng);
};

struct TemplateVars {
  struct Block {
    nn::ResidualKernels kernels;
    std::size_t stride = 1;
  };
  Var stem;
  std::vector<Block> blocks;
};

TemplateVars bind(Tape& tape, Template& phi);
TemplateVars bind(Tape& tape, const Template& phi);
std::vector<nn::FilmVars> bind(Tape& tape, FilmSet& psi);
std::vector<nn::FilmVars> bind(Tape& tape, const FilmSet& psi);

/// f(x; phi, psi) on pre-bound parameters. `stats` is updated in place when
/// the options ask for running-statistics updates.
Var forward_features(const Var& x, const ArchSpec& arch, const TemplateVars& phi, const std::vector<nn::FilmVars>& psi,
                     std::vector<nn::BatchNormState>& stats, const nn::NormOptions& opt);

/// f(x; phi, psi) with both parameter groups frozen. Running statistics are
/// never modified.
Var extract_features(Tape& tape, const Var& x, const Template& phi, const FilmSet& psi, const nn::NormOptions& opt);
Tensor extract_features(const Tensor& x, const Template& phi, const FilmSet& psi, const nn::NormOptions& opt);

/// gamma = 1, beta = 0, running mean 0 / variance 1 at every site.
FilmSet scratch_init(const ArchSpec& arch);
FilmSet scratch_init(const Template& phi);

/// Deep copy of one bank entry.
FilmSet anchor_init(const FilmBank& bank, std::size_t anchor_id);

}  // namespace flute
