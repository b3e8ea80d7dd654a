#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "flute/dsclf.hpp"
#include "flute/episodes.hpp"
#include "flute/eval.hpp"
#include "flute/train_joint.hpp"

namespace flute {

/// Everything a full run needs. Defaults are the desk-scale settings.
struct RunConfig {
  std::uint64_t seed = 0;

  std::size_t corpus_classes = 20;
  std::size_t corpus_examples = 40;
  std::size_t corpus_train_classes = 10;
  std::size_t corpus_val_classes = 5;
  std::size_t corpus_test_classes = 5;

  train::JointTrainConfig train;
  dsclf::DsClfTrainConfig dsclf;

  std::size_t ways = 5;
  std::size_t shots = 5;
  std::size_t queries = 10;
  std::size_t episodes = 100;
  eval::FinetuneConfig finetune;

  /// Seeds of the corpus and the trainers follow from `seed`.
  data::CorpusSpec corpus_spec() const;
  train::JointTrainConfig train_config() const;
  dsclf::DsClfTrainConfig dsclf_config() const;
  void validate() const;
};

/// Parses `key = value` lines; `#` starts a comment. Unknown keys, duplicate
/// keys and out-of-range values raise ConfigError naming the line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Applies one `key=value` assignment on top of `config` without
/// revalidating; call RunConfig::validate() afterwards.
void apply_override(RunConfig& config, const std::string& assignment);
/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& config);
/// FNV-1a of the canonical text.
std::uint64_t config_hash(const RunConfig& config);

}  // namespace flute
