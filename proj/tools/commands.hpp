#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flute/checkpoint.hpp"
#include "flute/config.hpp"
#include "flute/episodes.hpp"

namespace flute::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

/// FLUTE_LOG=quiet|info|debug (default info).
LogLevel log_level();
void log(LogLevel level, const std::string& message);

void gen_data(const RunConfig& config, const fs::path& out);

void train_template_cmd(const RunConfig& config, const fs::path& corpus_dir, const fs::path& out);
void train_dsclassifier_cmd(const RunConfig& config, const fs::path& corpus_dir, const fs::path& out);

struct EvalRequest {
  std::vector<std::string> domains;  // empty = every domain
  data::Split split = data::Split::Test;
  std::vector<std::string> schemes{"all"};
  std::size_t episodes = 0;  // 0 = config value
};

struct EpisodeRow {
  std::size_t episode_id = 0;
  std::string domain;
  std::string scheme;
  std::size_t steps = 0;
  std::vector<double> support_accuracy;
  double query_accuracy = 0.0;
  std::vector<double> blend_weights;
};

struct EvalReport {
  std::vector<EpisodeRow> rows;
  Json summary;
};

/// Runs `episodes` paired episodes per domain; every scheme sees the same
/// episodes.
EvalReport run_evaluation(const RunConfig& config, const data::SplitCorpus& corpus, const io::TemplateCheckpoint& tpl,
                          const std::optional<io::DsClfCheckpoint>& clf, const EvalRequest& request);

std::string episodes_csv(const EvalReport& report);
std::string blend_weights_csv(const EvalReport& report, std::size_t datasets);

void evaluate_cmd(const RunConfig& config, const fs::path& corpus_dir, const fs::path& template_path,
                  const std::optional<fs::path>& classifier_path, const EvalRequest& request, const fs::path& out);

/// Rank table across every (summary, scheme) pair on the domains all
/// summaries cover.
Json rank_summaries(const std::vector<Json>& summaries, const std::vector<std::string>& labels);

}  // namespace flute::cli
