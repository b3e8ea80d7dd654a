#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "commands.hpp"
#include "flute/corpus_io.hpp"
#include "flute/error.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void require_dir(const std::string& what, const std::string& path) {
  if (path.empty()) throw UsageError(what + " is required");
  if (!std::filesystem::is_directory(path)) throw UsageError(what + " '" + path + "' is not a directory");
}

void require_file(const std::string& what, const std::string& path) {
  if (path.empty()) throw UsageError(what + " is required");
  if (!std::filesystem::is_regular_file(path)) throw UsageError(what + " '" + path + "' does not exist");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace flute;
  CLI::App app{"Few-shot learning with a FiLM-modulated universal template"};
  app.require_subcommand(1);

  std::string config_path, out, corpus, template_path, classifier_path, split = "test", schemes = "all", domains;
  std::vector<std::string> overrides, summaries, labels;
  std::uint64_t seed = 0;
  std::size_t episodes = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value configuration file");
    cmd->add_option("--set", overrides, "override one configuration key (key=value)");
    cmd->add_option("--seed", seed, "master seed (overrides the config)");
  };

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  add_common(gen);
  gen->add_option("--out", out, "output corpus directory")->required();

  auto* tt = app.add_subcommand("train-template", "joint training of the template, FiLM bank and heads");
  add_common(tt);
  tt->add_option("--corpus", corpus, "corpus directory")->required();
  tt->add_option("--out", out, "output directory")->required();

  auto* td = app.add_subcommand("train-dsclassifier", "train the dataset classifier");
  add_common(td);
  td->add_option("--corpus", corpus, "corpus directory")->required();
  td->add_option("--out", out, "output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "solve few-shot episodes under one or more init schemes");
  add_common(ev);
  ev->add_option("--corpus", corpus, "corpus directory")->required();
  ev->add_option("--template", template_path, "template checkpoint")->required();
  ev->add_option("--classifier", classifier_path, "dataset classifier checkpoint");
  ev->add_option("--scheme", schemes, "comma list of blender, hard_blender, scratch, anchor[:name] or all");
  ev->add_option("--episodes", episodes, "episodes per domain (default from config)");
  ev->add_option("--domains", domains, "comma list of domain names (default: all with the split)");
  ev->add_option("--split", split, "train, val or test");
  ev->add_option("--out", out, "output directory")->required();

  auto* rk = app.add_subcommand("ranks", "rank methods across summary files");
  rk->add_option("summaries", summaries, "summary.json files")->required()->expected(2, -1);
  rk->add_option("--labels", labels, "comma list, one label per summary (default: file names)")->delimiter(',');
  rk->add_option("--out", out, "write the rank table as JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    auto config = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const auto& o : overrides) apply_override(config, o);
    for (auto* cmd : {gen, tt, td, ev}) {
      if (cmd->parsed() && cmd->count("--seed") > 0) config.seed = seed;
    }
    config.validate();

    if (gen->parsed()) {
      cli::gen_data(config, out);
    } else if (tt->parsed()) {
      require_dir("--corpus", corpus);
      cli::train_template_cmd(config, corpus, out);
    } else if (td->parsed()) {
      require_dir("--corpus", corpus);
      cli::train_dsclassifier_cmd(config, corpus, out);
    } else if (ev->parsed()) {
      require_dir("--corpus", corpus);
      require_file("--template", template_path);
      if (!classifier_path.empty()) require_file("--classifier", classifier_path);
      cli::EvalRequest req;
      req.domains = split_list(domains);
      try {
        req.split = data::parse_split(split);
      } catch (const flute::Error& e) {
        throw UsageError(e.what());
      }
      req.schemes = split_list(schemes);
      req.episodes = episodes;
      std::optional<std::filesystem::path> clf;
      if (!classifier_path.empty()) clf = classifier_path;
      cli::evaluate_cmd(config, corpus, template_path, clf, req, out);
    } else if (rk->parsed()) {
      std::vector<cli::Json> docs;
      for (const auto& path : summaries) {
        require_file("summary", path);
        std::ifstream in(path);
        try {
          docs.push_back(cli::Json::parse(in));
        } catch (const cli::Json::exception&) {
          throw IoError(path + ": not valid JSON");
        }
      }
      if (labels.empty()) {
        for (const auto& path : summaries) labels.push_back(path);
      }
      if (labels.size() != summaries.size()) throw UsageError("--labels needs one label per summary");
      const auto table = cli::rank_summaries(docs, labels);
      const auto text = table.dump(2) + "\n";
      if (out.empty()) {
        std::cout << text;
      } else {
        io::write_text_atomic(out, text);
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "flute: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "flute: configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "flute: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
