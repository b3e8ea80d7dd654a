#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "flute/corpus_io.hpp"
#include "flute/error.hpp"
#include "flute/eval.hpp"
#include "flute/stats.hpp"

namespace flute::cli {

LogLevel log_level() {
  const char* env = std::getenv("FLUTE_LOG");
  if (!env) return LogLevel::Info;
  const std::string v = env;
  if (v == "quiet" || v == "0") return LogLevel::Quiet;
  if (v == "debug" || v == "2") return LogLevel::Debug;
  return LogLevel::Info;
}

void log(LogLevel level, const std::string& message) {
  if (level == LogLevel::Quiet || static_cast<int>(level) > static_cast<int>(log_level())) return;
  std::cerr << "[flute] " << message << '\n';
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::vector<std::string> training_names(const data::SplitCorpus& corpus) {
  std::vector<std::string> out;
  for (auto id : corpus.training_domains()) out.push_back(corpus.domains[id].spec.name);
  return out;
}

}  // namespace

void gen_data(const RunConfig& config, const fs::path& out) {
  const auto corpus = data::build_corpus(config.corpus_spec());
  ensure_dir(out);
  io::save_corpus(corpus, out);
  log(LogLevel::Info, "wrote " + std::to_string(corpus.domains.size()) + " domains to " + out.string());
}

void train_template_cmd(const RunConfig& config, const fs::path& corpus_dir, const fs::path& out) {
  const auto corpus = io::load_corpus(corpus_dir);
  const auto tc = config.train_config();
  ensure_dir(out);
  const auto metrics_path = out / "metrics.csv";
  auto tmp = metrics_path;
  tmp += ".tmp";
  std::ofstream metrics(tmp, std::ios::trunc);
  if (!metrics) throw IoError("cannot write " + tmp.string());
  metrics << train::metrics_csv_header() << '\n';
  const auto sink = [&](const train::MetricRecord& r) {
    metrics << train::metrics_csv_row(r) << '\n';
    metrics.flush();
    if (r.split == "batch") {
      log(LogLevel::Debug, "step " + std::to_string(r.step) + " " + r.domain + " loss " + fmt(r.loss));
    } else {
      log(LogLevel::Info, "step " + std::to_string(r.step) + " " + r.domain + " " + r.split + " acc " +
                              fmt(r.accuracy));
    }
  };
  auto result = train::train_template(corpus, tc, sink);
  metrics.close();
  fs::rename(tmp, metrics_path);

  io::TemplateCheckpoint ckpt;
  ckpt.phi = result.state.phi;
  ckpt.bank = result.state.bank;
  ckpt.step = tc.steps;
  ckpt.seed = config.seed;
  ckpt.config_hash = config_hash(config);
  io::save_template(out / "template.ckpt", ckpt);
  ckpt.heads = result.state.heads;
  io::save_template(out / "template_with_heads.ckpt", ckpt);
  log(LogLevel::Info, "template checkpoint written to " + (out / "template.ckpt").string());
}

void train_dsclassifier_cmd(const RunConfig& config, const fs::path& corpus_dir, const fs::path& out) {
  const auto corpus = io::load_corpus(corpus_dir);
  const auto dc = config.dsclf_config();
  ensure_dir(out);
  auto result = dsclf::train_dsclf(corpus, dc);
  std::string curve = "step,loss,accuracy\n";
  for (const auto& p : result.curve) curve += std::to_string(p.step) + "," + fmt(p.loss) + "," + fmt(p.accuracy) + "\n";
  io::write_text_atomic(out / "dsclf_val.csv", curve);
  io::DsClfCheckpoint ckpt{result.params, training_names(corpus), result.best_step, config.seed, config_hash(config)};
  io::save_dsclf(out / "dsclf.ckpt", ckpt);
  log(LogLevel::Info, "dataset classifier: best val accuracy " + fmt(result.best_accuracy) + " at step " +
                          std::to_string(result.best_step));
}

EvalReport run_evaluation(const RunConfig& config, const data::SplitCorpus& corpus, const io::TemplateCheckpoint& tpl,
                          const std::optional<io::DsClfCheckpoint>& clf, const EvalRequest& request) {
  tpl.bank.validate(tpl.phi.arch);
  if (corpus.image_size() != tpl.phi.arch.image_size) throw ConfigError("corpus image size does not match the template");
  if (clf && clf->dataset_names != tpl.bank.names) {
    throw ConfigError("classifier datasets do not match the template's FiLM bank");
  }
  const std::size_t anchor = tpl.bank.id_of(config.train.anchor_domain);

  std::vector<eval::InitScheme> schemes;
  for (const auto& s : request.schemes) {
    if (s == "all") {
      for (const auto& x : eval::InitScheme::all(anchor)) schemes.push_back(x);
    } else {
      schemes.push_back(eval::InitScheme::parse(s, tpl.bank, anchor));
    }
  }
  if (schemes.empty()) throw ConfigError("no init scheme requested");
  for (const auto& s : schemes) {
    if ((s.kind == eval::InitKind::Blender || s.kind == eval::InitKind::HardBlender) && !clf) {
      throw ConfigError("scheme " + s.name() + " needs --classifier");
    }
  }

  std::vector<std::size_t> domain_ids;
  if (request.domains.empty()) {
    for (std::size_t i = 0; i < corpus.domains.size(); ++i) {
      if (!corpus.domains[i].split.of(request.split).empty()) domain_ids.push_back(i);
    }
  } else {
    for (const auto& name : request.domains) domain_ids.push_back(corpus.index_of(name));
  }
  const std::size_t n = request.episodes > 0 ? request.episodes : config.episodes;
  if (n < 2) throw ConfigError("at least 2 episodes per domain are needed for a confidence interval");

  EvalReport report;
  Json domains = Json::array();
  for (auto id : domain_ids) {
    const auto& dom = corpus.domains[id];
    data::EpisodeRequest er{{id}, request.split, config.ways, config.shots, config.queries};
    std::vector<std::vector<double>> acc(schemes.size());
    for (std::size_t e = 0; e < n; ++e) {
      const auto seed = data::mix_seed(data::mix_seed(config.seed, 0xe9a1), data::mix_seed(id, e));
      const auto ep = data::sample_episode(corpus, er, seed);
      for (std::size_t s = 0; s < schemes.size(); ++s) {
        const auto r = eval::solve_episode(ep.episode, tpl.phi, tpl.bank, clf ? &clf->params : nullptr, schemes[s],
                                           config.finetune);
        acc[s].push_back(r.query_accuracy);
        report.rows.push_back({e, dom.spec.name, schemes[s].name(), config.finetune.steps, r.support_accuracy,
                               r.query_accuracy, r.blend_weights});
      }
    }
    Json entry{{"name", dom.spec.name}, {"role", data::to_string(dom.spec.role)}};
    Json per_scheme = Json::array();
    for (std::size_t s = 0; s < schemes.size(); ++s) {
      const auto ci = eval::confidence_interval(acc[s]);
      per_scheme.push_back({{"scheme", schemes[s].name()},
                            {"mean", ci.mean},
                            {"ci95", ci.halfwidth},
                            {"accuracies", acc[s]}});
      char line[128];
      std::snprintf(line, sizeof line, "%s %s: %.2f%% +- %.2f", dom.spec.name.c_str(), schemes[s].name().c_str(),
                    100 * ci.mean, 100 * ci.halfwidth);
      log(LogLevel::Info, line);
    }
    entry["schemes"] = per_scheme;
    if (schemes.size() >= 2) {
      const auto ranks = eval::compute_ranks(acc);
      Json table = Json::array();
      for (std::size_t s = 0; s < schemes.size(); ++s) {
        table.push_back({{"scheme", schemes[s].name()},
                         {"rank", ranks.ranks[s]},
                         {"tied_for_best", static_cast<bool>(ranks.tied_for_best[s])}});
      }
      entry["ranks"] = table;
    }
    domains.push_back(entry);
  }

  report.summary = Json{{"format", "flute-summary"},
                        {"version", 1},
                        {"seed", config.seed},
                        {"config_hash", config_hash(config)},
                        {"split", data::to_string(request.split)},
                        {"episodes_per_domain", n},
                        {"ways", config.ways},
                        {"shots", config.shots},
                        {"queries", config.queries},
                        {"finetune",
                         {{"steps", config.finetune.steps},
                          {"lr", config.finetune.lr},
                          {"optimizer", eval::to_string(config.finetune.optimizer)}}},
                        {"domains", domains}};
  return report;
}

std::string episodes_csv(const EvalReport& report) {
  std::size_t max_t = 0;
  for (const auto& r : report.rows) max_t = std::max(max_t, r.steps);
  std::string out = "episode_id,domain,scheme,T";
  for (std::size_t t = 0; t <= max_t; ++t) out += ",support_acc_" + std::to_string(t);
  out += ",query_acc\n";
  for (const auto& r : report.rows) {
    out += std::to_string(r.episode_id) + "," + r.domain + "," + r.scheme + "," + std::to_string(r.steps);
    for (std::size_t t = 0; t <= max_t; ++t) {
      out += ",";
      if (t < r.support_accuracy.size()) out += fmt(r.support_accuracy[t]);
    }
    out += "," + fmt(r.query_accuracy) + "\n";
  }
  return out;
}

std::string blend_weights_csv(const EvalReport& report, std::size_t datasets) {
  std::string out = "episode_id,domain";
  for (std::size_t m = 1; m <= datasets; ++m) out += ",w_" + std::to_string(m);
  out += "\n";
  std::set<std::pair<std::string, std::size_t>> seen;
  for (const auto& r : report.rows) {
    if (r.blend_weights.empty() || !seen.insert({r.domain, r.episode_id}).second) continue;
    out += std::to_string(r.episode_id) + "," + r.domain;
    for (double w : r.blend_weights) out += "," + fmt(w);
    out += "\n";
  }
  return out;
}

void evaluate_cmd(const RunConfig& config, const fs::path& corpus_dir, const fs::path& template_path,
                  const std::optional<fs::path>& classifier_path, const EvalRequest& request, const fs::path& out) {
  const auto corpus = io::load_corpus(corpus_dir);
  const auto tpl = io::load_template(template_path, &config.train.arch);
  std::optional<io::DsClfCheckpoint> clf;
  if (classifier_path) clf = io::load_dsclf(*classifier_path);
  const auto report = run_evaluation(config, corpus, tpl, clf, request);
  ensure_dir(out);
  io::write_text_atomic(out / "episodes.csv", episodes_csv(report));
  io::write_text_atomic(out / "blend_weights.csv", blend_weights_csv(report, tpl.bank.size()));
  io::write_text_atomic(out / "summary.json", report.summary.dump(2) + "\n");
  log(LogLevel::Info, "wrote " + std::to_string(report.rows.size()) + " episode rows to " + out.string());
}

Json rank_summaries(const std::vector<Json>& summaries, const std::vector<std::string>& labels) {
  if (summaries.size() < 2) throw DataError("ranks: need at least 2 summaries");
  if (labels.size() != summaries.size()) throw DataError("ranks: one label per summary required");
  auto domain_names = [](const Json& s) {
    std::vector<std::string> names;
    try {
      for (const auto& d : s.at("domains")) names.push_back(d.at("name").get<std::string>());
    } catch (const Json::exception&) {
      throw DataError("ranks: malformed summary");
    }
    return names;
  };
  std::vector<std::vector<std::string>> names;
  for (const auto& s : summaries) names.push_back(domain_names(s));
  std::vector<std::string> domains;
  for (const auto& d : names.front()) {
    const bool shared = std::all_of(names.begin(), names.end(),
                                    [&](const auto& n) { return std::find(n.begin(), n.end(), d) != n.end(); });
    if (shared) domains.push_back(d);
  }
  if (domains.empty()) throw DataError("ranks: the summaries share no domain");
  Json out = Json::array();
  for (const auto& domain : domains) {
    std::vector<std::string> methods;
    std::vector<std::vector<double>> samples;
    for (std::size_t k = 0; k < summaries.size(); ++k) {
      const auto pos = std::find(names[k].begin(), names[k].end(), domain) - names[k].begin();
      for (const auto& sc : summaries[k]["domains"][pos]["schemes"]) {
        methods.push_back(labels[k] + ":" + sc.at("scheme").get<std::string>());
        samples.push_back(sc.at("accuracies").get<std::vector<double>>());
      }
    }
    const auto ranks = eval::compute_ranks(samples);
    Json rows = Json::array();
    for (std::size_t i = 0; i < methods.size(); ++i) {
      double mean = 0.0;
      for (double a : samples[i]) mean += a;
      mean /= static_cast<double>(samples[i].size());
      rows.push_back({{"method", methods[i]},
                      {"mean", mean},
                      {"rank", ranks.ranks[i]},
                      {"tied_for_best", static_cast<bool>(ranks.tied_for_best[i])}});
    }
    out.push_back({{"domain", domain}, {"methods", rows}});
  }
  return out;
}

}  // namespace flute::cli
