#include "flute/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

#include "flute/error.hpp"

namespace flute {

namespace {

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a finite number");
  }
  return out;
}

std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename Get>
Field size_field(std::string key, Get ref) {
  return {key, [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_uint(key, v); },
          [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Field real_field(std::string key, Get ref) {
  return {key, [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_real(key, v); },
          [ref](const RunConfig& c) { return real_text(ref(const_cast<RunConfig&>(c))); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(size_field("seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
    f.push_back(size_field("corpus.classes", [](RunConfig& c) -> std::size_t& { return c.corpus_classes; }));
    f.push_back(size_field("corpus.examples_per_class", [](RunConfig& c) -> std::size_t& { return c.corpus_examples; }));
    f.push_back(size_field("corpus.train_classes", [](RunConfig& c) -> std::size_t& { return c.corpus_train_classes; }));
    f.push_back(size_field("corpus.val_classes", [](RunConfig& c) -> std::size_t& { return c.corpus_val_classes; }));
    f.push_back(size_field("corpus.test_classes", [](RunConfig& c) -> std::size_t& { return c.corpus_test_classes; }));

    f.push_back(size_field("train.steps", [](RunConfig& c) -> std::size_t& { return c.train.steps; }));
    f.push_back(size_field("train.batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }));
    f.push_back(real_field("train.momentum", [](RunConfig& c) -> double& { return c.train.momentum; }));
    f.push_back(real_field("train.wd_conv", [](RunConfig& c) -> double& { return c.train.wd_conv; }));
    f.push_back(real_field("train.wd_film", [](RunConfig& c) -> double& { return c.train.wd_film; }));
    f.push_back({"train.anchor", [](RunConfig& c, const std::string& v) { c.train.anchor_domain = v; },
                 [](const RunConfig& c) { return c.train.anchor_domain; }});
    f.push_back(real_field("train.anchor_probability", [](RunConfig& c) -> double& { return c.train.anchor_probability; }));
    f.push_back(real_field("train.lr", [](RunConfig& c) -> double& { return c.train.schedule.initial_lr; }));
    f.push_back(size_field("train.first_decay_steps",
                           [](RunConfig& c) -> std::size_t& { return c.train.schedule.first_decay_steps; }));
    f.push_back(real_field("train.alpha", [](RunConfig& c) -> double& { return c.train.schedule.alpha; }));
    f.push_back(real_field("train.m_mul", [](RunConfig& c) -> double& { return c.train.schedule.m_mul; }));
    f.push_back(real_field("train.t_mul", [](RunConfig& c) -> double& { return c.train.schedule.t_mul; }));
    f.push_back(real_field("train.temperature", [](RunConfig& c) -> double& { return c.train.initial_temperature; }));
    f.push_back(size_field("train.log_every", [](RunConfig& c) -> std::size_t& { return c.train.log_every; }));
    f.push_back(size_field("train.eval_every", [](RunConfig& c) -> std::size_t& { return c.train.eval_every; }));
    f.push_back(size_field("train.eval_episodes", [](RunConfig& c) -> std::size_t& { return c.train.eval_episodes; }));

    f.push_back(size_field("dsclf.steps", [](RunConfig& c) -> std::size_t& { return c.dsclf.steps; }));
    f.push_back(size_field("dsclf.batch_size", [](RunConfig& c) -> std::size_t& { return c.dsclf.batch_size; }));
    f.push_back(real_field("dsclf.lr", [](RunConfig& c) -> double& { return c.dsclf.initial_lr; }));
    f.push_back(size_field("dsclf.decay_steps", [](RunConfig& c) -> std::size_t& { return c.dsclf.decay_steps; }));
    f.push_back(size_field("dsclf.width", [](RunConfig& c) -> std::size_t& { return c.dsclf.width; }));
    f.push_back(size_field("dsclf.depth", [](RunConfig& c) -> std::size_t& { return c.dsclf.depth; }));
    f.push_back(size_field("dsclf.eval_every", [](RunConfig& c) -> std::size_t& { return c.dsclf.eval_every; }));
    f.push_back(size_field("dsclf.val_batches_per_domain",
                           [](RunConfig& c) -> std::size_t& { return c.dsclf.val_batches_per_domain; }));

    f.push_back(size_field("eval.ways", [](RunConfig& c) -> std::size_t& { return c.ways; }));
    f.push_back(size_field("eval.shots", [](RunConfig& c) -> std::size_t& { return c.shots; }));
    f.push_back(size_field("eval.queries", [](RunConfig& c) -> std::size_t& { return c.queries; }));
    f.push_back(size_field("eval.episodes", [](RunConfig& c) -> std::size_t& { return c.episodes; }));
    f.push_back(size_field("eval.finetune_steps", [](RunConfig& c) -> std::size_t& { return c.finetune.steps; }));
    f.push_back(real_field("eval.finetune_lr", [](RunConfig& c) -> double& { return c.finetune.lr; }));
    f.push_back({"eval.optimizer",
                 [](RunConfig& c, const std::string& v) { c.finetune.optimizer = eval::parse_optimizer(v); },
                 [](const RunConfig& c) { return eval::to_string(c.finetune.optimizer); }});
    return f;
  }();
  return table;
}

}  // namespace

data::CorpusSpec RunConfig::corpus_spec() const {
  auto spec = data::CorpusSpec::desk_default(data::mix_seed(seed, 10));
  for (auto& d : spec.domains) {
    d.classes = corpus_classes;
    d.examples_per_class = corpus_examples;
    d.image_size = train.arch.image_size;
  }
  spec.train_classes = corpus_train_classes;
  spec.val_classes = corpus_val_classes;
  spec.test_classes = corpus_test_classes;
  return spec;
}

train::JointTrainConfig RunConfig::train_config() const {
  auto c = train;
  c.seed = data::mix_seed(seed, 20);
  return c;
}

dsclf::DsClfTrainConfig RunConfig::dsclf_config() const {
  auto c = dsclf;
  c.seed = data::mix_seed(seed, 30);
  return c;
}

void RunConfig::validate() const {
  const auto spec = corpus_spec();
  for (const auto& d : spec.domains) d.validate(shots, queries);
  spec.validate();
  const bool anchor_trains = std::any_of(spec.domains.begin(), spec.domains.end(), [&](const data::DomainSpec& d) {
    return d.name == train.anchor_domain && d.role == data::DomainRole::Train;
  });
  if (!anchor_trains) throw ConfigError("train.anchor '" + train.anchor_domain + "' is not a training domain");
  train_config().validate();
  dsclf_config().validate();
  finetune.validate();
  if (ways < 2) throw ConfigError("eval.ways must be at least 2");
  if (ways > corpus_val_classes || ways > corpus_test_classes) {
    throw ConfigError("eval.ways exceeds the classes available in the val/test splits");
  }
  if (shots == 0 || queries == 0) throw ConfigError("eval.shots and eval.queries must be positive");
  if (episodes < 2) throw ConfigError("eval.episodes must be at least 2");
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = "line " + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (value.empty()) throw ConfigError(where + key + ": missing value");
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->set(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  c.validate();
  return c;
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const auto key = trim(assignment.substr(0, eq));
  const auto value = trim(assignment.substr(eq + 1));
  const auto& table = fields();
  const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
  if (it == table.end()) throw ConfigError("unknown key '" + key + "'");
  if (value.empty()) throw ConfigError(key + ": missing value");
  it->set(config, value);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

std::uint64_t config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_text(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace flute
