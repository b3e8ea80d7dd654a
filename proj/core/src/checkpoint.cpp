#include "flute/checkpoint.hpp"

#include <json.hpp>
#include <map>

#include "binary_io.hpp"
#include "flute/error.hpp"

namespace flute::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'F', 'L', 'U', 'T', 'E', 'C', 'K', 'P'};
constexpr std::uint32_t kMaxRank = 8;

using Records = std::map<std::string, Tensor>;

json arch_json(const ArchSpec& a) {
  json blocks = json::array();
  for (const auto& b : a.blocks) blocks.push_back({b.in_channels, b.out_channels, b.stride});
  return json{{"in_channels", a.in_channels},
              {"image_size", a.image_size},
              {"stem_width", a.stem_width},
              {"stem_stride", a.stem_stride},
              {"blocks", blocks}};
}

ArchSpec arch_from_json(const json& j, const std::string& where) {
  try {
    ArchSpec a;
    a.in_channels = j.at("in_channels").get<std::size_t>();
    a.image_size = j.at("image_size").get<std::size_t>();
    a.stem_width = j.at("stem_width").get<std::size_t>();
    a.stem_stride = j.at("stem_stride").get<std::size_t>();
    a.blocks.clear();
    for (const auto& b : j.at("blocks")) {
      a.blocks.push_back({b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>(), b.at(2).get<std::size_t>()});
    }
    a.validate();
    return a;
  } catch (const json::exception&) {
    throw IoError(where + ": malformed architecture descriptor");
  } catch (const ConfigError& e) {
    throw IoError(where + ": invalid architecture (" + e.what() + ")");
  }
}

void write_checkpoint(const fs::path& path, const json& meta, const Records& records) {
  detail::ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(meta.dump());
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, t] : records) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    w.f64s(t.values());
  }
  detail::write_file_atomic(path, w.bytes().data(), w.bytes().size());
}

struct Loaded {
  json meta;
  Records records;
};

Loaded read_checkpoint(const fs::path& path, const std::string& kind) {
  detail::ByteReader r(detail::read_file(path), path.string());
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw IoError(path.string() + ": not a checkpoint file");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Loaded out;
  try {
    out.meta = json::parse(r.str(1 << 24));
  } catch (const json::exception&) {
    throw IoError(path.string() + ": corrupt metadata");
  }
  if (!out.meta.is_object() || out.meta.value("kind", "") != kind) {
    throw IoError(path.string() + ": expected a " + kind + " checkpoint");
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str(4096);
    const auto rank = r.u32();
    if (rank > kMaxRank) throw IoError(path.string() + ": tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = r.u64();
      if (d > (std::size_t{1} << 32) || numel * d > (std::size_t{1} << 32)) {
        throw IoError(path.string() + ": tensor '" + name + "' is implausibly large");
      }
      numel *= d;
    }
    std::vector<double> values;
    r.f64s(values, numel);
    if (!out.records.emplace(name, Tensor(std::move(shape), std::move(values))).second) {
      throw IoError(path.string() + ": duplicate tensor '" + name + "'");
    }
  }
  if (!r.at_end()) throw IoError(path.string() + ": trailing bytes after the last record");
  return out;
}

class Unpacker {
 public:
  Unpacker(Records records, std::string where) : records_(std::move(records)), where_(std::move(where)) {}

  Tensor take(const std::string& name, const Shape& shape) {
    auto it = records_.find(name);
    if (it == records_.end()) throw IoError(where_ + ": missing tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw ShapeError(where_ + ": tensor '" + name + "' has shape " + shape_string(it->second.shape()) +
                       ", expected " + shape_string(shape));
    }
    Tensor t = std::move(it->second);
    records_.erase(it);
    if (!t.all_finite()) throw IoError(where_ + ": tensor '" + name + "' holds non-finite values");
    return t;
  }
  /// Rank-2 tensor with a fixed column count and any positive row count.
  Tensor take_rows(const std::string& name, std::size_t cols) {
    auto it = records_.find(name);
    if (it == records_.end()) throw IoError(where_ + ": missing tensor '" + name + "'");
    const auto& s = it->second.shape();
    if (s.size() != 2 || s[0] == 0 || s[1] != cols) {
      throw ShapeError(where_ + ": tensor '" + name + "' has shape " + shape_string(s));
    }
    return take(name, s);
  }
  std::vector<double> take_vector(const std::string& name, std::size_t n) { return take(name, {n}).values(); }
  void fill(const std::string& name, Tensor& target) { target = take(name, target.shape()); }
  void finish() const {
    if (!records_.empty()) throw IoError(where_ + ": unexpected tensor '" + records_.begin()->first + "'");
  }

 private:
  Records records_;
  std::string where_;
};

void put_film(Records& rec, const std::string& prefix, const FilmSet& s) {
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto site = prefix + "/site" + std::to_string(i);
    rec[site + "/gamma"] = s.layers[i].gamma;
    rec[site + "/beta"] = s.layers[i].beta;
    rec[site + "/running_mean"] = Tensor::vector(s.stats[i].running_mean);
    rec[site + "/running_var"] = Tensor::vector(s.stats[i].running_var);
  }
}

void take_film(Unpacker& u, const std::string& prefix, FilmSet& s) {
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto site = prefix + "/site" + std::to_string(i);
    const auto c = s.layers[i].channels();
    u.fill(site + "/gamma", s.layers[i].gamma);
    u.fill(site + "/beta", s.layers[i].beta);
    s.stats[i].running_mean = u.take_vector(site + "/running_mean", c);
    s.stats[i].running_var = u.take_vector(site + "/running_var", c);
  }
}

std::vector<std::string> names_of(const json& meta, const std::string& where) {
  try {
    auto names = meta.at("datasets").get<std::vector<std::string>>();
    if (names.empty()) throw IoError(where + ": checkpoint lists no datasets");
    return names;
  } catch (const json::exception&) {
    throw IoError(where + ": malformed dataset list");
  }
}

void read_common(const json& meta, std::uint64_t& step, std::uint64_t& seed, std::uint64_t& hash,
                 const std::string& where) {
  try {
    step = meta.at("step").get<std::uint64_t>();
    seed = meta.at("seed").get<std::uint64_t>();
    hash = meta.at("config_hash").get<std::uint64_t>();
  } catch (const json::exception&) {
    throw IoError(where + ": malformed metadata");
  }
}

}  // namespace

void save_template(const fs::path& path, const TemplateCheckpoint& ckpt) {
  ckpt.bank.validate(ckpt.phi.arch);
  Records rec;
  rec["phi/stem"] = ckpt.phi.stem;
  for (std::size_t i = 0; i < ckpt.phi.blocks.size(); ++i) {
    const auto& b = ckpt.phi.blocks[i];
    const auto p = "phi/block" + std::to_string(i);
    rec[p + "/conv1"] = b.conv1;
    rec[p + "/conv2"] = b.conv2;
    if (b.projection) rec[p + "/projection"] = *b.projection;
  }
  for (std::size_t m = 0; m < ckpt.bank.size(); ++m) put_film(rec, "psi/" + ckpt.bank.names[m], ckpt.bank.sets[m]);
  if (ckpt.heads) {
    if (ckpt.heads->weights.size() != ckpt.bank.size()) throw ShapeError("save_template: head/bank size mismatch");
    for (std::size_t m = 0; m < ckpt.bank.size(); ++m) rec["omega/" + ckpt.bank.names[m] + "/weight"] = ckpt.heads->weights[m];
    rec["omega/temperature"] = ckpt.heads->temperature;
  }
  json meta{{"kind", "template"},
            {"arch", arch_json(ckpt.phi.arch)},
            {"datasets", ckpt.bank.names},
            {"has_heads", ckpt.heads.has_value()},
            {"step", ckpt.step},
            {"seed", ckpt.seed},
            {"config_hash", ckpt.config_hash}};
  write_checkpoint(path, meta, rec);
}

TemplateCheckpoint load_template(const fs::path& path, const ArchSpec* expected) {
  const std::string where = path.string();
  auto loaded = read_checkpoint(path, "template");
  if (!loaded.meta.contains("arch")) throw IoError(where + ": missing architecture descriptor");
  const ArchSpec arch = arch_from_json(loaded.meta["arch"], where);
  if (expected && !(*expected == arch)) throw ShapeError(where + ": checkpoint architecture does not match");
  TemplateCheckpoint ckpt;
  read_common(loaded.meta, ckpt.step, ckpt.seed, ckpt.config_hash, where);
  const auto names = names_of(loaded.meta, where);
  const bool has_heads = loaded.meta.value("has_heads", false);

  Unpacker u(std::move(loaded.records), where);
  ckpt.phi = Template::init(arch, 0);
  u.fill("phi/stem", ckpt.phi.stem);
  for (std::size_t i = 0; i < ckpt.phi.blocks.size(); ++i) {
    auto& b = ckpt.phi.blocks[i];
    const auto p = "phi/block" + std::to_string(i);
    u.fill(p + "/conv1", b.conv1);
    u.fill(p + "/conv2", b.conv2);
    if (b.projection) u.fill(p + "/projection", *b.projection);
  }
  for (const auto& name : names) {
    FilmSet s = scratch_init(arch);
    take_film(u, "psi/" + name, s);
    ckpt.bank.sets.push_back(std::move(s));
    ckpt.bank.names.push_back(name);
  }
  if (has_heads) {
    ReadoutHeads heads;
    for (const auto& name : names) {
      heads.weights.push_back(u.take_rows("omega/" + name + "/weight", arch.feature_dim()));
    }
    heads.temperature = u.take("omega/temperature", {1});
    ckpt.heads = std::move(heads);
  }
  u.finish();
  return ckpt;
}

void save_dsclf(const fs::path& path, const DsClfCheckpoint& ckpt) {
  ckpt.params.validate();
  if (ckpt.dataset_names.size() != ckpt.params.datasets()) {
    throw ShapeError("save_dsclf: " + std::to_string(ckpt.dataset_names.size()) + " names for " +
                     std::to_string(ckpt.params.datasets()) + " outputs");
  }
  const auto& enc = ckpt.params.encoder;
  Records rec;
  for (std::size_t i = 0; i < enc.depth(); ++i) {
    const auto p = "dsclf/encoder" + std::to_string(i);
    rec[p + "/kernel"] = enc.kernels[i];
    rec[p + "/gamma"] = enc.norms[i].gamma;
    rec[p + "/beta"] = enc.norms[i].beta;
    rec[p + "/running_mean"] = Tensor::vector(enc.stats[i].running_mean);
    rec[p + "/running_var"] = Tensor::vector(enc.stats[i].running_var);
  }
  rec["dsclf/head/weight"] = ckpt.params.head_weight;
  rec["dsclf/head/bias"] = ckpt.params.head_bias;
  json meta{{"kind", "dsclf"},
            {"in_channels", enc.kernels.front().dim(1)},
            {"width", enc.width()},
            {"depth", enc.depth()},
            {"datasets", ckpt.dataset_names},
            {"step", ckpt.step},
            {"seed", ckpt.seed},
            {"config_hash", ckpt.config_hash}};
  write_checkpoint(path, meta, rec);
}

DsClfCheckpoint load_dsclf(const fs::path& path) {
  const std::string where = path.string();
  auto loaded = read_checkpoint(path, "dsclf");
  DsClfCheckpoint ckpt;
  read_common(loaded.meta, ckpt.step, ckpt.seed, ckpt.config_hash, where);
  ckpt.dataset_names = names_of(loaded.meta, where);
  std::size_t in_ch = 0, width = 0, depth = 0;
  try {
    in_ch = loaded.meta.at("in_channels").get<std::size_t>();
    width = loaded.meta.at("width").get<std::size_t>();
    depth = loaded.meta.at("depth").get<std::size_t>();
  } catch (const json::exception&) {
    throw IoError(where + ": malformed encoder descriptor");
  }
  if (in_ch == 0 || width == 0 || depth == 0 || depth > 16 || width > 4096) {
    throw IoError(where + ": invalid encoder descriptor");
  }
  ckpt.params = dsclf::DsClfParams::init(ckpt.dataset_names.size(), in_ch, width, depth, 0);
  auto& enc = ckpt.params.encoder;
  Unpacker u(std::move(loaded.records), where);
  for (std::size_t i = 0; i < depth; ++i) {
    const auto p = "dsclf/encoder" + std::to_string(i);
    u.fill(p + "/kernel", enc.kernels[i]);
    u.fill(p + "/gamma", enc.norms[i].gamma);
    u.fill(p + "/beta", enc.norms[i].beta);
    enc.stats[i].running_mean = u.take_vector(p + "/running_mean", width);
    enc.stats[i].running_var = u.take_vector(p + "/running_var", width);
  }
  u.fill("dsclf/head/weight", ckpt.params.head_weight);
  u.fill("dsclf/head/bias", ckpt.params.head_bias);
  u.finish();
  return ckpt;
}

}  // namespace flute::io
