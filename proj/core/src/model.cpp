#include "flute/model.hpp"

#include <cstring>

#include "flute/error.hpp"
#include "flute/ops.hpp"

namespace flute {

std::size_t ArchSpec::feature_dim() const { return blocks.empty() ? stem_width : blocks.back().out_channels; }

std::vector<std::size_t> ArchSpec::norm_sites() const {
  std::vector<std::size_t> sites{stem_width};
  for (const auto& b : blocks) {
    sites.push_back(b.out_channels);
    sites.push_back(b.out_channels);
  }
  return sites;
}

void ArchSpec::validate() const {
  if (in_channels == 0 || image_size == 0 || stem_width == 0 || stem_stride == 0) {
    throw ConfigError("architecture: channel counts, image size and stem stride must be positive");
  }
  std::size_t width = stem_width;
  std::size_t size = (image_size + 2 - 3) / stem_stride + 1;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    if (b.in_channels != width) {
      throw ConfigError("architecture: block " + std::to_string(i) + " expects " + std::to_string(b.in_channels) +
                        " input channels but receives " + std::to_string(width));
    }
    if (b.out_channels == 0 || b.stride == 0) throw ConfigError("architecture: invalid block " + std::to_string(i));
    size = (size + 2 - 3) / b.stride + 1;
    width = b.out_channels;
  }
  if (size == 0) throw ConfigError("architecture: spatial size collapses to zero");
}

Template Template::init(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  Template t;
  t.arch = arch;
  t.stem = nn::he_uniform_kernel(arch.stem_width, arch.in_channels, 3, 3, rng);
  for (const auto& b : arch.blocks) {
    Block blk;
    blk.conv1 = nn::he_uniform_kernel(b.out_channels, b.in_channels, 3, 3, rng);
    blk.conv2 = nn::he_uniform_kernel(b.out_channels, b.out_channels, 3, 3, rng);
    if (b.in_channels != b.out_channels || b.stride != 1) {
      blk.projection = nn::he_uniform_kernel(b.out_channels, b.in_channels, 1, 1, rng);
    }
    t.blocks.push_back(std::move(blk));
  }
  return t;
}

std::vector<Tensor*> Template::tensors() {
  std::vector<Tensor*> out{&stem};
  for (auto& b : blocks) {
    out.push_back(&b.conv1);
    out.push_back(&b.conv2);
    if (b.projection) out.push_back(&*b.projection);
  }
  return out;
}

std::vector<const Tensor*> Template::tensors() const {
  std::vector<const Tensor*> out{&stem};
  for (const auto& b : blocks) {
    out.push_back(&b.conv1);
    out.push_back(&b.conv2);
    if (b.projection) out.push_back(&*b.projection);
  }
  return out;
}

std::size_t Template::parameter_count() const {
  std::size_t n = 0;
  for (const auto* t : tensors()) n += t->numel();
  return n;
}

void Template::set_requires_grad(bool on) {
  for (auto* t : tensors()) t->set_requires_grad(on);
}

std::uint64_t Template::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* t : tensors()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t->data().data());
    for (std::size_t i = 0; i < t->numel() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::size_t FilmSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.gamma.numel() + l.beta.numel();
  return n;
}

bool FilmSet::matches(const ArchSpec& arch) const {
  const auto sites = arch.norm_sites();
  if (layers.size() != sites.size() || stats.size() != sites.size()) return false;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (layers[i].gamma.shape() != Shape{sites[i]} || layers[i].beta.shape() != Shape{sites[i]}) return false;
    if (stats[i].running_mean.size() != sites[i] || stats[i].running_var.size() != sites[i]) return false;
  }
  return true;
}

std::vector<Tensor*> FilmSet::tensors() {
  std::vector<Tensor*> out;
  for (auto& l : layers) {
    out.push_back(&l.gamma);
    out.push_back(&l.beta);
  }
  return out;
}

std::vector<const Tensor*> FilmSet::tensors() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers) {
    out.push_back(&l.gamma);
    out.push_back(&l.beta);
  }
  return out;
}

void FilmSet::set_requires_grad(bool on) {
  for (auto* t : tensors()) t->set_requires_grad(on);
}

bool FilmSet::same_values(const FilmSet& other) const {
  if (layers.size() != other.layers.size() || stats.size() != other.stats.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].gamma.same_values(other.layers[i].gamma) || !layers[i].beta.same_values(other.layers[i].beta)) {
      return false;
    }
  }
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const auto& a = stats[i];
    const auto& b = other.stats[i];
    if (a.running_mean.size() != b.running_mean.size() || a.running_var.size() != b.running_var.size()) return false;
    if (std::memcmp(a.running_mean.data(), b.running_mean.data(), a.running_mean.size() * sizeof(double)) != 0 ||
        std::memcmp(a.running_var.data(), b.running_var.data(), a.running_var.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

const FilmSet& FilmBank::at(std::size_t id) const {
  if (id >= sets.size()) throw DataError("FiLM bank has no dataset id " + std::to_string(id));
  return sets[id];
}

FilmSet& FilmBank::at(std::size_t id) {
  if (id >= sets.size()) throw DataError("FiLM bank has no dataset id " + std::to_string(id));
  return sets[id];
}

std::size_t FilmBank::id_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw DataError("FiLM bank has no dataset named '" + name + "'");
}

void FilmBank::validate(const ArchSpec& arch) const {
  if (sets.empty()) throw ShapeError("FiLM bank is empty");
  if (names.size() != sets.size()) throw ShapeError("FiLM bank names do not match its sets");
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (!sets[i].matches(arch)) throw ShapeError("FiLM set " + names[i] + " does not match the architecture");
  }
}

ReadoutHeads ReadoutHeads::init(const std::vector<std::size_t>& class_counts, std::size_t feature_dim,
                                double temperature, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  ReadoutHeads heads;
  for (auto classes : class_counts) {
    Tensor w({classes, feature_dim});
    for (auto& v : w.values()) v = dist(rng);
    heads.weights.push_back(std::move(w));
  }
  heads.temperature = Tensor::scalar(temperature);
  return heads;
}

namespace {

template <typename T>
TemplateVars bind_template(Tape& tape, T& phi) {
  TemplateVars v;
  v.stem = tape.param(phi.stem);
  for (std::size_t i = 0; i < phi.blocks.size(); ++i) {
    auto& b = phi.blocks[i];
    TemplateVars::Block blk;
    blk.kernels.conv1 = tape.param(b.conv1);
    blk.kernels.conv2 = tape.param(b.conv2);
    if (b.projection) blk.kernels.projection = tape.param(*b.projection);
    blk.stride = phi.arch.blocks.at(i).stride;
    v.blocks.push_back(std::move(blk));
  }
  return v;
}

template <typename F>
std::vector<nn::FilmVars> bind_film(Tape& tape, F& psi) {
  std::vector<nn::FilmVars> v;
  for (auto& l : psi.layers) v.push_back({tape.param(l.gamma), tape.param(l.beta)});
  return v;
}

void check_structure(const Template& phi, const FilmSet& psi) {
  if (phi.blocks.size() != phi.arch.blocks.size()) throw ShapeError("template does not match its architecture");
  if (!psi.matches(phi.arch)) throw ShapeError("FiLM set does not match the template's normalization sites");
}

}  // namespace

TemplateVars bind(Tape& tape, Template& phi) { return bind_template(tape, phi); }
TemplateVars bind(Tape& tape, const Template& phi) { return bind_template(tape, phi); }
std::vector<nn::FilmVars> bind(Tape& tape, FilmSet& psi) { return bind_film(tape, psi); }
std::vector<nn::FilmVars> bind(Tape& tape, const FilmSet& psi) { return bind_film(tape, psi); }

Var forward_features(const Var& x, const ArchSpec& arch, const TemplateVars& phi, const std::vector<nn::FilmVars>& psi,
                     std::vector<nn::BatchNormState>& stats, const nn::NormOptions& opt) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != arch.in_channels) {
    throw ShapeError("extract_features: expected [B," + std::to_string(arch.in_channels) + ",H,W], got " +
                     shape_string(s));
  }
  const auto sites = arch.norm_sites();
  if (psi.size() != sites.size() || stats.size() != sites.size() || phi.blocks.size() != arch.blocks.size()) {
    throw ShapeError("extract_features: parameter structure does not match the architecture");
  }
  Var h = ops::conv2d(x, phi.stem, arch.stem_stride, 1);
  h = nn::film_batchnorm(h, psi[0].gamma, psi[0].beta, stats[0], opt);
  h = ops::relu(h);
  for (std::size_t i = 0; i < phi.blocks.size(); ++i) {
    const std::size_t a = 1 + 2 * i;
    h = nn::residual_block(h, phi.blocks[i].kernels, phi.blocks[i].stride, psi[a], psi[a + 1], stats[a],
                           stats[a + 1], opt);
  }
  return ops::global_avg_pool(h);
}

Var extract_features(Tape& tape, const Var& x, const Template& phi, const FilmSet& psi, const nn::NormOptions& opt) {
  check_structure(phi, psi);
  auto stats = psi.stats;
  nn::NormOptions frozen = opt;
  frozen.update_running = false;
  return forward_features(x, phi.arch, bind(tape, phi), bind(tape, psi), stats, frozen);
}

Tensor extract_features(const Tensor& x, const Template& phi, const FilmSet& psi, const nn::NormOptions& opt) {
  Tape tape;
  Var f = extract_features(tape, tape.constant(x), phi, psi, opt);
  return f.value();
}

FilmSet scratch_init(const ArchSpec& arch) {
  FilmSet s;
  for (auto c : arch.norm_sites()) {
    s.layers.push_back(nn::FilmLayerParams::identity(c));
    s.stats.push_back(nn::BatchNormState::fresh(c));
  }
  return s;
}

FilmSet scratch_init(const Template& phi) { return scratch_init(phi.arch); }

FilmSet anchor_init(const FilmBank& bank, std::size_t anchor_id) {
  const FilmSet& src = bank.at(anchor_id);
  FilmSet copy;
  for (const auto& l : src.layers) {
    copy.layers.push_back({Tensor(l.gamma.shape(), l.gamma.values()), Tensor(l.beta.shape(), l.beta.values())});
  }
  copy.stats = src.stats;
  return copy;
}

}  // namespace flute
