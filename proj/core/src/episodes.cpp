#include "flute/episodes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "flute/error.hpp"

namespace flute::data {

std::string to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::Glyphs: return "glyphs";
    case GeneratorKind::Textures: return "textures";
    case GeneratorKind::Blobs: return "blobs";
    case GeneratorKind::Rings: return "rings";
    case GeneratorKind::Checkers: return "checkers";
  }
  return "?";
}

std::string to_string(DomainRole role) { return role == DomainRole::Train ? "train" : "held_out"; }

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

GeneratorKind parse_generator(const std::string& s) {
  for (auto k : {GeneratorKind::Glyphs, GeneratorKind::Textures, GeneratorKind::Blobs, GeneratorKind::Rings,
                 GeneratorKind::Checkers}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown generator kind '" + s + "'");
}

DomainRole parse_role(const std::string& s) {
  if (s == "train") return DomainRole::Train;
  if (s == "held_out") return DomainRole::HeldOut;
  throw ConfigError("unknown domain role '" + s + "'");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + s + "'");
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

std::size_t latent_capacity(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::Textures: return 40;  // 5 orientations x 8 frequencies
    case GeneratorKind::Rings: return 41;     // 1..3 rings out of 6 radii
    case GeneratorKind::Checkers: return 28;  // cell pairs a <= b from 2..8
    default: return 1000;
  }
}

}  // namespace

void DomainSpec::validate(std::size_t max_shots, std::size_t max_queries) const {
  if (name.empty()) throw ConfigError("domain spec needs a name");
  if (classes < 6) throw ConfigError("domain " + name + ": class count must be >= 6");
  if (classes > latent_capacity(kind)) {
    throw ConfigError("domain " + name + ": generator " + to_string(kind) + " supports at most " +
                      std::to_string(latent_capacity(kind)) + " classes");
  }
  if (examples_per_class < 2 * (max_shots + max_queries)) {
    throw ConfigError("domain " + name + ": examples per class must be >= " +
                      std::to_string(2 * (max_shots + max_queries)));
  }
  if (image_size < 16) throw ConfigError("domain " + name + ": image size must be >= 16");
}

std::span<const double> LabeledImages::image(std::size_t cls, std::size_t index) const {
  if (cls >= classes || index >= per_class) throw DataError("image index out of range");
  return std::span<const double>(pixels).subspan(example_id(cls, index) * image_numel(), image_numel());
}

namespace {

using Rng = std::mt19937_64;
constexpr double kPi = std::numbers::pi;

struct Canvas {
  std::size_t size;
  std::vector<double> px;
  explicit Canvas(std::size_t s) : size(s), px(s * s, 0.0) {}
  double& at(std::size_t y, std::size_t x) { return px[y * size + x]; }
};

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

struct Segment {
  double ax, ay, bx, by;
};

// Glyph latent: four strokes between points of a 5x5 grid.
std::vector<Segment> glyph_latent(Rng& rng, double size) {
  const double lo = size * 0.2, step = size * 0.15;
  std::uniform_int_distribution<int> pick(0, 4);
  std::vector<Segment> segs;
  while (segs.size() < 4) {
    const int x0 = pick(rng), y0 = pick(rng), x1 = pick(rng), y1 = pick(rng);
    if (x0 == x1 && y0 == y1) continue;
    segs.push_back({lo + x0 * step, lo + y0 * step, lo + x1 * step, lo + y1 * step});
  }
  return segs;
}

void render_glyph(Canvas& c, const std::vector<Segment>& segs, Rng& rng) {
  const double dx = uniform(rng, -1.0, 1.0), dy = uniform(rng, -1.0, 1.0);
  const double half = uniform(rng, 0.8, 1.1);
  const double ink = uniform(rng, 0.8, 1.0);
  for (std::size_t y = 0; y < c.size; ++y) {
    for (std::size_t x = 0; x < c.size; ++x) {
      double v = 0.0;
      for (const auto& s : segs) {
        const double d = segment_distance(x + 0.5, y + 0.5, s.ax + dx, s.ay + dy, s.bx + dx, s.by + dy);
        v = std::max(v, std::clamp(half + 0.5 - d, 0.0, 1.0));
      }
      c.at(y, x) = ink * v;
    }
  }
}

void render_texture(Canvas& c, std::size_t cls, Rng& rng) {
  const double theta = static_cast<double>(cls % 5) * kPi / 5.0 + uniform(rng, -0.05, 0.05);
  const double freq = (0.06 + 0.05 * static_cast<double>(cls / 5)) * uniform(rng, 0.97, 1.03);
  const double phase = uniform(rng, -0.6, 0.6);
  const double amp = uniform(rng, 0.35, 0.45);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (std::size_t y = 0; y < c.size; ++y) {
    for (std::size_t x = 0; x < c.size; ++x) {
      const double u = static_cast<double>(x) * ct + static_cast<double>(y) * st;
      c.at(y, x) = 0.5 + amp * std::sin(2.0 * kPi * freq * u + phase);
    }
  }
}

struct Blob {
  double cx, cy, sigma, amp;
};

std::vector<Blob> blob_latent(Rng& rng, double size) {
  std::vector<Blob> blobs;
  for (int i = 0; i < 3; ++i) {
    blobs.push_back({uniform(rng, 0.25 * size, 0.75 * size), uniform(rng, 0.25 * size, 0.75 * size),
                     uniform(rng, 0.06 * size, 0.14 * size), uniform(rng, 0.6, 1.0)});
  }
  return blobs;
}

void render_blobs(Canvas& c, const std::vector<Blob>& blobs, Rng& rng) {
  std::vector<Blob> jittered = blobs;
  for (auto& b : jittered) {
    b.cx += uniform(rng, -1.5, 1.5);
    b.cy += uniform(rng, -1.5, 1.5);
    b.sigma *= uniform(rng, 0.9, 1.1);
  }
  for (std::size_t y = 0; y < c.size; ++y) {
    for (std::size_t x = 0; x < c.size; ++x) {
      double v = 0.0;
      for (const auto& b : jittered) {
        const double dx = x + 0.5 - b.cx, dy = y + 0.5 - b.cy;
        v += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
      }
      c.at(y, x) = std::min(v, 1.0);
    }
  }
}

std::vector<std::vector<int>> ring_sets() {
  std::vector<std::vector<int>> sets;
  const std::array<int, 6> radii{4, 6, 8, 10, 12, 14};
  for (int a = 0; a < 6; ++a) sets.push_back({radii[a]});
  for (int a = 0; a < 6; ++a) {
    for (int b = a + 1; b < 6; ++b) sets.push_back({radii[a], radii[b]});
  }
  for (int a = 0; a < 6; ++a) {
    for (int b = a + 1; b < 6; ++b) {
      for (int d = b + 1; d < 6; ++d) sets.push_back({radii[a], radii[b], radii[d]});
    }
  }
  return sets;
}

void render_rings(Canvas& c, const std::vector<int>& radii, Rng& rng) {
  const double scale = static_cast<double>(c.size) / 32.0;
  const double cx = c.size / 2.0 + uniform(rng, -2.5, 2.5), cy = c.size / 2.0 + uniform(rng, -2.5, 2.5);
  const double width = uniform(rng, 1.0, 2.0) * scale;
  std::vector<double> rs;
  for (int r : radii) rs.push_back(r * scale + uniform(rng, -0.8, 0.8));
  const double ink = uniform(rng, 0.8, 1.0);
  for (std::size_t y = 0; y < c.size; ++y) {
    for (std::size_t x = 0; x < c.size; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double r = std::sqrt(dx * dx + dy * dy);
      double v = 0.0;
      for (double rr : rs) v = std::max(v, 1.0 - std::abs(r - rr) / width);
      c.at(y, x) = ink * std::max(v, 0.0);
    }
  }
}

std::vector<std::pair<int, int>> checker_cells() {
  std::vector<std::pair<int, int>> cells;
  for (int a = 2; a <= 8; ++a) {
    for (int b = a; b <= 8; ++b) cells.push_back({a, b});
  }
  return cells;
}

void render_checkers(Canvas& c, std::pair<int, int> cell, Rng& rng) {
  const double hi = uniform(rng, 0.6, 0.9), lo = uniform(rng, 0.1, 0.4);
  const auto ox = std::uniform_int_distribution<std::size_t>(0, 2 * cell.first - 1)(rng);
  const auto oy = std::uniform_int_distribution<std::size_t>(0, 2 * cell.second - 1)(rng);
  for (std::size_t y = 0; y < c.size; ++y) {
    for (std::size_t x = 0; x < c.size; ++x) {
      const auto parity = ((x + ox) / static_cast<std::size_t>(cell.first) + (y + oy) / static_cast<std::size_t>(cell.second)) % 2;
      c.at(y, x) = parity ? hi : lo;
    }
  }
}

}  // namespace

LabeledImages generate_domain(const DomainSpec& spec) {
  spec.validate(0, 0);
  LabeledImages out;
  out.classes = spec.classes;
  out.per_class = spec.examples_per_class;
  out.image_size = spec.image_size;
  out.pixels.resize(spec.classes * spec.examples_per_class * spec.image_size * spec.image_size);
  const double size = static_cast<double>(spec.image_size);

  // Class latents are drawn from one stream; Glyphs and Blobs reject
  // duplicates so every class is distinct.
  Rng latent_rng(mix_seed(spec.seed, 0x1a7e47));
  std::vector<std::vector<Segment>> glyphs;
  std::vector<std::vector<Blob>> blobs;
  const auto rings = ring_sets();
  const auto cells = checker_cells();
  if (spec.kind == GeneratorKind::Glyphs) {
    std::set<std::vector<int>> seen;
    while (glyphs.size() < spec.classes) {
      auto g = glyph_latent(latent_rng, size);
      std::vector<int> key;
      for (const auto& s : g) {
        int a = static_cast<int>(s.ax * 10) * 1000 + static_cast<int>(s.ay * 10);
        int b = static_cast<int>(s.bx * 10) * 1000 + static_cast<int>(s.by * 10);
        key.push_back(std::min(a, b) * 100000 + std::max(a, b));
      }
      std::sort(key.begin(), key.end());
      if (seen.insert(key).second) glyphs.push_back(std::move(g));
    }
  } else if (spec.kind == GeneratorKind::Blobs) {
    for (std::size_t c = 0; c < spec.classes; ++c) blobs.push_back(blob_latent(latent_rng, size));
  }
  // Rings/Checkers latents are a seeded permutation of a fixed catalogue.
  std::vector<std::size_t> catalogue(spec.kind == GeneratorKind::Rings ? rings.size() : cells.size());
  for (std::size_t i = 0; i < catalogue.size(); ++i) catalogue[i] = i;
  std::shuffle(catalogue.begin(), catalogue.end(), latent_rng);

  std::normal_distribution<double> noise(0.0, kPixelJitter);
  for (std::size_t cls = 0; cls < spec.classes; ++cls) {
    for (std::size_t i = 0; i < spec.examples_per_class; ++i) {
      Rng rng(mix_seed(mix_seed(spec.seed, cls + 1), i + 1));
      Canvas canvas(spec.image_size);
      switch (spec.kind) {
        case GeneratorKind::Glyphs: render_glyph(canvas, glyphs[cls], rng); break;
        case GeneratorKind::Textures: render_texture(canvas, cls, rng); break;
        case GeneratorKind::Blobs: render_blobs(canvas, blobs[cls], rng); break;
        case GeneratorKind::Rings: render_rings(canvas, rings[catalogue[cls]], rng); break;
        case GeneratorKind::Checkers: render_checkers(canvas, cells[catalogue[cls]], rng); break;
      }
      double* dst = out.pixels.data() + out.example_id(cls, i) * out.image_numel();
      for (std::size_t p = 0; p < canvas.px.size(); ++p) dst[p] = std::clamp(canvas.px[p] + noise(rng), 0.0, 1.0);
    }
  }
  return out;
}

const std::vector<std::size_t>& ClassSplit::of(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
  }
  return test;
}

CorpusSpec CorpusSpec::desk_default(std::uint64_t seed) {
  CorpusSpec spec;
  spec.seed = seed;
  const std::array<std::pair<const char*, GeneratorKind>, 5> kinds{{{"glyphs", GeneratorKind::Glyphs},
                                                                    {"textures", GeneratorKind::Textures},
                                                                    {"blobs", GeneratorKind::Blobs},
                                                                    {"rings", GeneratorKind::Rings},
                                                                    {"checkers", GeneratorKind::Checkers}}};
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    DomainSpec d;
    d.name = kinds[i].first;
    d.kind = kinds[i].second;
    d.seed = mix_seed(seed, 100 + i);
    d.role = i < 3 ? DomainRole::Train : DomainRole::HeldOut;
    spec.domains.push_back(d);
  }
  return spec;
}

void CorpusSpec::validate() const {
  if (domains.empty()) throw ConfigError("corpus needs at least one domain");
  std::set<std::string> names;
  bool any_train = false;
  for (const auto& d : domains) {
    d.validate();
    if (!names.insert(d.name).second) throw ConfigError("duplicate domain name " + d.name);
    if (d.role == DomainRole::Train) {
      any_train = true;
      if (train_classes + val_classes + test_classes > d.classes) {
        throw ConfigError("domain " + d.name + ": split sizes exceed its class count");
      }
    }
    if (d.image_size != domains.front().image_size) throw ConfigError("all domains must share one image size");
  }
  if (!any_train) throw ConfigError("corpus needs at least one training domain");
  if (train_classes < 2) throw ConfigError("training domains need at least 2 training classes");
}

std::size_t SplitCorpus::image_size() const {
  if (domains.empty()) throw DataError("empty corpus");
  return domains.front().images.image_size;
}

std::vector<std::size_t> SplitCorpus::training_domains() const {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (domains[i].spec.role == DomainRole::Train) ids.push_back(i);
  }
  return ids;
}

std::vector<std::size_t> SplitCorpus::held_out_domains() const {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (domains[i].spec.role == DomainRole::HeldOut) ids.push_back(i);
  }
  return ids;
}

std::size_t SplitCorpus::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (domains[i].spec.name == name) return i;
  }
  throw DataError("corpus has no domain named '" + name + "'");
}

void SplitCorpus::validate() const {
  for (const auto& d : domains) {
    const auto& s = d.split;
    std::set<std::size_t> seen;
    for (const auto* part : {&s.train, &s.val, &s.test}) {
      for (auto c : *part) {
        if (c >= d.images.classes) throw DataError("domain " + d.spec.name + ": split class out of range");
        if (!seen.insert(c).second) throw DataError("domain " + d.spec.name + ": class splits overlap");
      }
    }
    if (d.images.pixels.size() != d.images.classes * d.images.per_class * d.images.image_numel()) {
      throw DataError("domain " + d.spec.name + ": pixel buffer has wrong size");
    }
  }
}

SplitCorpus build_corpus(const CorpusSpec& spec) {
  spec.validate();
  SplitCorpus corpus;
  corpus.seed = spec.seed;
  for (std::size_t i = 0; i < spec.domains.size(); ++i) {
    Domain d;
    d.spec = spec.domains[i];
    d.images = generate_domain(d.spec);
    std::vector<std::size_t> order(d.spec.classes);
    for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
    Rng rng(mix_seed(spec.seed, 0x5b1170 + i));
    std::shuffle(order.begin(), order.end(), rng);
    if (d.spec.role == DomainRole::Train) {
      auto it = order.begin();
      d.split.train.assign(it, it + static_cast<std::ptrdiff_t>(spec.train_classes));
      it += static_cast<std::ptrdiff_t>(spec.train_classes);
      d.split.val.assign(it, it + static_cast<std::ptrdiff_t>(spec.val_classes));
      it += static_cast<std::ptrdiff_t>(spec.val_classes);
      d.split.test.assign(it, it + static_cast<std::ptrdiff_t>(spec.test_classes));
    } else {
      d.split.test = order;
    }
    corpus.domains.push_back(std::move(d));
  }
  return corpus;
}

Tensor stack_images(const Domain& domain, std::span<const std::pair<std::size_t, std::size_t>> picks) {
  if (picks.empty()) throw DataError("stack_images: empty selection");
  const std::size_t s = domain.images.image_size;
  Tensor out({picks.size(), 1, s, s});
  double* dst = out.data().data();
  for (const auto& [cls, idx] : picks) {
    auto img = domain.images.image(cls, idx);
    std::copy(img.begin(), img.end(), dst);
    dst += img.size();
  }
  return out;
}

SampledEpisode sample_episode(const SplitCorpus& corpus, const EpisodeRequest& req, std::uint64_t seed) {
  if (req.domains.empty()) throw DataError("sample_episode: no candidate domains");
  if (req.ways < 2 || req.shots == 0 || req.queries == 0) {
    throw DataError("sample_episode: need ways >= 2 and positive shots/queries");
  }
  Rng rng(mix_seed(seed, 0xe915));
  const std::size_t pick =
      req.domains.size() == 1 ? 0 : std::uniform_int_distribution<std::size_t>(0, req.domains.size() - 1)(rng);
  const std::size_t domain_id = req.domains[pick];
  if (domain_id >= corpus.domains.size()) throw DataError("sample_episode: domain index out of range");
  const Domain& d = corpus.domains[domain_id];
  const auto& pool = d.split.of(req.split);
  if (pool.size() < req.ways) {
    throw DataError("sample_episode: domain " + d.spec.name + " split " + to_string(req.split) + " has " +
                    std::to_string(pool.size()) + " classes, " + std::to_string(req.ways) + "-way requested");
  }
  if (d.images.per_class < req.shots + req.queries) {
    throw DataError("sample_episode: domain " + d.spec.name + " has " + std::to_string(d.images.per_class) +
                    " examples per class, " + std::to_string(req.shots + req.queries) + " needed");
  }

  std::vector<std::size_t> classes = pool;
  std::shuffle(classes.begin(), classes.end(), rng);
  classes.resize(req.ways);

  SampledEpisode out;
  out.source.domain = domain_id;
  out.source.split = req.split;
  out.source.classes = classes;
  std::vector<std::pair<std::size_t, std::size_t>> support, query;
  std::vector<std::size_t> idx(d.images.per_class);
  for (std::size_t j = 0; j < classes.size(); ++j) {
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t s = 0; s < req.shots; ++s) {
      support.emplace_back(classes[j], idx[s]);
      out.episode.support_labels.push_back(j);
      out.source.support_ids.push_back(d.images.example_id(classes[j], idx[s]));
    }
    for (std::size_t q = 0; q < req.queries; ++q) {
      query.emplace_back(classes[j], idx[req.shots + q]);
      out.episode.query_labels.push_back(j);
      out.source.query_ids.push_back(d.images.example_id(classes[j], idx[req.shots + q]));
    }
  }
  out.episode.ways = req.ways;
  out.episode.shots = req.shots;
  out.episode.queries_per_class = req.queries;
  out.episode.support = stack_images(d, support);
  out.episode.query = stack_images(d, query);
  return out;
}

void check_episode(const SampledEpisode& e) {
  const auto& ep = e.episode;
  if (ep.support_labels.size() != ep.ways * ep.shots) throw DataError("episode: support size != N*k");
  if (ep.support.dim(0) != ep.support_labels.size() || ep.query.dim(0) != ep.query_labels.size()) {
    throw DataError("episode: image and label counts differ");
  }
  std::vector<std::size_t> per_class(ep.ways, 0);
  for (auto l : ep.support_labels) {
    if (l >= ep.ways) throw DataError("episode: support label out of range");
    ++per_class[l];
  }
  for (auto c : per_class) {
    if (c != ep.shots) throw DataError("episode: support class without exactly k examples");
  }
  for (auto l : ep.query_labels) {
    if (l >= ep.ways) throw DataError("episode: query class not in support");
  }
  std::set<std::size_t> sup(e.source.support_ids.begin(), e.source.support_ids.end());
  if (sup.size() != e.source.support_ids.size()) throw DataError("episode: duplicate support example");
  for (auto q : e.source.query_ids) {
    if (sup.count(q)) throw DataError("episode: example appears in both support and query");
  }
  std::set<std::size_t> cls(e.source.classes.begin(), e.source.classes.end());
  if (cls.size() != ep.ways) throw DataError("episode: label remapping is not a bijection");
}

}  // namespace flute::data
