#include "flute/corpus_io.hpp"

#include <json.hpp>

#include "binary_io.hpp"
#include "flute/error.hpp"

namespace flute::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kImageMagic[8] = {'F', 'L', 'U', 'T', 'E', 'I', 'M', 'G'};

json domain_json(const data::Domain& d) {
  return json{{"name", d.spec.name},
              {"kind", data::to_string(d.spec.kind)},
              {"classes", d.spec.classes},
              {"examples_per_class", d.spec.examples_per_class},
              {"image_size", d.spec.image_size},
              {"seed", d.spec.seed},
              {"role", data::to_string(d.spec.role)},
              {"file", d.spec.name + ".bin"},
              {"split", json{{"train", d.split.train}, {"val", d.split.val}, {"test", d.split.test}}}};
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw IoError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw IoError(where + ": field '" + std::string(key) + "' has the wrong type");
  }
}

}  // namespace

void write_text_atomic(const fs::path& path, const std::string& text) { detail::write_file_atomic(path, text); }

void save_corpus(const data::SplitCorpus& corpus, const fs::path& dir) {
  corpus.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  json meta{{"format", "flute-corpus"}, {"version", kCorpusFormatVersion}, {"seed", corpus.seed}};
  json domains = json::array();
  for (const auto& d : corpus.domains) {
    detail::ByteWriter w;
    w.raw(kImageMagic, sizeof kImageMagic);
    w.u32(kImageFileVersion);
    w.u32(4);
    w.u64(d.images.classes);
    w.u64(d.images.per_class);
    w.u64(d.images.image_size);
    w.u64(d.images.image_size);
    w.f64s(d.images.pixels);
    detail::write_file_atomic(dir / (d.spec.name + ".bin"), w.bytes().data(), w.bytes().size());
    domains.push_back(domain_json(d));
  }
  meta["domains"] = domains;
  write_text_atomic(dir / kCorpusMetadataFile, meta.dump(2) + "\n");
}

data::SplitCorpus load_corpus(const fs::path& dir) {
  const auto meta_path = dir / kCorpusMetadataFile;
  if (!fs::exists(meta_path)) throw IoError("corpus metadata not found: " + meta_path.string());
  json meta;
  {
    const auto bytes = detail::read_file(meta_path);
    try {
      meta = json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
      throw IoError("corpus metadata " + meta_path.string() + " is not valid JSON: " + e.what());
    }
  }
  const std::string where = meta_path.string();
  if (field<std::string>(meta, "format", where) != "flute-corpus") throw IoError(where + ": wrong format tag");
  if (field<std::uint32_t>(meta, "version", where) != kCorpusFormatVersion) {
    throw IoError(where + ": unsupported corpus version");
  }
  data::SplitCorpus corpus;
  corpus.seed = field<std::uint64_t>(meta, "seed", where);
  const auto domains = field<json>(meta, "domains", where);
  if (!domains.is_array() || domains.empty()) throw IoError(where + ": 'domains' must be a non-empty array");
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const auto& dj = domains[i];
    const std::string dwhere = where + ": domains[" + std::to_string(i) + "]";
    data::Domain d;
    d.spec.name = field<std::string>(dj, "name", dwhere);
    try {
      d.spec.kind = data::parse_generator(field<std::string>(dj, "kind", dwhere));
      d.spec.role = data::parse_role(field<std::string>(dj, "role", dwhere));
    } catch (const ConfigError& e) {
      throw IoError(dwhere + ": " + e.what());
    }
    d.spec.classes = field<std::size_t>(dj, "classes", dwhere);
    d.spec.examples_per_class = field<std::size_t>(dj, "examples_per_class", dwhere);
    d.spec.image_size = field<std::size_t>(dj, "image_size", dwhere);
    d.spec.seed = field<std::uint64_t>(dj, "seed", dwhere);
    const auto split = field<json>(dj, "split", dwhere);
    d.split.train = field<std::vector<std::size_t>>(split, "train", dwhere + ".split");
    d.split.val = field<std::vector<std::size_t>>(split, "val", dwhere + ".split");
    d.split.test = field<std::vector<std::size_t>>(split, "test", dwhere + ".split");

    const fs::path name = field<std::string>(dj, "file", dwhere);
    if (name.empty() || name.has_parent_path() || name.is_absolute()) {
      throw IoError(dwhere + ": 'file' must be a plain file name");
    }
    const auto file = dir / name;
    detail::ByteReader r(detail::read_file(file), file.string());
    char magic[8];
    r.raw(magic, sizeof magic);
    if (std::memcmp(magic, kImageMagic, sizeof magic) != 0) throw IoError(file.string() + ": bad magic");
    if (r.u32() != kImageFileVersion) throw IoError(file.string() + ": unsupported image file version");
    if (r.u32() != 4) throw IoError(file.string() + ": expected rank-4 image tensor");
    d.images.classes = r.u64();
    d.images.per_class = r.u64();
    d.images.image_size = r.u64();
    const auto width = r.u64();
    if (width != d.images.image_size) throw IoError(file.string() + ": images must be square");
    if (d.images.classes != d.spec.classes || d.images.per_class != d.spec.examples_per_class ||
        d.images.image_size != d.spec.image_size) {
      throw IoError(file.string() + ": dimensions disagree with corpus metadata");
    }
    r.f64s(d.images.pixels, d.images.classes * d.images.per_class * d.images.image_numel());
    if (!r.at_end()) throw IoError(file.string() + ": trailing bytes");
    corpus.domains.push_back(std::move(d));
  }
  try {
    corpus.validate();
  } catch (const DataError& e) {
    throw IoError(where + ": " + e.what());
  }
  return corpus;
}

}  // namespace flute::io
