#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flute/dsclf.hpp"
#include "flute/model.hpp"

namespace flute::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Trained template, FiLM bank and (optionally) the training readout heads.
struct TemplateCheckpoint {
  Template phi;
  FilmBank bank;
  std::optional<ReadoutHeads> heads;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

struct DsClfCheckpoint {
  dsclf::DsClfParams params;
  std::vector<std::string> dataset_names;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

/// Binary layout (little-endian):
///   8 bytes  magic "FLUTECKP"
///   u32      format version
///   u32+str  metadata JSON (kind, architecture, dataset names, step, seed, config hash)
///   u32      record count, then per record:
///            u32+str name, u32 rank, rank x u64 dims, f64 values
void save_template(const std::filesystem::path& path, const TemplateCheckpoint& ckpt);
/// Throws IoError on malformed files and ShapeError when `expected` is given
/// and the stored architecture differs.
TemplateCheckpoint load_template(const std::filesystem::path& path, const ArchSpec* expected = nullptr);

void save_dsclf(const std::filesystem::path& path, const DsClfCheckpoint& ckpt);
DsClfCheckpoint load_dsclf(const std::filesystem::path& path);

}  // namespace flute::io
