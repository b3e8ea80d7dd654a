#pragma once

#include <filesystem>
#include <string>

#include "flute/episodes.hpp"

namespace flute::io {

inline constexpr const char* kCorpusMetadataFile = "corpus.json";
inline constexpr std::uint32_t kImageFileVersion = 1;
inline constexpr std::uint32_t kCorpusFormatVersion = 1;

/// Writes `corpus.json` plus one `<domain>.bin` image file per domain.
///
/// Image file layout (all integers little-endian):
///   8 bytes  magic "FLUTEIMG"
///   u32      version (1)
///   u32      rank (4)
///   4 x u64  dims: classes, examples per class, height, width
///   f64 LE   pixels, class-major
void save_corpus(const data::SplitCorpus& corpus, const std::filesystem::path& dir);

/// Loads and validates a corpus directory. Throws IoError naming the
/// offending file or metadata field.
data::SplitCorpus load_corpus(const std::filesystem::path& dir);

/// Write-temp-then-rename text output.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace flute::io
