#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dncbm/cbm.hpp"
#include "dncbm/matrix.hpp"
#include "dncbm/naming.hpp"
#include "dncbm/sae.hpp"

namespace dncbm::io {

// All formats are little-endian; reals are stored as f32 and widened on load.
//
// Feature file:   "DNCB" u32 version=1, u8 kind, u32 d, u64 n, n×d f32,
//                 optionally "LBLS" + n×u32 labels. Nothing may follow.
// Vocabulary:     "DNCV" u32 version=1, u32 count, u32 d, then per word
//                 u16 byte length, UTF-8 bytes, d×f32.
// Checkpoint:     "DNCK" u32 version=1, u32 d, u32 h, W_E (d×h) f32,
//                 W_D (h×d) f32, u32 CRC32 of the weight bytes.
// Probe:          "DNCP" u32 version=1, u32 h, u32 K, f64 lambda2, K class
//                 names (u16 length + bytes), h×K f32, u32 CRC32 of
//                 everything after the magic.

enum class FeatureKind : std::uint8_t { Image = 0, Text = 1, Activations = 2 };

struct FeatureFile {
  FeatureKind kind = FeatureKind::Image;
  Matrix data;
  std::optional<std::vector<std::size_t>> labels;
};

std::string encode_features(const FeatureFile& file);
FeatureFile decode_features(std::string_view bytes);
FeatureFile read_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const FeatureFile& file);

std::string encode_vocabulary(const Vocabulary& vocab);
Vocabulary decode_vocabulary(std::string_view bytes);
Vocabulary read_vocabulary(const std::filesystem::path& path);
void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab);

std::string encode_checkpoint(const SaeModel& model);
SaeModel decode_checkpoint(std::string_view bytes);
SaeModel read_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const std::filesystem::path& path, const SaeModel& model);

std::string encode_probe(const CbmProbe& probe);
CbmProbe decode_probe(std::string_view bytes);
CbmProbe read_probe(const std::filesystem::path& path);
void write_probe(const std::filesystem::path& path, const CbmProbe& probe);

/// Rounds every entry through f32, i.e. what a save/load cycle yields.
Matrix quantize_f32(const Matrix& m);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Whitespace/newline separated non-negative integers; '#' starts a comment.
std::vector<std::size_t> parse_index_list(std::string_view text);
std::vector<std::size_t> read_index_file(const std::filesystem::path& path);

/// Quotes a CSV field when it contains a comma, quote or newline.
std::string csv_field(std::string_view s);

std::string names_csv(const NamedConceptSpace& space);

}  // namespace dncbm::io
