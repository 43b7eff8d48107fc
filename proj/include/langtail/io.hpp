#pragma once

// Binary formats. All multi-byte values are little-endian.
//
//   LTFM  "LTFM" u32 version=1, u64 rows, u64 cols, rows*cols f32 row-major
//   LTSP  "LTSP" u32 version=1, u64 n_points, n_points u32 superpoint ids
//   LTLB  "LTLB" u32 version=1, u64 n, n i32 labels (-1 = ignore)
//
// Entity bank directory:
//   entities.tsv          entity_id \t text \t scene_count
//   embeddings.ltfm       T x 512 text embeddings, rows in entities.tsv order
//   masks/<scene_id>.bin  u32 version, u64 n_entities, then per entity
//                         u64 entity_id, u64 count, count u64 point indices

#include "langtail/data_model.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace langtail::io {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kFormatVersion = 1;

FeatureMatrix read_feature_matrix(const fs::path& path);
void write_feature_matrix(const fs::path& path, const FeatureMatrix& m);

/// Stream variants, used to embed matrices in checkpoints.
FeatureMatrix read_feature_matrix(std::istream& in, const std::string& origin);
void write_feature_matrix(std::ostream& out, const FeatureMatrix& m);

/// Reads raw ids and re-densifies them. `original_ids` receives the mapping.
SuperpointPartition read_superpoints(const fs::path& path,
                                     std::vector<std::uint32_t>* original_ids = nullptr);
void write_superpoints(const fs::path& path, const SuperpointPartition& part);

LabelVector read_labels(const fs::path& path);
void write_labels(const fs::path& path, const LabelVector& labels);

/// Per-scene mask file: entity id -> point indices.
using SceneMasks = std::vector<std::pair<std::uint64_t, std::vector<std::uint64_t>>>;
SceneMasks read_scene_masks(const fs::path& path);
void write_scene_masks(const fs::path& path, const SceneMasks& masks);

/// Reads an entity bank directory. Masks are validated against
/// `scene_sizes` (scene id -> point count) when it is non-empty.
std::vector<EntityRecord> read_entity_bank(const fs::path& dir,
                                           const std::map<std::string, std::size_t>& scene_sizes = {});
void write_entity_bank(const fs::path& dir, const std::vector<EntityRecord>& entities);

/// Writes tab-separated rows with fixed formatting.
void write_text_file(const fs::path& path, const std::string& contents);
std::string read_text_file(const fs::path& path);

}  // namespace langtail::io
