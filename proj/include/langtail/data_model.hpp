#pragma once

#include "langtail/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace langtail {

/// Point index -> superpoint id, ids dense in [0, n_superpoints).
class SuperpointPartition {
 public:
  SuperpointPartition() = default;

  /// Requires dense ids; throws DataError otherwise.
  explicit SuperpointPartition(std::vector<std::uint32_t> assignment);

  /// Re-densifies arbitrary ids in order of first appearance. When
  /// `original_ids` is given it receives the original id of each dense id.
  static SuperpointPartition densify(const std::vector<std::uint32_t>& ids,
                                     std::vector<std::uint32_t>* original_ids = nullptr);

  std::size_t n_points() const { return assignment_.size(); }
  std::size_t n_superpoints() const { return n_superpoints_; }
  const std::vector<std::uint32_t>& assignment() const { return assignment_; }
  std::uint32_t operator[](std::size_t i) const { return assignment_[i]; }

  /// Member point indices per superpoint, ascending.
  std::vector<std::vector<std::uint32_t>> members() const;

 private:
  std::vector<std::uint32_t> assignment_;
  std::size_t n_superpoints_ = 0;
};

inline constexpr std::int32_t kIgnoreLabel = -1;

/// Per-item class ids; -1 means ignore.
struct LabelVector {
  std::vector<std::int32_t> labels;

  LabelVector() = default;
  explicit LabelVector(std::vector<std::int32_t> l) : labels(std::move(l)) {}

  std::size_t size() const { return labels.size(); }
  std::int32_t operator[](std::size_t i) const { return labels[i]; }
  std::int32_t& operator[](std::size_t i) { return labels[i]; }
  bool operator==(const LabelVector&) const = default;

  /// Throws DataError on any label below -1.
  void validate() const;
  /// Largest label + 1 (0 when everything is ignored).
  std::int32_t n_classes() const;
  std::size_t n_distinct() const;
};

struct EntityMask {
  std::string scene_id;
  std::vector<std::uint64_t> points;  // sorted, unique
};

struct EntityRecord {
  std::uint64_t entity_id = 0;
  std::string text;
  Vector text_embedding;
  std::vector<EntityMask> masks;
};

struct SceneBundle {
  std::string scene_id;
  FeatureMatrix points;
  SuperpointPartition superpoints;
  std::optional<FeatureMatrix> distill_targets;
  std::optional<LabelVector> gt_labels;

  std::size_t n_points() const { return static_cast<std::size_t>(points.rows()); }
  /// Checks that all component lengths agree.
  void validate() const;
};

/// Row s of the result is the mean of the point rows assigned to superpoint s.
FeatureMatrix pool_by_superpoint(const FeatureMatrix& points, const SuperpointPartition& part);

/// Sorts and deduplicates a mask's point list in place.
void canonicalize_mask(std::vector<std::uint64_t>& points);

}  // namespace langtail
