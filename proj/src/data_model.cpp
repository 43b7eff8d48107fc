#include "langtail/data_model.hpp"

#include "langtail/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

namespace langtail {

void check_feature_matrix(const Matrix& m, const char* what) {
  if (m.rows() < 1 || m.cols() < 1) {
    throw DataError(std::string(what) + ": matrix must have at least one row and column");
  }
  if (!m.allFinite()) {
    throw DataError(std::string(what) + ": non-finite value");
  }
}

Matrix normalize_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw NormalizationError("row " + std::to_string(i) + " has zero or non-finite norm");
    }
    out.row(i) = m.row(i) / norm;
  }
  return out;
}

SuperpointPartition::SuperpointPartition(std::vector<std::uint32_t> assignment)
    : assignment_(std::move(assignment)) {
  if (assignment_.empty()) {
    n_superpoints_ = 0;
    return;
  }
  const std::uint32_t max_id = *std::max_element(assignment_.begin(), assignment_.end());
  n_superpoints_ = static_cast<std::size_t>(max_id) + 1;
  std::vector<char> seen(n_superpoints_, 0);
  for (auto id : assignment_) seen[id] = 1;
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw DataError("superpoint ids are not dense in [0, " + std::to_string(n_superpoints_) + ")");
  }
}

SuperpointPartition SuperpointPartition::densify(const std::vector<std::uint32_t>& ids,
                                                 std::vector<std::uint32_t>* original_ids) {
  std::unordered_map<std::uint32_t, std::uint32_t> remap;
  std::vector<std::uint32_t> dense(ids.size());
  std::vector<std::uint32_t> originals;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto [it, inserted] = remap.try_emplace(ids[i], static_cast<std::uint32_t>(remap.size()));
    if (inserted) originals.push_back(ids[i]);
    dense[i] = it->second;
  }
  if (original_ids) *original_ids = std::move(originals);
  return SuperpointPartition(std::move(dense));
}

std::vector<std::vector<std::uint32_t>> SuperpointPartition::members() const {
  std::vector<std::vector<std::uint32_t>> out(n_superpoints_);
  for (std::size_t i = 0; i < assignment_.size(); ++i) {
    out[assignment_[i]].push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

void LabelVector::validate() const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < kIgnoreLabel) {
      throw DataError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) + " is below -1");
    }
  }
}

std::int32_t LabelVector::n_classes() const {
  std::int32_t mx = -1;
  for (auto l : labels) mx = std::max(mx, l);
  return mx + 1;
}

std::size_t LabelVector::n_distinct() const {
  std::vector<std::int32_t> copy;
  for (auto l : labels) {
    if (l != kIgnoreLabel) copy.push_back(l);
  }
  std::sort(copy.begin(), copy.end());
  return static_cast<std::size_t>(std::unique(copy.begin(), copy.end()) - copy.begin());
}

void SceneBundle::validate() const {
  const auto n = n_points();
  if (superpoints.n_points() != n) {
    throw ShapeError("scene " + scene_id + ": superpoint partition covers " +
                     std::to_string(superpoints.n_points()) + " points, expected " + std::to_string(n));
  }
  if (distill_targets && static_cast<std::size_t>(distill_targets->rows()) != n) {
    throw ShapeError("scene " + scene_id + ": distill targets have wrong row count");
  }
  if (gt_labels && gt_labels->size() != n) {
    throw ShapeError("scene " + scene_id + ": label count mismatch");
  }
}

FeatureMatrix pool_by_superpoint(const FeatureMatrix& points, const SuperpointPartition& part) {
  if (static_cast<std::size_t>(points.rows()) != part.n_points()) {
    throw ShapeError("pool_by_superpoint: " + std::to_string(points.rows()) + " rows vs " +
                     std::to_string(part.n_points()) + " partition entries");
  }
  FeatureMatrix out = FeatureMatrix::Zero(static_cast<Eigen::Index>(part.n_superpoints()), points.cols());
  std::vector<std::size_t> counts(part.n_superpoints(), 0);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const auto s = part[static_cast<std::size_t>(i)];
    out.row(s) += points.row(i);
    ++counts[s];
  }
  for (std::size_t s = 0; s < counts.size(); ++s) {
    out.row(static_cast<Eigen::Index>(s)) /= static_cast<double>(counts[s]);
  }
  return out;
}

void canonicalize_mask(std::vector<std::uint64_t>& points) {
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
}

}  // namespace langtail
