#pragma once

#include "langtail/data_model.hpp"
#include "langtail/matrix.hpp"
#include "langtail/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace langtail::eval {

/// counts[p][g] over items whose ground truth is not -1.
struct ConfusionMatrix {
  std::size_t n_pred = 0;
  std::size_t n_gt = 0;
  std::vector<std::uint64_t> counts;  // row-major n_pred x n_gt

  std::uint64_t at(std::size_t p, std::size_t g) const { return counts[p * n_gt + g]; }
  std::uint64_t& at(std::size_t p, std::size_t g) { return counts[p * n_gt + g]; }
  std::uint64_t total() const;

  static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows);
};

/// Predictions outside [0, n_pred) and gt outside [0, n_gt) widen the matrix.
ConfusionMatrix confusion(const LabelVector& pred, const LabelVector& gt);

struct Assignment {
  std::vector<std::int32_t> row_to_col;  // -1 for unassigned rows
  double cost = 0.0;
};

/// Minimum-cost injective matching between rows and columns of a
/// rectangular matrix; min(rows, cols) pairs are assigned. Throws DataError
/// on a non-finite entry.
Assignment hungarian(const std::vector<std::vector<double>>& cost);

enum class UnmatchedPolicy { merge, drop };

struct EvalReport {
  std::vector<std::int32_t> mapping;  // pred class -> gt class, -1 when dropped
  double oa = 0.0;
  double macc = 0.0;
  double miou = 0.0;
  std::vector<double> per_class_iou;
  std::vector<double> per_class_recall;
  std::vector<std::uint64_t> per_class_count;
};

/// Hungarian matching on counts, then pseudo classes left unmatched either
/// join their plurality gt class (merge) or count as errors (drop).
/// Classes with no gt points are excluded from the means.
EvalReport match_and_score(const ConfusionMatrix& cm, UnmatchedPolicy policy = UnmatchedPolicy::merge);

/// Stacks the centroids of every branch and level into one prototype matrix
/// and labels each target row with its most cosine-similar prototype.
LabelVector prototype_transfer(const std::vector<train::ClusterModel>& models, const Matrix& target_features);
std::size_t prototype_count(const std::vector<train::ClusterModel>& models);

struct TailRow {
  std::int32_t cls = 0;
  std::uint64_t count = 0;
  double iou = 0.0;
  bool absorbed = false;
};

inline constexpr double kAbsorbedIou = 0.05;

/// Classes sorted by point count, descending (ties by class id); classes
/// with IoU below 0.05 are flagged as absorbed.
std::vector<TailRow> tail_report(const EvalReport& report);

/// Mean IoU over the `n` least frequent classes that have gt points.
double tail_iou(const EvalReport& report, std::size_t n);

/// report.tsv: header, one row per gt class, then a summary comment line.
std::string format_report(const EvalReport& report);
std::string format_tail_report(const std::vector<TailRow>& rows);

}  // namespace langtail::eval
