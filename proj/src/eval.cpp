#include "langtail/eval.hpp"

#include "langtail/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace langtail::eval {

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix cm;
  cm.n_pred = rows.size();
  cm.n_gt = rows.empty() ? 0 : rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != cm.n_gt) throw ShapeError("confusion rows differ in length");
    cm.counts.insert(cm.counts.end(), r.begin(), r.end());
  }
  return cm;
}

ConfusionMatrix confusion(const LabelVector& pred, const LabelVector& gt) {
  if (pred.size() != gt.size()) {
    throw ShapeError("confusion: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(gt.size()) +
                     " labels");
  }
  ConfusionMatrix cm;
  cm.n_pred = static_cast<std::size_t>(std::max(pred.n_classes(), 0));
  cm.n_gt = static_cast<std::size_t>(std::max(gt.n_classes(), 0));
  cm.counts.assign(cm.n_pred * cm.n_gt, 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == kIgnoreLabel) continue;
    if (pred[i] < 0) throw DataError("confusion: prediction " + std::to_string(i) + " is ignored but gt is not");
    ++cm.at(static_cast<std::size_t>(pred[i]), static_cast<std::size_t>(gt[i]));
  }
  return cm;
}

namespace {

/// Shortest augmenting path assignment for rows <= cols (1-based potentials).
std::vector<std::int32_t> assign_rows(const std::vector<std::vector<double>>& a, std::size_t n, std::size_t m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::int32_t> row_to_col(n, -1);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = static_cast<std::int32_t>(j - 1);
  }
  return row_to_col;
}

}  // namespace

Assignment hungarian(const std::vector<std::vector<double>>& cost) {
  Assignment out;
  const std::size_t rows = cost.size();
  if (rows == 0) return out;
  const std::size_t cols = cost.front().size();
  for (const auto& r : cost) {
    if (r.size() != cols) throw ShapeError("hungarian: ragged cost matrix");
    for (double c : r) {
      if (!std::isfinite(c)) throw DataError("hungarian: non-finite cost");
    }
  }
  out.row_to_col.assign(rows, -1);
  if (cols == 0) return out;
  if (rows <= cols) {
    out.row_to_col = assign_rows(cost, rows, cols);
  } else {
    std::vector<std::vector<double>> t(cols, std::vector<double>(rows));
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) t[j][i] = cost[i][j];
    }
    const auto col_to_row = assign_rows(t, cols, rows);
    for (std::size_t j = 0; j < cols; ++j) out.row_to_col[static_cast<std::size_t>(col_to_row[j])] = static_cast<std::int32_t>(j);
  }
  for (std::size_t i = 0; i < rows; ++i) {
    if (out.row_to_col[i] >= 0) out.cost += cost[i][static_cast<std::size_t>(out.row_to_col[i])];
  }
  return out;
}

EvalReport match_and_score(const ConfusionMatrix& cm, UnmatchedPolicy policy) {
  if (cm.n_pred == 0 || cm.n_gt == 0 || cm.total() == 0) throw EmptyBatchError("match_and_score: empty confusion matrix");
  std::vector<std::vector<double>> cost(cm.n_pred, std::vector<double>(cm.n_gt));
  for (std::size_t p = 0; p < cm.n_pred; ++p) {
    for (std::size_t g = 0; g < cm.n_gt; ++g) cost[p][g] = -static_cast<double>(cm.at(p, g));
  }
  EvalReport r;
  r.mapping = hungarian(cost).row_to_col;
  if (policy == UnmatchedPolicy::merge) {
    for (std::size_t p = 0; p < cm.n_pred; ++p) {
      if (r.mapping[p] >= 0) continue;
      std::uint64_t best = 0;
      std::int32_t arg = -1;
      for (std::size_t g = 0; g < cm.n_gt; ++g) {
        if (cm.at(p, g) > best) {
          best = cm.at(p, g);
          arg = static_cast<std::int32_t>(g);
        }
      }
      r.mapping[p] = arg;
    }
  }

  const std::size_t n = cm.n_gt;
  std::vector<std::uint64_t> tp(n, 0), predicted(n, 0), actual(n, 0);
  std::uint64_t total = 0;
  for (std::size_t p = 0; p < cm.n_pred; ++p) {
    const auto m = r.mapping[p];
    for (std::size_t g = 0; g < n; ++g) {
      const auto c = cm.at(p, g);
      actual[g] += c;
      total += c;
      if (m < 0) continue;
      predicted[static_cast<std::size_t>(m)] += c;
      if (static_cast<std::size_t>(m) == g) tp[g] += c;
    }
  }
  r.per_class_iou.assign(n, 0.0);
  r.per_class_recall.assign(n, 0.0);
  r.per_class_count = actual;
  std::uint64_t correct = 0;
  double iou_sum = 0.0, acc_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t g = 0; g < n; ++g) {
    correct += tp[g];
    if (actual[g] == 0) continue;
    const auto denom = actual[g] + predicted[g] - tp[g];
    r.per_class_iou[g] = static_cast<double>(tp[g]) / static_cast<double>(denom);
    r.per_class_recall[g] = static_cast<double>(tp[g]) / static_cast<double>(actual[g]);
    iou_sum += r.per_class_iou[g];
    acc_sum += r.per_class_recall[g];
    ++present;
  }
  r.oa = static_cast<double>(correct) / static_cast<double>(total);
  r.miou = iou_sum / static_cast<double>(present);
  r.macc = acc_sum / static_cast<double>(present);
  return r;
}

std::size_t prototype_count(const std::vector<train::ClusterModel>& models) {
  std::size_t n = 0;
  for (const auto& m : models) {
    for (const auto& l : m.levels) n += static_cast<std::size_t>(l.mu.rows());
  }
  return n;
}

LabelVector prototype_transfer(const std::vector<train::ClusterModel>& models, const Matrix& target_features) {
  const auto total = prototype_count(models);
  if (total == 0) throw ConfigError("prototype_transfer: no prototypes");
  Matrix protos(static_cast<Eigen::Index>(total), target_features.cols());
  Eigen::Index row = 0;
  for (const auto& m : models) {
    for (const auto& l : m.levels) {
      if (l.mu.cols() != target_features.cols()) {
        throw ShapeError("prototype_transfer: centroid width " + std::to_string(l.mu.cols()) + " vs feature width " +
                         std::to_string(target_features.cols()));
      }
      protos.middleRows(row, l.mu.rows()) = l.mu;
      row += l.mu.rows();
    }
  }
  // Zero prototypes can never win a cosine comparison.
  for (Eigen::Index i = 0; i < protos.rows(); ++i) {
    const double norm = protos.row(i).norm();
    protos.row(i) = norm > 0.0 ? RowVector(protos.row(i) / norm) : RowVector::Zero(protos.cols());
  }
  // Ranking by cosine per row does not depend on the row's own norm.
  const Matrix sims = target_features * protos.transpose();
  LabelVector out;
  out.labels.resize(static_cast<std::size_t>(target_features.rows()));
  for (Eigen::Index i = 0; i < sims.rows(); ++i) {
    Eigen::Index arg = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < sims.cols(); ++j) {
      if (protos.row(j).squaredNorm() == 0.0) continue;
      if (sims(i, j) > best) {
        best = sims(i, j);
        arg = j;
      }
    }
    out[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(arg);
  }
  return out;
}

std::vector<TailRow> tail_report(const EvalReport& report) {
  std::vector<TailRow> rows;
  for (std::size_t g = 0; g < report.per_class_count.size(); ++g) {
    if (report.per_class_count[g] == 0) continue;
    rows.push_back({static_cast<std::int32_t>(g), report.per_class_count[g], report.per_class_iou[g],
                    report.per_class_iou[g] < kAbsorbedIou});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const TailRow& a, const TailRow& b) { return a.count > b.count; });
  return rows;
}

double tail_iou(const EvalReport& report, std::size_t n) {
  auto rows = tail_report(report);
  if (rows.empty() || n == 0) return 0.0;
  n = std::min(n, rows.size());
  double sum = 0.0;
  for (std::size_t i = rows.size() - n; i < rows.size(); ++i) sum += rows[i].iou;
  return sum / static_cast<double>(n);
}

std::string format_report(const EvalReport& report) {
  std::ostringstream ss;
  ss << std::setprecision(6) << std::fixed;
  ss << "class\tcount\tiou\trecall\n";
  for (std::size_t g = 0; g < report.per_class_count.size(); ++g) {
    ss << g << '\t' << report.per_class_count[g] << '\t' << report.per_class_iou[g] << '\t'
       << report.per_class_recall[g] << '\n';
  }
  ss << "# OA=" << report.oa << "\tmAcc=" << report.macc << "\tmIoU=" << report.miou << '\n';
  return ss.str();
}

std::string format_tail_report(const std::vector<TailRow>& rows) {
  std::ostringstream ss;
  ss << std::setprecision(6) << std::fixed;
  ss << "class\tcount\tiou\tstatus\n";
  for (const auto& r : rows) {
    ss << r.cls << '\t' << r.count << '\t' << r.iou << '\t' << (r.absorbed ? "absorbed" : "ok") << '\n';
  }
  return ss.str();
}

}  // namespace langtail::eval
