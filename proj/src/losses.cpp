#include "langtail/losses.hpp"

#include "langtail/errors.hpp"

#include <cmath>
#include <string>

namespace langtail::train {

HeadLoss head_ce_loss(const Matrix& features, const Matrix& mu, const LabelVector& labels,
                      std::optional<double> normalizer) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ShapeError("head_ce_loss: " + std::to_string(features.rows()) + " rows vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (features.cols() != mu.cols()) throw ShapeError("head_ce_loss: feature and head widths differ");
  const auto k = mu.rows();
  HeadLoss r;
  for (auto l : labels.labels) {
    if (l < -1 || l >= k) throw DataError("head_ce_loss: label " + std::to_string(l) + " outside [-1, k)");
    if (l >= 0) ++r.counted;
  }
  if (r.counted == 0 && !normalizer) throw EmptyBatchError("head_ce_loss: every label is ignored");
  const double norm = normalizer.value_or(static_cast<double>(r.counted));

  const Matrix logits = features * mu.transpose();
  Matrix grad_logits = Matrix::Zero(logits.rows(), k);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    if (y < 0) continue;
    const double mx = logits.row(i).maxCoeff();
    const RowVector e = (logits.row(i).array() - mx).exp().matrix();
    const double z = e.sum();
    r.loss += std::log(z) + mx - logits(i, y);
    grad_logits.row(i) = e / z;
    grad_logits(i, y) -= 1.0;
  }
  r.loss /= norm;
  grad_logits /= norm;
  r.grad_features = grad_logits * mu;
  r.grad_mu = grad_logits.transpose() * features;
  return r;
}

DistillLoss distill_warmup_loss(const Matrix& features, const Matrix& targets, std::optional<double> normalizer) {
  if (features.rows() != targets.rows() || features.cols() != targets.cols()) {
    throw ShapeError("distill_warmup_loss: features and targets differ in shape");
  }
  const double norm = normalizer.value_or(static_cast<double>(features.rows()));
  DistillLoss r;
  r.grad_features.resize(features.rows(), features.cols());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const double tn = targets.row(i).norm();
    if (!(tn > 0.0)) throw DataError("distill target row " + std::to_string(i) + " has zero norm");
    const double fn = features.row(i).norm();
    if (!(fn > 0.0)) throw NormalizationError("distill feature row " + std::to_string(i) + " has zero norm");
    const RowVector t_hat = targets.row(i) / tn;
    const RowVector f_hat = features.row(i) / fn;
    const double cos = f_hat.dot(t_hat);
    r.loss += 1.0 - cos;
    // d(1 - cos)/df = -(t_hat - cos f_hat) / |f|
    r.grad_features.row(i) = -(t_hat - cos * f_hat) / (fn * norm);
  }
  r.loss /= norm;
  return r;
}

}  // namespace langtail::train
