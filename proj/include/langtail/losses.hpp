#pragma once

#include "langtail/data_model.hpp"
#include "langtail/matrix.hpp"

#include <optional>

namespace langtail::train {

struct HeadLoss {
  double loss = 0.0;
  Matrix grad_features;  // N x C
  Matrix grad_mu;        // k x C
  std::size_t counted = 0;
};

/// Cross-entropy of the linear head logits = features * mu^T against
/// `labels`, skipping -1. The loss is the sum over counted items divided by
/// `normalizer` (default: the number of counted items). Throws
/// EmptyBatchError when every label is ignored and no normalizer is given.
HeadLoss head_ce_loss(const Matrix& features, const Matrix& mu, const LabelVector& labels,
                      std::optional<double> normalizer = std::nullopt);

struct DistillLoss {
  double loss = 0.0;
  Matrix grad_features;
};

/// Sum over rows of 1 - cos(feature, target), divided by `normalizer`
/// (default: row count). Throws DataError on a zero-norm target row.
DistillLoss distill_warmup_loss(const Matrix& features, const Matrix& targets,
                                std::optional<double> normalizer = std::nullopt);

}  // namespace langtail::train
