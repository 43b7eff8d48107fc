#pragma once

#include "langtail/data_model.hpp"
#include "langtail/matrix.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace langtail::bank {

/// Aligned entity prototypes.
struct SemanticBank {
  Matrix prototypes;                        // T x C
  std::vector<std::uint64_t> entity_ids;    // row order
  Matrix text_embeddings;                   // T x 512, as read
  std::vector<double> alignment_loss_trace;

  std::size_t size() const { return entity_ids.size(); }
};

/// Entity-level point features: for every entity, the mean over the scenes
/// where its mask is non-empty of the mean backbone feature inside the mask.
/// `scenes` and `features` are parallel; masks naming unknown scenes are
/// ignored. Throws EmptyMaskError when an entity has no usable mask.
Matrix aggregate_entity_features(const std::vector<SceneBundle>& scenes, const std::vector<Matrix>& features,
                                 const std::vector<EntityRecord>& entities);

/// X X^T.
Matrix gram(const Matrix& x);

/// |G(F) - G(target)|_F^2 and its gradient 4 (G(F) - G(target)) F.
double gram_loss(const Matrix& f, const Matrix& target_gram, Matrix* grad = nullptr);

struct AlignConfig {
  int steps = 500;
  double lr = 1e-2;
  int max_halvings = 60;
};

/// Gradient descent with backtracking (the step is halved whenever the loss
/// would increase) from `initial` towards the Gram matrix of the
/// row-normalized `text_embeddings`. Throws DivergenceError when the loss
/// exceeds 1e3 times its initial value.
SemanticBank align_gram(const Matrix& initial, const Matrix& text_embeddings, const AlignConfig& cfg = {});

/// One contrastive batch drawn from the bank.
struct EntityBatchSample {
  std::vector<std::size_t> entity_indices;  // rows of the bank, sorted
  Matrix prototypes;                        // normalized bank rows, batch order
  std::vector<double> weights;              // per batch slot
  std::vector<std::int32_t> classes;        // per batch slot
};

/// w_c = 1 / sqrt(n_c).
std::vector<double> balance_weights(const std::vector<std::size_t>& class_counts);

/// Uniform sample without replacement. Without a class hint every entity is
/// its own class, so every weight is 1.
EntityBatchSample sample_entity_batch(const SemanticBank& bank, std::size_t batch_size, std::uint64_t seed,
                                      const std::optional<std::vector<std::int32_t>>& class_hint = std::nullopt);

struct ContrastiveResult {
  double loss = 0.0;
  Matrix grad_anchors;  // same shape as the anchors
};

/// InfoNCE over the batch. Anchor i pairs with batch slot `positive_slot[i]`;
/// every other slot is a negative. The loss is the mean over anchors of
/// -w log softmax, with the sum over anchors and the anchor count exposed
/// separately through `normalizer` (defaults to the anchor count).
ContrastiveResult entity_contrastive_loss(const Matrix& anchors, const std::vector<std::size_t>& positive_slot,
                                          const EntityBatchSample& batch, double tau,
                                          std::optional<double> normalizer = std::nullopt);

}  // namespace langtail::bank
