#include "langtail/bank.hpp"

#include "langtail/errors.hpp"
#include "langtail/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

namespace langtail::bank {

Matrix aggregate_entity_features(const std::vector<SceneBundle>& scenes, const std::vector<Matrix>& features,
                                 const std::vector<EntityRecord>& entities) {
  if (scenes.size() != features.size()) throw ShapeError("aggregate_entity_features: one feature matrix per scene");
  if (entities.empty()) throw DataError("aggregate_entity_features: no entities");
  std::map<std::string, std::size_t> scene_index;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (static_cast<std::size_t>(features[i].rows()) != scenes[i].n_points()) {
      throw ShapeError("aggregate_entity_features: feature rows do not match scene " + scenes[i].scene_id);
    }
    scene_index.emplace(scenes[i].scene_id, i);
  }
  const auto dim = features.front().cols();
  Matrix out(static_cast<Eigen::Index>(entities.size()), dim);
  for (std::size_t t = 0; t < entities.size(); ++t) {
    RowVector outer = RowVector::Zero(dim);
    std::size_t used = 0;
    for (const auto& mask : entities[t].masks) {
      const auto it = scene_index.find(mask.scene_id);
      if (it == scene_index.end() || mask.points.empty()) continue;
      const auto& f = features[it->second];
      RowVector inner = RowVector::Zero(dim);
      for (auto p : mask.points) {
        if (p >= static_cast<std::uint64_t>(f.rows())) {
          throw DataError("entity " + std::to_string(entities[t].entity_id) + ": mask index out of range");
        }
        inner += f.row(static_cast<Eigen::Index>(p));
      }
      outer += inner / static_cast<double>(mask.points.size());
      ++used;
    }
    if (used == 0) throw EmptyMaskError("entity " + std::to_string(entities[t].entity_id) + " has no non-empty mask");
    out.row(static_cast<Eigen::Index>(t)) = outer / static_cast<double>(used);
  }
  return out;
}

Matrix gram(const Matrix& x) { return x * x.transpose(); }

double gram_loss(const Matrix& f, const Matrix& target_gram, Matrix* grad) {
  const Matrix diff = gram(f) - target_gram;
  if (grad) *grad = 4.0 * diff * f;
  return diff.squaredNorm();
}

SemanticBank align_gram(const Matrix& initial, const Matrix& text_embeddings, const AlignConfig& cfg) {
  if (initial.rows() != text_embeddings.rows()) {
    throw ShapeError("align_gram: " + std::to_string(initial.rows()) + " point rows vs " +
                     std::to_string(text_embeddings.rows()) + " text rows");
  }
  if (cfg.steps < 1) throw ConfigError("align_gram: steps must be >= 1");
  if (!(cfg.lr > 0.0)) throw ConfigError("align_gram: lr must be positive");
  check_feature_matrix(initial, "align_gram initial features");

  SemanticBank bank;
  bank.text_embeddings = text_embeddings;
  const Matrix target = gram(normalize_rows(text_embeddings));

  Matrix f = initial;
  Matrix grad;
  double loss = gram_loss(f, target, &grad);
  const double initial_loss = loss;
  bank.alignment_loss_trace.push_back(loss);
  double lr = cfg.lr;
  for (int step = 0; step < cfg.steps && loss > 0.0; ++step) {
    Matrix candidate = f - lr * grad;
    double candidate_loss = gram_loss(candidate, target);
    int halvings = 0;
    while (!(candidate_loss <= loss) && halvings < cfg.max_halvings) {
      lr *= 0.5;
      ++halvings;
      candidate = f - lr * grad;
      candidate_loss = gram_loss(candidate, target);
    }
    if (!std::isfinite(candidate_loss) || candidate_loss > 1e3 * initial_loss) {
      std::ostringstream msg;
      msg << "align_gram: loss " << candidate_loss << " exceeds 1e3 x initial " << initial_loss << "; use a smaller lr";
      throw DivergenceError(msg.str());
    }
    if (!(candidate_loss <= loss)) break;  // no descent possible at machine precision
    f = std::move(candidate);
    loss = gram_loss(f, target, &grad);
    bank.alignment_loss_trace.push_back(loss);
  }
  bank.prototypes = std::move(f);
  return bank;
}

std::vector<double> balance_weights(const std::vector<std::size_t>& class_counts) {
  std::vector<double> w(class_counts.size());
  for (std::size_t c = 0; c < class_counts.size(); ++c) {
    if (class_counts[c] < 1) throw ConfigError("balance_weights: class counts must be >= 1");
    w[c] = 1.0 / std::sqrt(static_cast<double>(class_counts[c]));
  }
  return w;
}

EntityBatchSample sample_entity_batch(const SemanticBank& bank, std::size_t batch_size, std::uint64_t seed,
                                      const std::optional<std::vector<std::int32_t>>& class_hint) {
  const auto t = bank.size();
  if (batch_size < 1 || batch_size > t) {
    throw ConfigError("sample_entity_batch: batch size " + std::to_string(batch_size) + " must be in [1, " +
                      std::to_string(t) + "]");
  }
  if (class_hint && class_hint->size() != t) throw ShapeError("sample_entity_batch: class hint length must equal T");

  EntityBatchSample s;
  std::vector<std::size_t> idx(t);
  std::iota(idx.begin(), idx.end(), 0);
  CounterRng rng(seed, t, Stream::entity_batch);
  for (std::size_t i = 0; i < batch_size; ++i) std::swap(idx[i], idx[i + rng.below(t - i)]);
  idx.resize(batch_size);
  std::sort(idx.begin(), idx.end());
  s.entity_indices = idx;

  s.prototypes.resize(static_cast<Eigen::Index>(batch_size), bank.prototypes.cols());
  for (std::size_t i = 0; i < batch_size; ++i) {
    s.prototypes.row(static_cast<Eigen::Index>(i)) = bank.prototypes.row(static_cast<Eigen::Index>(idx[i]));
  }
  s.prototypes = normalize_rows(s.prototypes);

  // Class of an entity is its hint, or its own row when no hint is given.
  s.classes.resize(batch_size);
  std::map<std::int64_t, std::size_t> counts;
  std::vector<std::int64_t> keys(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    keys[i] = class_hint ? static_cast<std::int64_t>((*class_hint)[idx[i]]) : -1 - static_cast<std::int64_t>(idx[i]);
    s.classes[i] = class_hint ? (*class_hint)[idx[i]] : static_cast<std::int32_t>(idx[i]);
    ++counts[keys[i]];
  }
  s.weights.resize(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) s.weights[i] = balance_weights({counts[keys[i]]})[0];
  return s;
}

ContrastiveResult entity_contrastive_loss(const Matrix& anchors, const std::vector<std::size_t>& positive_slot,
                                          const EntityBatchSample& batch, double tau, std::optional<double> normalizer) {
  if (!(tau > 0.0)) throw ConfigError("entity_contrastive_loss: tau must be positive");
  if (static_cast<std::size_t>(anchors.rows()) != positive_slot.size()) {
    throw ShapeError("entity_contrastive_loss: one positive slot per anchor");
  }
  if (anchors.cols() != batch.prototypes.cols()) throw ShapeError("entity_contrastive_loss: feature dimension mismatch");
  ContrastiveResult r;
  r.grad_anchors = Matrix::Zero(anchors.rows(), anchors.cols());
  if (anchors.rows() == 0) return r;
  const double norm = normalizer.value_or(static_cast<double>(anchors.rows()));
  const Matrix logits = (anchors * batch.prototypes.transpose()) / tau;  // M x B
  const auto b = logits.cols();
  for (Eigen::Index i = 0; i < anchors.rows(); ++i) {
    const auto pos = static_cast<Eigen::Index>(positive_slot[static_cast<std::size_t>(i)]);
    if (pos >= b) throw ShapeError("entity_contrastive_loss: positive slot out of range");
    const double w = batch.weights[static_cast<std::size_t>(pos)];
    const double mx = logits.row(i).maxCoeff();
    const RowVector e = (logits.row(i).array() - mx).exp().matrix();
    const double z = e.sum();
    r.loss += w * (std::log(z) + mx - logits(i, pos));
    // d/da: (sum_j p_j b_j - b_pos) / tau
    RowVector p = e / z;
    p(pos) -= 1.0;
    r.grad_anchors.row(i) = (w / (tau * norm)) * (p * batch.prototypes);
  }
  r.loss /= norm;
  return r;
}

}  // namespace langtail::bank
