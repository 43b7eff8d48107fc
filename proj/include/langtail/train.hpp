#pragma once

#include "langtail/backbone.hpp"
#include "langtail/bank.hpp"
#include "langtail/cluster.hpp"
#include "langtail/data_model.hpp"
#include "langtail/eval.hpp"
#include "langtail/model.hpp"
#include "langtail/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace langtail::train {

struct TrainConfig {
  double lambda = 0.9;
  cluster::GranularitySet granularities{{120, 80, 20}};
  int epochs = 200;
  std::size_t batch_scenes = 8;
  double lr0 = 1e-4;
  double lr_min = 1e-8;
  double poly_power = 0.9;
  int recluster_every = 10;
  double tau = 0.07;
  std::uint64_t seed = 0;

  std::vector<std::size_t> hidden{256};
  std::size_t feature_dim = 384;
  int warmup_epochs = 5;
  bool global_branch = true;
  bool freeze_spectral = false;
  std::size_t s_prime = 64;
  bool normalize_frequency = false;
  std::size_t entity_batch = 64;
  int align_steps = 500;
  double align_lr = 1e-2;
  bool class_hint = false;
  std::size_t sample_cap = cluster::kDefaultSampleCap;
  AdamWConfig adamw{};
  std::size_t threads = 1;
  eval::UnmatchedPolicy unmatched = eval::UnmatchedPolicy::merge;
  bool dump_spectral = false;

  void validate() const;
};

/// Pseudo labels of one branch: per level, a head initialised from the
/// cluster centroids in backbone feature space and the superpoint labels.
struct BranchLabels {
  ClusterModel model;
  std::vector<LabelVector> superpoint_labels;  // one per level
};

struct PseudoLabels {
  BranchLabels local;
  std::optional<BranchLabels> global;
};

/// Local branch: Ward over `superpoint_features`. Global branch (when
/// `spectral_features` is given): Ward over its rows, heads from the means
/// of `superpoint_features` inside each global cluster.
PseudoLabels build_pseudo_labels(const Matrix& superpoint_features, const Matrix* spectral_features,
                                 const cluster::GranularitySet& g, std::size_t sample_cap, std::uint64_t seed);

/// Superpoint labels broadcast to points, one LabelVector per scene.
std::vector<LabelVector> broadcast_labels(const LabelVector& superpoint_labels, const std::vector<SceneBundle>& scenes);

struct LossReport {
  double local = 0.0;
  double global = 0.0;
  double entity = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

/// Everything the loop mutates.
struct TrainState {
  Backbone backbone;
  AdamW backbone_opt;
  std::vector<ClusterModel> heads;  // local first, then global when present
  AdamW head_opt;
  long step = 0;
  long total_steps = 0;
};

/// Entities keyed for the contrastive term.
struct EntityIndex {
  const bank::SemanticBank* bank = nullptr;
  std::optional<std::vector<std::int32_t>> class_hint;
  /// Per scene: (bank row, point indices) for every entity with a mask there.
  std::vector<std::vector<std::pair<std::size_t, std::vector<std::uint64_t>>>> by_scene;
};

EntityIndex index_entities(const bank::SemanticBank& bank, const std::vector<EntityRecord>& entities,
                           const std::vector<SceneBundle>& scenes,
                           std::optional<std::vector<std::int32_t>> class_hint = std::nullopt);

/// Per-scene labels for each head, parallel to TrainState::heads.
using PointLabels = std::vector<std::vector<std::vector<LabelVector>>>;  // head, level, scene

PointLabels point_labels(const PseudoLabels& pl, const std::vector<SceneBundle>& scenes);

/// Scene order for an epoch.
std::vector<std::size_t> epoch_order(std::uint64_t seed, long epoch, std::size_t n_scenes);

/// One pass over the corpus in mini-batches of `batch_scenes` scenes.
/// Per scene the losses are sums normalised by batch-wide counts; scene
/// contributions are combined by a fixed pairwise tree.
LossReport train_epoch(TrainState& state, const std::vector<SceneBundle>& scenes, const PointLabels& labels,
                       const EntityIndex* entities, const TrainConfig& cfg, long epoch);

/// Distillation-only epoch at constant lr0. Returns the mean loss.
double warmup_epoch(TrainState& state, const std::vector<SceneBundle>& scenes, const TrainConfig& cfg, long epoch);

/// Pairwise-tree sum over [0, n) of `value(i)`.
template <typename T>
T pairwise_sum(std::size_t lo, std::size_t hi, const std::function<T(std::size_t)>& value,
               const std::function<void(T&, const T&)>& add) {
  if (hi - lo == 1) return value(lo);
  const auto mid = lo + (hi - lo) / 2;
  T left = pairwise_sum<T>(lo, mid, value, add);
  const T right = pairwise_sum<T>(mid, hi, value, add);
  add(left, right);
  return left;
}

/// Backbone features for every scene.
std::vector<Matrix> extract_features(const Backbone& b, const std::vector<SceneBundle>& scenes);

/// Superpoint features of all scenes stacked in scene order.
Matrix pool_corpus(const std::vector<Matrix>& features, const std::vector<SceneBundle>& scenes);

struct PipelineResult {
  Backbone backbone;
  std::vector<ClusterModel> models;
  std::vector<LossReport> losses;   // per main epoch
  std::vector<double> warmup_losses;
  std::optional<bank::SemanticBank> bank;
  LabelVector predictions;          // all points, scene order
  std::optional<eval::EvalReport> report;
};

struct Corpus {
  std::vector<SceneBundle> scenes;
  std::vector<EntityRecord> entities;
  std::vector<std::int32_t> entity_classes;  // empty unless the bank has classes.tsv
};

Corpus load_corpus(const std::filesystem::path& corpus_dir, const std::optional<std::filesystem::path>& bank_dir);

/// Builds the aligned semantic bank from the current backbone.
bank::SemanticBank build_bank(const Backbone& b, const Corpus& corpus, const TrainConfig& cfg);

/// Warmup, bank, then rounds of (pool, spectral, pseudo labels, train).
/// When `out_dir` is set, writes checkpoint.ltck before every round and at
/// the end, plus losses.tsv, pred.ltlb and report.tsv.
PipelineResult run_pipeline(const TrainConfig& cfg, const Corpus& corpus,
                            const std::optional<std::filesystem::path>& out_dir);

// Checkpoint: "LTCK", u32 version, u64 n_tensors, then per tensor u32 name
// length + name bytes, then the tensors as LTFM blocks in the same order.
struct Checkpoint {
  Backbone backbone;
  std::vector<ClusterModel> models;
};

void write_checkpoint(const std::filesystem::path& path, const Backbone& b, const std::vector<ClusterModel>& models);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::string format_losses(const std::vector<LossReport>& losses);

}  // namespace langtail::train
