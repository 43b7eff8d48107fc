#pragma once

#include "langtail/data_model.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace langtail::synth {

struct SynthConfig {
  std::size_t n_classes = 8;
  std::size_t points_per_scene = 2000;
  std::size_t n_scenes = 10;
  double zipf_exponent = 1.2;
  std::size_t input_dim = 6;
  double class_separation = 2.0;
  double noise_sigma = 0.3;
  double entity_alias_rate = 0.25;
  std::uint64_t seed = 0;

  /// Leading input dims that carry instance placement rather than class
  /// appearance. Instances are placed uniformly in [0, spatial_extent]^d.
  std::size_t spatial_dims = 3;
  double spatial_extent = 4.0;
  /// Target instance size; a class gets round(count / instance_points)
  /// instances per scene, at least one.
  std::size_t instance_points = 100;
  /// Width of the unprojected 2D targets; 0 disables distill.ltfm.
  std::size_t distill_dim = 0;
  std::size_t embedding_dim = 512;
  double alias_perturbation = 0.05;

  /// Throws ConfigError on an invalid combination.
  void validate() const;
};

/// Per-class counts proportional to (c + 1)^-exponent, summing to `total`,
/// every class at least 1 (largest-remainder rounding, ties to lower class).
std::vector<std::size_t> zipf_class_counts(std::size_t n_classes, double exponent, std::size_t total);

struct GeneratedScene {
  SceneBundle scene;
  std::vector<EntityRecord> entities;  // ids local to the scene, from 0
  std::vector<std::int32_t> entity_classes;
  std::size_t n_instances = 0;
};

std::string scene_name(std::size_t scene_index);

GeneratedScene generate_scene(const SynthConfig& cfg, std::size_t scene_index);

struct Corpus {
  std::vector<SceneBundle> scenes;
  std::vector<EntityRecord> entities;  // corpus-wide ids
  std::vector<std::int32_t> entity_classes;
};

Corpus generate_corpus(const SynthConfig& cfg);

/// scenes/<id>/{points.ltfm, superpoints.ltsp, labels.ltlb[, distill.ltfm]},
/// bank/{entities.tsv, embeddings.ltfm, masks/}, manifest.tsv and the
/// concatenated labels.ltlb.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);

}  // namespace langtail::synth
