#include "langtail/synth.hpp"

#include "langtail/cluster.hpp"
#include "langtail/errors.hpp"
#include "langtail/io.hpp"
#include "langtail/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace langtail::synth {

namespace {

/// Class appearance centres with pairwise distance >= separation.
Matrix class_centres(const SynthConfig& cfg) {
  const auto app_dims = static_cast<Eigen::Index>(cfg.input_dim - cfg.spatial_dims);
  const auto k = static_cast<Eigen::Index>(cfg.n_classes);
  Matrix centres(k, app_dims);
  CounterRng rng(cfg.seed, 0, Stream::class_layout);
  // Random directions scaled so neighbours sit at about the separation;
  // rejection keeps every pair at least `separation` apart.
  double radius = cfg.class_separation;
  for (Eigen::Index c = 0; c < k; ++c) {
    for (int attempt = 0;; ++attempt) {
      RowVector candidate(app_dims);
      for (Eigen::Index d = 0; d < app_dims; ++d) candidate(d) = rng.uniform(-radius, radius);
      bool ok = true;
      for (Eigen::Index o = 0; o < c && ok; ++o) ok = (centres.row(o) - candidate).norm() >= cfg.class_separation;
      if (ok) {
        centres.row(c) = candidate;
        break;
      }
      if (attempt % 200 == 199) radius *= 1.25;
    }
  }
  return centres;
}

Vector random_unit(CounterRng& rng, std::size_t dim) {
  Vector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  return v / v.norm();
}

Matrix class_embeddings(const SynthConfig& cfg) {
  Matrix e(static_cast<Eigen::Index>(cfg.n_classes), static_cast<Eigen::Index>(cfg.embedding_dim));
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    CounterRng rng(cfg.seed, c, Stream::entities);
    e.row(static_cast<Eigen::Index>(c)) = random_unit(rng, cfg.embedding_dim).transpose();
  }
  return e;
}

Matrix distill_projection(const SynthConfig& cfg) {
  CounterRng rng(cfg.seed, 0, Stream::distill);
  Matrix w(static_cast<Eigen::Index>(cfg.input_dim), static_cast<Eigen::Index>(cfg.distill_dim));
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.normal() / std::sqrt(static_cast<double>(cfg.input_dim));
  }
  return w;
}

std::string class_name(std::size_t c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "category %02zu", c);
  return buf;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
  if (points_per_scene < n_classes) throw ConfigError("points_per_scene must be >= n_classes");
  if (n_scenes < 1) throw ConfigError("n_scenes must be >= 1");
  if (!(zipf_exponent >= 0.0)) throw ConfigError("zipf_exponent must be >= 0");
  if (!(class_separation > 0.0)) throw ConfigError("class_separation must be > 0");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  if (!(entity_alias_rate >= 0.0 && entity_alias_rate <= 1.0)) throw ConfigError("entity_alias_rate must be in [0, 1]");
  if (spatial_dims >= input_dim) throw ConfigError("input_dim must exceed spatial_dims");
  if (instance_points < 1) throw ConfigError("instance_points must be >= 1");
  if (embedding_dim < 1) throw ConfigError("embedding_dim must be >= 1");
  if (!(spatial_extent >= 0.0)) throw ConfigError("spatial_extent must be >= 0");
}

std::vector<std::size_t> zipf_class_counts(std::size_t n_classes, double exponent, std::size_t total) {
  if (n_classes < 1) throw ConfigError("zipf_class_counts: need at least one class");
  if (total < n_classes) {
    throw ConfigError("zipf_class_counts: total " + std::to_string(total) + " < n_classes " + std::to_string(n_classes));
  }
  std::vector<double> w(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) w[c] = std::pow(static_cast<double>(c + 1), -exponent);
  const double z = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<std::size_t> counts(n_classes);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double exact = static_cast<double>(total) * w[c] / z;
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[remainders[i % n_classes].second];
  // Every class keeps at least one point, taken from the largest class.
  for (std::size_t c = 0; c < n_classes; ++c) {
    while (counts[c] == 0) {
      const auto big = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      --counts[big];
      ++counts[c];
    }
  }
  return counts;
}

std::string scene_name(std::size_t scene_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%04zu", scene_index);
  return buf;
}

GeneratedScene generate_scene(const SynthConfig& cfg, std::size_t scene_index) {
  cfg.validate();
  const auto counts = zipf_class_counts(cfg.n_classes, cfg.zipf_exponent, cfg.points_per_scene);
  const Matrix centres = class_centres(cfg);
  const Matrix embeddings = class_embeddings(cfg);
  const auto d = static_cast<Eigen::Index>(cfg.input_dim);
  const auto sd = static_cast<Eigen::Index>(cfg.spatial_dims);

  CounterRng layout(cfg.seed, scene_index, Stream::scene_layout);
  CounterRng noise(cfg.seed, scene_index, Stream::points);
  CounterRng sub(cfg.seed, scene_index, Stream::superpoints);
  CounterRng ent(cfg.seed, scene_index + 1, Stream::entities);

  GeneratedScene out;
  auto& scene = out.scene;
  scene.scene_id = scene_name(scene_index);
  scene.points.resize(static_cast<Eigen::Index>(cfg.points_per_scene), d);
  std::vector<std::int32_t> labels;
  std::vector<std::uint32_t> superpoint_ids;
  labels.reserve(cfg.points_per_scene);
  superpoint_ids.reserve(cfg.points_per_scene);

  Eigen::Index row = 0;
  std::uint32_t next_superpoint = 0;
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    const auto n_inst = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(counts[c]) / static_cast<double>(cfg.instance_points))));
    const auto instances = std::min(n_inst, counts[c]);
    for (std::size_t inst = 0; inst < instances; ++inst) {
      const auto size = counts[c] / instances + (inst < counts[c] % instances ? 1 : 0);
      RowVector position(sd);
      for (Eigen::Index j = 0; j < sd; ++j) position(j) = layout.uniform(0.0, cfg.spatial_extent);
      const Eigen::Index first = row;
      for (std::size_t p = 0; p < size; ++p, ++row) {
        for (Eigen::Index j = 0; j < d; ++j) {
          const double centre = j < sd ? position(j) : centres(static_cast<Eigen::Index>(c), j - sd);
          scene.points(row, j) = centre + cfg.noise_sigma * noise.normal();
        }
        labels.push_back(static_cast<std::int32_t>(c));
      }

      // Superpoints: spatial k-means into 2-4 sub-blobs of this instance.
      const auto want = static_cast<std::size_t>(2 + sub.below(3));
      const auto k = std::min(want, size);
      const Matrix inst_points = scene.points.middleRows(first, static_cast<Eigen::Index>(size));
      const auto km = cluster::kmeans(inst_points, k, sub.next_u64(), 50);
      std::vector<std::uint32_t> local(size);
      for (std::size_t p = 0; p < size; ++p) local[p] = static_cast<std::uint32_t>(km.assignments[p]);
      const auto dense = SuperpointPartition::densify(local);
      for (std::size_t p = 0; p < size; ++p) superpoint_ids.push_back(next_superpoint + dense[p]);
      next_superpoint += static_cast<std::uint32_t>(dense.n_superpoints());

      // One entity per instance, plus an alias with probability alias_rate.
      std::vector<std::uint64_t> mask(size);
      std::iota(mask.begin(), mask.end(), static_cast<std::uint64_t>(first));
      const auto id = static_cast<std::uint64_t>(out.entities.size());
      EntityRecord primary;
      primary.entity_id = id;
      primary.text = class_name(c) + " #" + std::to_string(inst);
      primary.text_embedding = embeddings.row(static_cast<Eigen::Index>(c)).transpose();
      primary.masks.push_back({scene.scene_id, mask});
      out.entities.push_back(std::move(primary));
      out.entity_classes.push_back(static_cast<std::int32_t>(c));
      const bool alias = ent.uniform() < cfg.entity_alias_rate;
      const Vector perturbation = cfg.alias_perturbation * random_unit(ent, cfg.embedding_dim);
      if (alias) {
        EntityRecord twin;
        twin.entity_id = id + 1;
        twin.text = "another " + class_name(c) + " #" + std::to_string(inst);
        twin.text_embedding = embeddings.row(static_cast<Eigen::Index>(c)).transpose() + perturbation;
        twin.masks.push_back({scene.scene_id, mask});
        out.entities.push_back(std::move(twin));
        out.entity_classes.push_back(static_cast<std::int32_t>(c));
      }
      ++out.n_instances;
    }
  }
  scene.superpoints = SuperpointPartition(std::move(superpoint_ids));
  scene.gt_labels = LabelVector(std::move(labels));
  if (cfg.distill_dim > 0) {
    scene.distill_targets = Matrix(scene.points * distill_projection(cfg));
  }
  scene.validate();
  return out;
}

Corpus generate_corpus(const SynthConfig& cfg) {
  cfg.validate();
  Corpus corpus;
  for (std::size_t s = 0; s < cfg.n_scenes; ++s) {
    auto g = generate_scene(cfg, s);
    const auto offset = static_cast<std::uint64_t>(corpus.entities.size());
    for (auto& e : g.entities) {
      e.entity_id += offset;
      corpus.entities.push_back(std::move(e));
    }
    corpus.entity_classes.insert(corpus.entity_classes.end(), g.entity_classes.begin(), g.entity_classes.end());
    corpus.scenes.push_back(std::move(g.scene));
  }
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "scenes");
  std::ostringstream manifest;
  LabelVector all;
  for (const auto& s : corpus.scenes) {
    const auto sd = dir / "scenes" / s.scene_id;
    fs::create_directories(sd);
    io::write_feature_matrix(sd / "points.ltfm", s.points);
    io::write_superpoints(sd / "superpoints.ltsp", s.superpoints);
    if (s.gt_labels) {
      io::write_labels(sd / "labels.ltlb", *s.gt_labels);
      all.labels.insert(all.labels.end(), s.gt_labels->labels.begin(), s.gt_labels->labels.end());
    }
    if (s.distill_targets) io::write_feature_matrix(sd / "distill.ltfm", *s.distill_targets);
    manifest << s.scene_id << '\t' << s.n_points() << '\t' << s.superpoints.n_superpoints() << '\n';
  }
  io::write_text_file(dir / "manifest.tsv", manifest.str());
  if (!all.labels.empty()) io::write_labels(dir / "labels.ltlb", all);
  io::write_entity_bank(dir / "bank", corpus.entities);
  if (!corpus.entity_classes.empty()) {
    std::ostringstream classes;
    for (std::size_t t = 0; t < corpus.entities.size(); ++t) {
      classes << corpus.entities[t].entity_id << '\t' << corpus.entity_classes[t] << '\n';
    }
    io::write_text_file(dir / "bank" / "classes.tsv", classes.str());
  }
}

}  // namespace langtail::synth
