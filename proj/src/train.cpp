#include "langtail/train.hpp"

#include "langtail/errors.hpp"
#include "langtail/io.hpp"
#include "langtail/losses.hpp"
#include "langtail/rng.hpp"
#include "langtail/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

namespace langtail::train {

namespace fs = std::filesystem;

namespace {

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Head tensors in a fixed order for the optimizer.
std::vector<Matrix*> head_tensors(std::vector<ClusterModel>& heads) {
  std::vector<Matrix*> out;
  for (auto& h : heads) {
    for (auto& l : h.levels) out.push_back(&l.mu);
  }
  return out;
}

struct SceneContribution {
  Backbone backbone_grad;
  std::vector<Matrix> head_grads;  // flattened in head_tensors order
  double local = 0.0;
  double global = 0.0;
  double entity = 0.0;
};

void add_contribution(SceneContribution& a, const SceneContribution& b) {
  accumulate(a.backbone_grad, b.backbone_grad);
  for (std::size_t i = 0; i < a.head_grads.size(); ++i) a.head_grads[i] += b.head_grads[i];
  a.local += b.local;
  a.global += b.global;
  a.entity += b.entity;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(lr0 > lr_min && lr_min > 0.0)) throw ConfigError("need lr0 > lr_min > 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_scenes < 1) throw ConfigError("batch_scenes must be >= 1");
  if (recluster_every < 1) throw ConfigError("recluster_every must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (s_prime < 1) throw ConfigError("s_prime must be >= 1");
  if (entity_batch < 1) throw ConfigError("entity_batch must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (granularities.levels.empty()) throw ConfigError("granularities must not be empty");
}

PseudoLabels build_pseudo_labels(const Matrix& superpoint_features, const Matrix* spectral_features,
                                 const cluster::GranularitySet& g, std::size_t sample_cap, std::uint64_t seed) {
  PseudoLabels pl;
  pl.local.model.branch = Branch::local;
  for (auto& level : cluster::multi_granularity_labels(superpoint_features, g, sample_cap, seed)) {
    pl.local.model.levels.push_back({level.k, std::move(level.centroids)});
    pl.local.superpoint_labels.push_back(std::move(level.labels));
  }
  if (spectral_features) {
    if (spectral_features->rows() != superpoint_features.rows()) {
      throw ShapeError("build_pseudo_labels: spectral and superpoint features cover different superpoints");
    }
    BranchLabels global;
    global.model.branch = Branch::global;
    for (auto& level : cluster::multi_granularity_labels(*spectral_features, g, sample_cap, seed)) {
      // Heads act on backbone features, so centroids live in that space.
      global.model.levels.push_back({level.k, cluster::cluster_means(superpoint_features, level.labels, level.k)});
      global.superpoint_labels.push_back(std::move(level.labels));
    }
    pl.global = std::move(global);
  }
  return pl;
}

std::vector<LabelVector> broadcast_labels(const LabelVector& superpoint_labels, const std::vector<SceneBundle>& scenes) {
  std::vector<LabelVector> out;
  std::size_t offset = 0;
  for (const auto& s : scenes) {
    LabelVector l;
    l.labels.resize(s.n_points());
    for (std::size_t i = 0; i < s.n_points(); ++i) l[i] = superpoint_labels[offset + s.superpoints[i]];
    offset += s.superpoints.n_superpoints();
    out.push_back(std::move(l));
  }
  if (offset != superpoint_labels.size()) throw ShapeError("broadcast_labels: superpoint count mismatch");
  return out;
}

PointLabels point_labels(const PseudoLabels& pl, const std::vector<SceneBundle>& scenes) {
  PointLabels out;
  auto add_branch = [&](const BranchLabels& b) {
    std::vector<std::vector<LabelVector>> levels;
    for (const auto& l : b.superpoint_labels) levels.push_back(broadcast_labels(l, scenes));
    out.push_back(std::move(levels));
  };
  add_branch(pl.local);
  if (pl.global) add_branch(*pl.global);
  return out;
}

EntityIndex index_entities(const bank::SemanticBank& bank, const std::vector<EntityRecord>& entities,
                           const std::vector<SceneBundle>& scenes, std::optional<std::vector<std::int32_t>> class_hint) {
  if (bank.size() != entities.size()) throw ShapeError("index_entities: bank and entity list differ in length");
  EntityIndex idx;
  idx.bank = &bank;
  idx.class_hint = std::move(class_hint);
  idx.by_scene.resize(scenes.size());
  std::map<std::string, std::size_t> scene_index;
  for (std::size_t i = 0; i < scenes.size(); ++i) scene_index.emplace(scenes[i].scene_id, i);
  for (std::size_t t = 0; t < entities.size(); ++t) {
    for (const auto& m : entities[t].masks) {
      const auto it = scene_index.find(m.scene_id);
      if (it == scene_index.end() || m.points.empty()) continue;
      idx.by_scene[it->second].emplace_back(t, m.points);
    }
  }
  return idx;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, long epoch, std::size_t n_scenes) {
  std::vector<std::size_t> order(n_scenes);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(seed, static_cast<std::uint64_t>(epoch), Stream::shuffle);
  rng.shuffle(order);
  return order;
}

LossReport train_epoch(TrainState& state, const std::vector<SceneBundle>& scenes, const PointLabels& labels,
                       const EntityIndex* entities, const TrainConfig& cfg, long epoch) {
  if (labels.size() != state.heads.size()) throw ShapeError("train_epoch: one label set per head");
  const auto order = epoch_order(cfg.seed, epoch, scenes.size());
  const bool use_entities = entities && entities->bank && cfg.lambda > 0.0;

  LossReport report;
  std::size_t steps = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_scenes) {
    const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_scenes)));
    const double lr = poly_lr(state.step, state.total_steps, cfg.lr0, cfg.lr_min, cfg.poly_power);
    if (steps == 0) report.lr = lr;

    // Batch-wide normalizers.
    std::vector<std::vector<double>> ce_norm(state.heads.size());
    for (std::size_t h = 0; h < state.heads.size(); ++h) {
      for (std::size_t l = 0; l < state.heads[h].levels.size(); ++l) {
        std::size_t counted = 0;
        for (auto s : batch) {
          for (auto v : labels[h][l][s].labels) counted += v >= 0 ? 1 : 0;
        }
        if (counted == 0) throw EmptyBatchError("train_epoch: mini-batch has no labelled points");
        ce_norm[h].push_back(static_cast<double>(counted));
      }
    }

    std::optional<bank::EntityBatchSample> sample;
    std::vector<std::int64_t> slot_of;
    double anchor_norm = 0.0;
    if (use_entities) {
      const auto& bk = *entities->bank;
      const auto size = std::min(cfg.entity_batch, bk.size());
      sample = bank::sample_entity_batch(bk, size, splitmix64(cfg.seed) ^ static_cast<std::uint64_t>(state.step),
                                         entities->class_hint);
      slot_of.assign(bk.size(), -1);
      for (std::size_t i = 0; i < sample->entity_indices.size(); ++i) {
        slot_of[sample->entity_indices[i]] = static_cast<std::int64_t>(i);
      }
      for (auto s : batch) {
        for (const auto& [row, pts] : entities->by_scene[s]) anchor_norm += slot_of[row] >= 0 ? 1.0 : 0.0;
      }
    }

    std::vector<SceneContribution> contributions(batch.size());
    parallel_for(batch.size(), cfg.threads, [&](std::size_t bi) {
      const auto s = batch[bi];
      ForwardCache cache;
      const Matrix y = backbone_forward(state.backbone, scenes[s].points, &cache);
      Matrix grad_y = Matrix::Zero(y.rows(), y.cols());
      SceneContribution& c = contributions[bi];
      for (std::size_t h = 0; h < state.heads.size(); ++h) {
        for (std::size_t l = 0; l < state.heads[h].levels.size(); ++l) {
          auto r = head_ce_loss(y, state.heads[h].levels[l].mu, labels[h][l][s], ce_norm[h][l]);
          (state.heads[h].branch == Branch::local ? c.local : c.global) += r.loss;
          grad_y += r.grad_features;
          c.head_grads.push_back(std::move(r.grad_mu));
        }
      }
      if (sample && anchor_norm > 0.0) {
        std::vector<std::size_t> slots;
        std::vector<const std::vector<std::uint64_t>*> masks;
        for (const auto& [row, pts] : entities->by_scene[s]) {
          if (slot_of[row] < 0) continue;
          slots.push_back(static_cast<std::size_t>(slot_of[row]));
          masks.push_back(&pts);
        }
        if (!slots.empty()) {
          Matrix pooled(static_cast<Eigen::Index>(slots.size()), y.cols());
          for (std::size_t a = 0; a < slots.size(); ++a) {
            RowVector sum = RowVector::Zero(y.cols());
            for (auto p : *masks[a]) sum += y.row(static_cast<Eigen::Index>(p));
            pooled.row(static_cast<Eigen::Index>(a)) = sum / static_cast<double>(masks[a]->size());
          }
          const Matrix anchors = normalize_rows(pooled);
          const auto r = bank::entity_contrastive_loss(anchors, slots, *sample, cfg.tau, anchor_norm);
          c.entity = r.loss;
          for (std::size_t a = 0; a < slots.size(); ++a) {
            const auto ai = static_cast<Eigen::Index>(a);
            const double norm = pooled.row(ai).norm();
            const RowVector g = r.grad_anchors.row(ai);
            const RowVector d_pooled = (g - anchors.row(ai) * anchors.row(ai).dot(g)) / norm;
            const RowVector d_point = cfg.lambda * d_pooled / static_cast<double>(masks[a]->size());
            for (auto p : *masks[a]) grad_y.row(static_cast<Eigen::Index>(p)) += d_point;
          }
        }
      }
      c.backbone_grad = backbone_backward(state.backbone, cache, grad_y).params;
    });

    auto total = pairwise_sum<SceneContribution>(
        0, contributions.size(), [&](std::size_t i) { return contributions[i]; }, add_contribution);

    const double step_total = total.local + total.global + cfg.lambda * total.entity;
    if (!std::isfinite(step_total)) {
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(state.step) +
                         " (local=" + fmt(total.local) + ", global=" + fmt(total.global) + ", entity=" +
                         fmt(total.entity) + ", lr=" + fmt(lr) + ")");
    }

    state.backbone_opt.step(backbone_tensors(state.backbone), backbone_tensors(std::as_const(total.backbone_grad)), lr);
    std::vector<const Matrix*> hg;
    for (const auto& m : total.head_grads) hg.push_back(&m);
    state.head_opt.step(head_tensors(state.heads), hg, lr);
    if (!state.backbone.all_finite()) throw NumericError("backbone parameters became non-finite at step " + std::to_string(state.step));

    report.local += total.local;
    report.global += total.global;
    report.entity += total.entity;
    ++state.step;
    ++steps;
  }
  if (steps > 0) {
    report.local /= static_cast<double>(steps);
    report.global /= static_cast<double>(steps);
    report.entity /= static_cast<double>(steps);
  }
  report.total = report.local + report.global + cfg.lambda * report.entity;
  return report;
}

double warmup_epoch(TrainState& state, const std::vector<SceneBundle>& scenes, const TrainConfig& cfg, long epoch) {
  // Warmup epochs use negative indices so their order never repeats a main epoch's.
  const auto order = epoch_order(cfg.seed, -1 - epoch, scenes.size());
  double loss = 0.0;
  std::size_t steps = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_scenes) {
    const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_scenes)));
    double rows = 0.0;
    for (auto s : batch) rows += static_cast<double>(scenes[s].n_points());
    std::vector<SceneContribution> contributions(batch.size());
    parallel_for(batch.size(), cfg.threads, [&](std::size_t bi) {
      const auto& scene = scenes[batch[bi]];
      ForwardCache cache;
      const Matrix y = backbone_forward(state.backbone, scene.points, &cache);
      const auto r = distill_warmup_loss(y, *scene.distill_targets, rows);
      contributions[bi].local = r.loss;
      contributions[bi].backbone_grad = backbone_backward(state.backbone, cache, r.grad_features).params;
    });
    auto total = pairwise_sum<SceneContribution>(
        0, contributions.size(), [&](std::size_t i) { return contributions[i]; }, add_contribution);
    if (!std::isfinite(total.local)) throw NumericError("non-finite distillation loss in warmup epoch " + std::to_string(epoch));
    state.backbone_opt.step(backbone_tensors(state.backbone), backbone_tensors(std::as_const(total.backbone_grad)), cfg.lr0);
    loss += total.local;
    ++steps;
  }
  return steps ? loss / static_cast<double>(steps) : 0.0;
}

std::vector<Matrix> extract_features(const Backbone& b, const std::vector<SceneBundle>& scenes) {
  std::vector<Matrix> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(backbone_forward(b, s.points));
  return out;
}

Matrix pool_corpus(const std::vector<Matrix>& features, const std::vector<SceneBundle>& scenes) {
  std::size_t total = 0;
  for (const auto& s : scenes) total += s.superpoints.n_superpoints();
  Matrix out(static_cast<Eigen::Index>(total), features.front().cols());
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto pooled = pool_by_superpoint(features[i], scenes[i].superpoints);
    out.middleRows(row, pooled.rows()) = pooled;
    row += pooled.rows();
  }
  return out;
}

Corpus load_corpus(const fs::path& corpus_dir, const std::optional<fs::path>& bank_dir) {
  Corpus c;
  const auto manifest = io::read_text_file(corpus_dir / "manifest.tsv");
  std::istringstream lines(manifest);
  std::string line;
  std::map<std::string, std::size_t> sizes;
  while (std::getline(lines, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto id = line.substr(0, line.find('\t'));
    const auto dir = corpus_dir / "scenes" / id;
    SceneBundle s;
    s.scene_id = id;
    s.points = io::read_feature_matrix(dir / "points.ltfm");
    s.superpoints = io::read_superpoints(dir / "superpoints.ltsp");
    if (fs::exists(dir / "distill.ltfm")) s.distill_targets = io::read_feature_matrix(dir / "distill.ltfm");
    if (fs::exists(dir / "labels.ltlb")) s.gt_labels = io::read_labels(dir / "labels.ltlb");
    s.validate();
    sizes.emplace(id, s.n_points());
    c.scenes.push_back(std::move(s));
  }
  if (c.scenes.empty()) throw DataError(corpus_dir.string() + ": manifest lists no scenes");
  if (bank_dir) {
    c.entities = io::read_entity_bank(*bank_dir, sizes);
    if (fs::exists(*bank_dir / "classes.tsv")) {
      std::map<std::uint64_t, std::int32_t> cls;
      std::istringstream cl(io::read_text_file(*bank_dir / "classes.tsv"));
      while (std::getline(cl, line)) {
        const auto tab = line.find('\t');
        if (line.empty() || tab == std::string::npos) continue;
        cls[std::stoull(line.substr(0, tab))] = static_cast<std::int32_t>(std::stol(line.substr(tab + 1)));
      }
      for (const auto& e : c.entities) {
        const auto it = cls.find(e.entity_id);
        if (it == cls.end()) throw DataError("classes.tsv has no entry for entity " + std::to_string(e.entity_id));
        c.entity_classes.push_back(it->second);
      }
    }
  }
  return c;
}

bank::SemanticBank build_bank(const Backbone& b, const Corpus& corpus, const TrainConfig& cfg) {
  if (corpus.entities.empty()) throw DataError("build_bank: corpus has no entities");
  const auto features = extract_features(b, corpus.scenes);
  const Matrix initial = bank::aggregate_entity_features(corpus.scenes, features, corpus.entities);
  Matrix text(static_cast<Eigen::Index>(corpus.entities.size()), corpus.entities.front().text_embedding.size());
  for (std::size_t t = 0; t < corpus.entities.size(); ++t) {
    if (corpus.entities[t].text_embedding.size() != text.cols()) throw ShapeError("text embeddings differ in width");
    text.row(static_cast<Eigen::Index>(t)) = corpus.entities[t].text_embedding.transpose();
  }
  auto sb = bank::align_gram(initial, text, {cfg.align_steps, cfg.align_lr});
  for (const auto& e : corpus.entities) sb.entity_ids.push_back(e.entity_id);
  return sb;
}

namespace {

/// Labels for rows outside the clustered sample: nearest head centroid.
void extend_labels(BranchLabels& b, const Matrix& all_features, const std::vector<std::size_t>& sample) {
  for (std::size_t l = 0; l < b.model.levels.size(); ++l) {
    auto full = cluster::assign_nearest(all_features, b.model.levels[l].mu);
    for (std::size_t i = 0; i < sample.size(); ++i) full[sample[i]] = b.superpoint_labels[l][i];
    b.superpoint_labels[l] = std::move(full);
  }
}

Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

void write_outputs(const fs::path& out, const PipelineResult& r, const std::vector<double>& warmup) {
  io::write_text_file(out / "losses.tsv", format_losses(r.losses));
  if (!warmup.empty()) {
    std::ostringstream ss;
    ss << "epoch\tdistill\n";
    for (std::size_t e = 0; e < warmup.size(); ++e) ss << e << '\t' << fmt(warmup[e]) << '\n';
    io::write_text_file(out / "warmup.tsv", ss.str());
  }
  io::write_labels(out / "pred.ltlb", r.predictions);
  if (r.report) io::write_text_file(out / "report.tsv", eval::format_report(*r.report));
}

}  // namespace

PipelineResult run_pipeline(const TrainConfig& cfg, const Corpus& corpus, const std::optional<fs::path>& out_dir) {
  cfg.validate();
  const auto& scenes = corpus.scenes;
  if (scenes.empty()) throw DataError("run_pipeline: empty corpus");
  const auto input_dim = static_cast<std::size_t>(scenes.front().points.cols());
  for (const auto& s : scenes) {
    if (static_cast<std::size_t>(s.points.cols()) != input_dim) throw ShapeError("scenes differ in input width");
    s.validate();
  }
  if (out_dir) fs::create_directories(*out_dir);

  PipelineResult result;
  TrainState state;
  state.backbone = Backbone::init(input_dim, cfg.hidden, cfg.feature_dim, cfg.seed);
  state.backbone_opt = AdamW(cfg.adamw);
  state.head_opt = AdamW(cfg.adamw);

  const bool distill = std::all_of(scenes.begin(), scenes.end(), [](const SceneBundle& s) { return s.distill_targets.has_value(); });
  if (distill) {
    for (const auto& s : scenes) {
      if (static_cast<std::size_t>(s.distill_targets->cols()) != cfg.feature_dim) {
        throw ShapeError("distill targets of " + s.scene_id + " have " + std::to_string(s.distill_targets->cols()) +
                         " columns, backbone outputs " + std::to_string(cfg.feature_dim));
      }
    }
    for (int e = 0; e < cfg.warmup_epochs; ++e) result.warmup_losses.push_back(warmup_epoch(state, scenes, cfg, e));
  }

  std::optional<EntityIndex> entity_index;
  if (cfg.lambda > 0.0) {
    result.bank = build_bank(state.backbone, corpus, cfg);
    std::optional<std::vector<std::int32_t>> hint;
    if (cfg.class_hint) {
      if (corpus.entity_classes.size() != corpus.entities.size()) throw DataError("class_hint requested but no entity classes were loaded");
      hint = corpus.entity_classes;
    }
    entity_index = index_entities(*result.bank, corpus.entities, scenes, hint);
    if (out_dir) {
      io::write_feature_matrix(*out_dir / "bank_aligned.ltfm", result.bank->prototypes);
      std::ostringstream trace;
      trace << "step\tloss\n";
      for (std::size_t i = 0; i < result.bank->alignment_loss_trace.size(); ++i) {
        trace << i << '\t' << fmt(result.bank->alignment_loss_trace[i]) << '\n';
      }
      io::write_text_file(*out_dir / "trace.tsv", trace.str());
    }
  }

  const auto steps_per_epoch = static_cast<long>((scenes.size() + cfg.batch_scenes - 1) / cfg.batch_scenes);
  state.total_steps = steps_per_epoch * cfg.epochs;

  std::optional<Matrix> frozen_spectral;
  PointLabels labels;
  int epoch = 0;
  do {
    if (epoch % cfg.recluster_every == 0) {
      if (out_dir) write_checkpoint(*out_dir / "checkpoint.ltck", state.backbone, state.heads);
      const auto features = extract_features(state.backbone, scenes);
      const Matrix sp = pool_corpus(features, scenes);
      const auto n_sp = static_cast<std::size_t>(sp.rows());
      const bool subsample = cfg.sample_cap > 0 && n_sp > cfg.sample_cap;
      const auto sample = cluster::sample_indices(n_sp, subsample ? cfg.sample_cap : n_sp,
                                                  cfg.seed ^ static_cast<std::uint64_t>(epoch));
      const Matrix sp_used = subsample ? take_rows(sp, sample) : sp;

      std::optional<Matrix> spectral_rows;
      if (cfg.global_branch) {
        if (cfg.freeze_spectral && frozen_spectral) {
          spectral_rows = *frozen_spectral;
        } else {
          spectral::GlobalBranchConfig gc{cfg.s_prime, cfg.normalize_frequency, cfg.seed};
          auto gb = spectral::global_branch(sp_used, gc);
          spectral_rows = gb.features;
          if (cfg.freeze_spectral) frozen_spectral = gb.features;
          if (out_dir && cfg.dump_spectral) {
            io::write_feature_matrix(*out_dir / "spectral_lambda.ltfm", Matrix(gb.basis.lambda.transpose()));
            io::write_feature_matrix(*out_dir / "spectral_v.ltfm", gb.features);
          }
        }
      }
      auto pl = build_pseudo_labels(sp_used, spectral_rows ? &*spectral_rows : nullptr, cfg.granularities, 0,
                                    cfg.seed);
      if (subsample) {
        extend_labels(pl.local, sp, sample);
        if (pl.global) extend_labels(*pl.global, sp, sample);
      }
      state.heads.clear();
      state.heads.push_back(pl.local.model);
      if (pl.global) state.heads.push_back(pl.global->model);
      state.head_opt.reset();
      labels = point_labels(pl, scenes);
    }
    if (epoch < cfg.epochs) {
      result.losses.push_back(train_epoch(state, scenes, labels, entity_index ? &*entity_index : nullptr, cfg, epoch));
    }
    ++epoch;
  } while (epoch < cfg.epochs);

  result.backbone = state.backbone;
  result.models = state.heads;
  const auto features = extract_features(state.backbone, scenes);
  std::size_t total_points = 0;
  for (const auto& s : scenes) total_points += s.n_points();
  Matrix all(static_cast<Eigen::Index>(total_points), static_cast<Eigen::Index>(cfg.feature_dim));
  Eigen::Index row = 0;
  for (const auto& f : features) {
    all.middleRows(row, f.rows()) = f;
    row += f.rows();
  }
  result.predictions = eval::prototype_transfer(result.models, all);
  const bool has_gt = std::all_of(scenes.begin(), scenes.end(), [](const SceneBundle& s) { return s.gt_labels.has_value(); });
  if (has_gt) {
    LabelVector gt;
    for (const auto& s : scenes) gt.labels.insert(gt.labels.end(), s.gt_labels->labels.begin(), s.gt_labels->labels.end());
    result.report = eval::match_and_score(eval::confusion(result.predictions, gt), cfg.unmatched);
  }
  if (out_dir) {
    write_checkpoint(*out_dir / "checkpoint.ltck", result.backbone, result.models);
    write_outputs(*out_dir, result, result.warmup_losses);
  }
  return result;
}

std::string format_losses(const std::vector<LossReport>& losses) {
  std::ostringstream ss;
  ss << "epoch\tlocal\tglobal\tentity\ttotal\tlr\n";
  for (std::size_t e = 0; e < losses.size(); ++e) {
    const auto& l = losses[e];
    ss << e << '\t' << fmt(l.local) << '\t' << fmt(l.global) << '\t' << fmt(l.entity) << '\t' << fmt(l.total) << '\t'
       << fmt(l.lr) << '\n';
  }
  return ss.str();
}

void write_checkpoint(const fs::path& path, const Backbone& b, const std::vector<ClusterModel>& models) {
  std::vector<std::pair<std::string, const Matrix*>> tensors;
  for (std::size_t l = 0; l < b.layers.size(); ++l) {
    tensors.emplace_back("backbone." + std::to_string(l) + ".weight", &b.layers[l].weight);
    tensors.emplace_back("backbone." + std::to_string(l) + ".bias", &b.layers[l].bias);
  }
  for (const auto& m : models) {
    for (const auto& lvl : m.levels) {
      tensors.emplace_back(std::string(branch_name(m.branch)) + ".k" + std::to_string(lvl.k), &lvl.mu);
    }
  }
  std::ostringstream buf(std::ios::binary);
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.put(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  auto put64 = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.put(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  buf.write("LTCK", 4);
  put32(io::kFormatVersion);
  put64(tensors.size());
  for (const auto& [name, _] : tensors) {
    put32(static_cast<std::uint32_t>(name.size()));
    buf.write(name.data(), static_cast<std::streamsize>(name.size()));
  }
  for (const auto& [_, m] : tensors) io::write_feature_matrix(buf, *m);
  io::write_text_file(path, buf.str());
}

Checkpoint read_checkpoint(const fs::path& path) {
  const auto data = io::read_text_file(path);
  std::istringstream in(data, std::ios::binary);
  const auto origin = path.string();
  auto get = [&](int bytes) -> std::uint64_t {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      const int c = in.get();
      if (c == EOF) throw TruncationError(origin + ": truncated checkpoint header");
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
  };
  char magic[4];
  if (!in.read(magic, 4)) throw TruncationError(origin + ": missing magic");
  if (std::string(magic, 4) != "LTCK") throw FormatError(origin + ": bad checkpoint magic");
  if (get(4) != io::kFormatVersion) throw FormatError(origin + ": unsupported checkpoint version");
  const auto n = get(8);
  if (n > data.size()) throw FormatError(origin + ": implausible tensor count");
  std::vector<std::string> names;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto len = get(4);
    if (len > data.size()) throw FormatError(origin + ": implausible tensor name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(len))) throw TruncationError(origin + ": truncated name table");
    names.push_back(std::move(name));
  }
  Checkpoint ck;
  std::map<std::size_t, DenseLayer> layers;
  for (const auto& name : names) {
    auto m = io::read_feature_matrix(in, origin + ":" + name);
    if (name.rfind("backbone.", 0) == 0) {
      const auto dot = name.find('.', 9);
      const auto idx = static_cast<std::size_t>(std::stoul(name.substr(9, dot - 9)));
      const auto kind = name.substr(dot + 1);
      if (kind == "weight") {
        layers[idx].weight = std::move(m);
      } else if (kind == "bias") {
        layers[idx].bias = std::move(m);
      } else {
        throw FormatError(origin + ": unknown backbone tensor " + name);
      }
    } else {
      const auto dot = name.find(".k");
      if (dot == std::string::npos) throw FormatError(origin + ": unknown tensor " + name);
      const auto branch_str = name.substr(0, dot);
      Branch branch;
      if (branch_str == "local") {
        branch = Branch::local;
      } else if (branch_str == "global") {
        branch = Branch::global;
      } else {
        throw FormatError(origin + ": unknown branch in " + name);
      }
      if (ck.models.empty() || ck.models.back().branch != branch) ck.models.push_back({branch, {}});
      const auto k = static_cast<std::size_t>(std::stoul(name.substr(dot + 2)));
      if (static_cast<std::size_t>(m.rows()) != k) throw FormatError(origin + ": head " + name + " has wrong row count");
      ck.models.back().levels.push_back({k, std::move(m)});
    }
  }
  for (auto& [idx, layer] : layers) {
    if (idx != ck.backbone.layers.size()) throw FormatError(origin + ": backbone layers are not contiguous");
    ck.backbone.layers.push_back(std::move(layer));
  }
  return ck;
}

}  // namespace langtail::train
