// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// nonzero when any criterion fails. `acceptance 3 7` runs a subset.

#include "langtail/bank.hpp"
#include "langtail/cli.hpp"
#include "langtail/cluster.hpp"
#include "langtail/errors.hpp"
#include "langtail/eval.hpp"
#include "langtail/losses.hpp"
#include "langtail/spectral.hpp"
#include "langtail/synth.hpp"
#include "langtail/train.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>

#include <unistd.h>

using namespace langtail;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream ss;
  ss.precision(precision);
  ss << v;
  return ss.str();
}

std::size_t pick(CounterRng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

// ---------------------------------------------------------------- 1

double weighted_output(const train::Backbone& b, const Matrix& x, const Matrix& g) {
  return backbone_forward(b, x).cwiseProduct(g).sum();
}

Outcome gradient_suite() {
  CounterRng rng(101, 0, Stream::test);
  constexpr int kInstances = 20;
  std::ostringstream detail;
  bool pass = true;
  auto record = [&](const char* name, const oracle::GradCheck& gc, int instances) {
    detail << name << " " << instances << " inst worst_abs=" << fmt(gc.worst_abs, 2) << "; ";
    pass = pass && gc.ok() && instances >= kInstances;
  };

  {
    oracle::GradCheck gc;
    int done = 0;
    while (done < kInstances) {
      const auto in = pick(rng, 2, 5);
      std::vector<std::size_t> hidden(pick(rng, 0, 2));
      for (auto& h : hidden) h = pick(rng, 3, 6);
      const auto out = pick(rng, 2, 5);
      auto b = train::Backbone::init(in, hidden, out, rng.next_u64());
      for (auto& l : b.layers) l.bias = oracle::random_matrix(rng, 1, l.bias.cols(), 0.5);
      Matrix x = oracle::random_matrix(rng, static_cast<Eigen::Index>(pick(rng, 2, 6)), static_cast<Eigen::Index>(in));
      const Matrix g = oracle::random_matrix(rng, x.rows(), static_cast<Eigen::Index>(out));
      train::ForwardCache cache;
      try {
        backbone_forward(b, x, &cache);
      } catch (const NormalizationError&) {
        continue;
      }
      const auto grads = backbone_backward(b, cache, g);
      auto f = [&] { return weighted_output(b, x, g); };
      for (std::size_t l = 0; l < b.layers.size(); ++l) {
        oracle::check_gradient(b.layers[l].weight, grads.params.layers[l].weight, f, gc);
        oracle::check_gradient(b.layers[l].bias, grads.params.layers[l].bias, f, gc);
      }
      oracle::check_gradient(x, grads.input, f, gc);
      ++done;
    }
    record("backbone", gc, done);
  }
  {
    oracle::GradCheck gc;
    for (int i = 0; i < kInstances; ++i) {
      const auto n = static_cast<Eigen::Index>(pick(rng, 2, 7));
      const auto c = static_cast<Eigen::Index>(pick(rng, 2, 5));
      const auto k = pick(rng, 2, 4);
      Matrix f = oracle::random_matrix(rng, n, c);
      Matrix mu = oracle::random_matrix(rng, static_cast<Eigen::Index>(k), c);
      LabelVector y;
      for (Eigen::Index r = 0; r < n; ++r) y.labels.push_back(static_cast<std::int32_t>(rng.below(k + 1)) - 1);
      y.labels[0] = static_cast<std::int32_t>(rng.below(k));
      const double norm = rng.uniform(1.0, 10.0);
      const auto r = train::head_ce_loss(f, mu, y, norm);
      auto loss = [&] { return train::head_ce_loss(f, mu, y, norm).loss; };
      oracle::check_gradient(f, r.grad_features, loss, gc);
      oracle::check_gradient(mu, r.grad_mu, loss, gc);
    }
    record("head_ce", gc, kInstances);
  }
  {
    oracle::GradCheck gc;
    for (int i = 0; i < kInstances; ++i) {
      const auto t = pick(rng, 3, 8);
      const auto c = static_cast<Eigen::Index>(pick(rng, 2, 5));
      bank::SemanticBank bk;
      bk.prototypes = oracle::random_matrix(rng, static_cast<Eigen::Index>(t), c);
      for (std::size_t e = 0; e < t; ++e) bk.entity_ids.push_back(e);
      std::optional<std::vector<std::int32_t>> hint;
      if (i % 2 == 1) {
        hint.emplace();
        for (std::size_t e = 0; e < t; ++e) hint->push_back(static_cast<std::int32_t>(rng.below(3)));
      }
      const auto batch = bank::sample_entity_batch(bk, pick(rng, 2, t), rng.next_u64(), hint);
      const auto anchors_n = pick(rng, 1, 4);
      Matrix anchors = oracle::random_matrix(rng, static_cast<Eigen::Index>(anchors_n), c);
      std::vector<std::size_t> pos;
      for (std::size_t a = 0; a < anchors_n; ++a) pos.push_back(rng.below(batch.entity_indices.size()));
      const double tau = rng.uniform(0.3, 1.0);
      const double norm = rng.uniform(1.0, 6.0);
      const auto r = bank::entity_contrastive_loss(anchors, pos, batch, tau, norm);
      oracle::check_gradient(anchors, r.grad_anchors,
                             [&] { return bank::entity_contrastive_loss(anchors, pos, batch, tau, norm).loss; }, gc);
    }
    record("infonce", gc, kInstances);
  }
  {
    oracle::GradCheck gc;
    for (int i = 0; i < kInstances; ++i) {
      const auto t = static_cast<Eigen::Index>(pick(rng, 2, 7));
      Matrix f = oracle::random_matrix(rng, t, static_cast<Eigen::Index>(pick(rng, 2, 5)));
      const Matrix target = bank::gram(normalize_rows(oracle::random_matrix(rng, t, 6)));
      Matrix grad;
      bank::gram_loss(f, target, &grad);
      oracle::check_gradient(f, grad, [&] { return bank::gram_loss(f, target); }, gc);
    }
    record("gram", gc, kInstances);
  }
  {
    oracle::GradCheck gc;
    for (int i = 0; i < kInstances; ++i) {
      const auto n = static_cast<Eigen::Index>(pick(rng, 1, 6));
      const auto c = static_cast<Eigen::Index>(pick(rng, 2, 6));
      Matrix f = oracle::random_matrix(rng, n, c);
      const Matrix t = oracle::random_matrix(rng, n, c);
      const double norm = rng.uniform(1.0, 8.0);
      const auto r = train::distill_warmup_loss(f, t, norm);
      oracle::check_gradient(f, r.grad_features, [&] { return train::distill_warmup_loss(f, t, norm).loss; }, gc);
    }
    record("distill", gc, kInstances);
  }
  return {pass, detail.str()};
}

// ---------------------------------------------------------------- 2

Outcome ward_oracle() {
  CounterRng rng(102, 0, Stream::test);
  int mismatches = 0;
  std::size_t cuts = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const auto n = static_cast<Eigen::Index>(pick(rng, 2, 8));
    const auto d = static_cast<Eigen::Index>(pick(rng, 1, 4));
    const Matrix x = oracle::random_matrix(rng, n, d);
    const auto expected = oracle::exhaustive_ward(x);
    const auto tree = cluster::ward_tree(x);
    for (std::size_t k = 1; k <= static_cast<std::size_t>(n); ++k) {
      const auto got = cluster::cut_tree(tree, k);
      const std::vector<int> labels(got.labels.begin(), got.labels.end());
      if (labels != expected[k]) ++mismatches;
      ++cuts;
    }
  }
  return {mismatches == 0, "200 instances, " + std::to_string(cuts) + " cuts, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------- 3

Outcome hungarian_oracle() {
  CounterRng rng(103, 0, Stream::test);
  int mismatches = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const auto r = pick(rng, 1, 7);
    const auto c = pick(rng, 1, 7);
    std::vector<std::vector<double>> cost(r, std::vector<double>(c));
    for (auto& row : cost) {
      for (auto& v : row) v = static_cast<double>(static_cast<std::int64_t>(rng.below(61)) - 20);
    }
    const auto got = eval::hungarian(cost);
    std::set<std::int32_t> cols;
    double sum = 0.0;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < r; ++i) {
      if (got.row_to_col[i] < 0) continue;
      cols.insert(got.row_to_col[i]);
      sum += cost[i][static_cast<std::size_t>(got.row_to_col[i])];
      ++assigned;
    }
    const bool valid = assigned == std::min(r, c) && cols.size() == assigned && sum == got.cost;
    if (!valid || got.cost != oracle::brute_force_assignment(cost)) ++mismatches;
  }
  return {mismatches == 0, "200 matrices up to 7x7, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------- 4

Outcome spectral_suite() {
  CounterRng rng(104, 0, Stream::test);
  double worst_recon = 0.0, worst_parseval = 0.0, worst_two = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const auto n = static_cast<Eigen::Index>(pick(rng, 3, 30));
    const Matrix f = oracle::random_matrix(rng, n, static_cast<Eigen::Index>(pick(rng, 2, 5)), 0.7);
    const Matrix l = spectral::normalized_laplacian(spectral::build_affinity(f));
    const auto basis = spectral::eigendecompose(l);
    const Matrix recon = basis.u * basis.lambda.asDiagonal() * basis.u.transpose();
    worst_recon = std::max(worst_recon, (recon - l).norm() / l.norm());
    const Matrix signal = oracle::random_matrix(rng, n, 3);
    const Matrix freq = spectral::graph_fourier(basis, signal);
    worst_parseval = std::max(worst_parseval, std::abs(freq.squaredNorm() - signal.squaredNorm()) / signal.squaredNorm());
  }
  for (double w : {1.0, 0.37, 1e-3, 5.0}) {
    spectral::AffinityGraph g{Matrix{{0.0, w}, {w, 0.0}}};
    const auto basis = spectral::eigendecompose(spectral::normalized_laplacian(g));
    worst_two = std::max({worst_two, std::abs(basis.lambda(0)), std::abs(basis.lambda(1) - 2.0)});
  }

  int fiedler_failures = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const auto n1 = pick(rng, 5, 15), n2 = pick(rng, 5, 15);
    const auto d = static_cast<Eigen::Index>(pick(rng, 2, 3));
    RowVector dir = oracle::random_matrix(rng, 1, d);
    dir.normalize();
    const RowVector c2 = 2.5 * dir;
    Matrix x(static_cast<Eigen::Index>(n1 + n2), d);
    std::vector<int> truth;
    for (std::size_t i = 0; i < n1 + n2; ++i) {
      const bool second = i >= n1;
      x.row(static_cast<Eigen::Index>(i)) = oracle::random_matrix(rng, 1, d, 0.3) + (second ? c2 : RowVector::Zero(d));
      truth.push_back(second ? 1 : 0);
    }
    const auto basis = spectral::eigendecompose(spectral::normalized_laplacian(spectral::build_affinity(x)));
    std::vector<int> side;
    for (Eigen::Index i = 0; i < x.rows(); ++i) side.push_back(basis.u(i, 1) > 0.0 ? 1 : 0);
    if (oracle::canonical(side) != oracle::canonical(truth)) ++fiedler_failures;
  }
  const bool pass = worst_recon <= 1e-8 && worst_parseval <= 1e-8 && worst_two <= 1e-10 && fiedler_failures == 0;
  return {pass, "recon=" + fmt(worst_recon, 2) + " parseval=" + fmt(worst_parseval, 2) + " two_node=" +
                    fmt(worst_two, 2) + " fiedler_failures=" + std::to_string(fiedler_failures) + "/50"};
}

// ---------------------------------------------------------------- 5

Outcome gram_alignment() {
  CounterRng rng(105, 0, Stream::test);
  double worst_ratio = 0.0, worst_rotation = 0.0;
  std::size_t max_trace = 0;
  for (int inst = 0; inst < 10; ++inst) {
    const Matrix init = oracle::random_matrix(rng, 20, 32, 0.3);
    const Matrix text = oracle::random_matrix(rng, 20, 512);
    const auto bk = bank::align_gram(init, text, {500, 1e-2});
    const auto& trace = bk.alignment_loss_trace;
    max_trace = std::max(max_trace, trace.size());
    worst_ratio = std::max(worst_ratio, trace.back() / trace.front());

    const Matrix target = bank::gram(normalize_rows(text));
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(oracle::random_matrix(rng, 32, 32)));
    const Matrix q(qr.householderQ());
    worst_rotation = std::max(worst_rotation, std::abs(bank::gram_loss(init * q, target) - bank::gram_loss(init, target)));
  }
  const bool pass = worst_ratio <= 1e-3 && worst_rotation <= 1e-10 && max_trace <= 501;
  return {pass, "10 banks of 20 entities, worst final/initial=" + fmt(worst_ratio, 3) + ", rotation diff=" +
                    fmt(worst_rotation, 2)};
}

// ---------------------------------------------------------------- 6

Outcome eval_fixtures() {
  std::ostringstream detail;
  bool pass = true;
  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
  auto check = [&](const char* name, const std::vector<std::vector<std::uint64_t>>& rows, eval::UnmatchedPolicy p,
                   double oa, double macc, double miou) {
    const auto r = eval::match_and_score(eval::ConfusionMatrix::from_rows(rows), p);
    const bool ok = near(r.oa, oa) && near(r.macc, macc) && near(r.miou, miou);
    detail << name << (ok ? " ok; " : " MISMATCH; ");
    pass = pass && ok;
  };
  check("2x2", {{5, 0}, {2, 3}}, eval::UnmatchedPolicy::merge, 8.0 / 10.0, (5.0 / 7.0 + 1.0) / 2.0,
        (5.0 / 7.0 + 3.0 / 5.0) / 2.0);
  check("3x2 merge", {{5, 0}, {2, 3}, {1, 4}}, eval::UnmatchedPolicy::merge, 12.0 / 15.0, (5.0 / 8.0 + 1.0) / 2.0,
        (5.0 / 8.0 + 7.0 / 10.0) / 2.0);
  check("3x2 drop", {{5, 0}, {2, 3}, {1, 4}}, eval::UnmatchedPolicy::drop, 9.0 / 15.0, (5.0 / 8.0 + 4.0 / 7.0) / 2.0,
        (5.0 / 8.0 + 4.0 / 8.0) / 2.0);
  check("perfect", {{4, 0, 0}, {0, 2, 0}, {0, 0, 1}}, eval::UnmatchedPolicy::merge, 1.0, 1.0, 1.0);

  // Prototype totals from heads built by the label builder itself.
  CounterRng rng(106, 0, Stream::test);
  const Matrix sp = oracle::random_matrix(rng, 160, 6);
  const Matrix spectral_rows = oracle::random_matrix(rng, 160, 10);
  const std::vector<std::pair<std::vector<std::size_t>, std::size_t>> sets{
      {{120, 80, 20}, 440}, {{120, 80, 12}, 424}, {{120, 40, 12}, 344}, {{120, 40, 16}, 352}};
  for (const auto& [levels, expected] : sets) {
    const auto pl = train::build_pseudo_labels(sp, &spectral_rows, cluster::GranularitySet(levels), 0, 0);
    const std::size_t got = eval::prototype_count({pl.local.model, pl.global->model});
    detail << got << (got == expected ? "" : "!") << " ";
    pass = pass && got == expected;
  }
  return {pass, detail.str()};
}

// ---------------------------------------------------------------- 7

train::Corpus synthetic_corpus(std::uint64_t seed) {
  synth::SynthConfig sc;
  sc.seed = seed;
  auto c = synth::generate_corpus(sc);
  return {std::move(c.scenes), std::move(c.entities), std::move(c.entity_classes)};
}

train::TrainConfig longtail_config(std::uint64_t seed) {
  train::TrainConfig cfg;
  cfg.seed = seed;
  cfg.hidden = {64};
  cfg.feature_dim = 32;
  cfg.epochs = 10;
  cfg.lr0 = 1e-3;
  cfg.recluster_every = 2;
  cfg.entity_batch = 32;
  cfg.lambda = 0.9;
  cfg.global_branch = true;
  cfg.granularities = cluster::GranularitySet({48, 32, 8});
  return cfg;
}

train::TrainConfig baseline_config(std::uint64_t seed) {
  auto cfg = longtail_config(seed);
  cfg.lambda = 0.0;
  cfg.global_branch = false;
  cfg.granularities = cluster::GranularitySet({8});
  return cfg;
}

std::size_t rarest_class(const eval::EvalReport& r) { return static_cast<std::size_t>(eval::tail_report(r).back().cls); }

struct LongTailRun {
  std::uint64_t seed;
  double full_miou, full_tail, base_miou, base_tail, base_rarest_iou;
};

std::vector<LongTailRun> g_longtail;

Outcome longtail_rescue() {
  std::ostringstream manifest;
  manifest << "seed\tfull_miou\tfull_tail_iou\tbaseline_miou\tbaseline_tail_iou\tbaseline_rarest_iou\n";
  int above_miou = 0, improved = 0;
  double gain = 0.0, min_miou = 1.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto corpus = synthetic_corpus(seed);
    const auto full = train::run_pipeline(longtail_config(seed), corpus, std::nullopt);
    const auto base = train::run_pipeline(baseline_config(seed), corpus, std::nullopt);
    LongTailRun r{seed,
                  full.report->miou,
                  eval::tail_iou(*full.report, 2),
                  base.report->miou,
                  eval::tail_iou(*base.report, 2),
                  base.report->per_class_iou[rarest_class(*base.report)]};
    g_longtail.push_back(r);
    manifest << seed << '\t' << fmt(r.full_miou, 6) << '\t' << fmt(r.full_tail, 6) << '\t' << fmt(r.base_miou, 6) << '\t'
             << fmt(r.base_tail, 6) << '\t' << fmt(r.base_rarest_iou, 6) << '\n';
    above_miou += r.full_miou >= 0.85 ? 1 : 0;
    improved += r.full_tail > r.base_tail ? 1 : 0;
    gain += r.full_tail - r.base_tail;
    min_miou = std::min(min_miou, r.full_miou);
  }
  gain /= 10.0;
  std::ofstream("longtail_manifest.tsv") << manifest.str();
  const bool pass = above_miou == 10 && improved >= 8 && gain >= 0.15;
  return {pass, "min mIoU=" + fmt(min_miou) + ", tail improved in " + std::to_string(improved) +
                    "/10 seeds, mean tail gain=" + fmt(gain) + " (longtail_manifest.tsv)"};
}

// ---------------------------------------------------------------- 8

struct StepSum {
  train::Backbone grad;
  Matrix grad_mu;
  double loss = 0.0;
};

StepSum tree_sum(std::vector<StepSum>& parts, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return parts[lo];
  const auto mid = lo + (hi - lo) / 2;
  StepSum left = tree_sum(parts, lo, mid);
  const StepSum right = tree_sum(parts, mid, hi);
  for (std::size_t l = 0; l < left.grad.layers.size(); ++l) {
    left.grad.layers[l].weight += right.grad.layers[l].weight;
    left.grad.layers[l].bias += right.grad.layers[l].bias;
  }
  left.grad_mu += right.grad_mu;
  left.loss += right.loss;
  return left;
}

// Single-head cross-entropy training with periodic Ward re-clustering,
// written out step by step from the primitives.
std::vector<train::LossReport> direct_baseline(const train::TrainConfig& cfg, const std::vector<SceneBundle>& scenes,
                                               train::Backbone& backbone) {
  const auto k = cfg.granularities.primary();
  backbone = train::Backbone::init(static_cast<std::size_t>(scenes.front().points.cols()), cfg.hidden, cfg.feature_dim,
                                   cfg.seed);
  train::AdamW backbone_opt(cfg.adamw), head_opt(cfg.adamw);
  const long per_epoch = static_cast<long>((scenes.size() + cfg.batch_scenes - 1) / cfg.batch_scenes);
  const long total_steps = per_epoch * cfg.epochs;
  long step = 0;
  Matrix mu;
  std::vector<LabelVector> labels(scenes.size());
  std::vector<train::LossReport> out;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch % cfg.recluster_every == 0) {
      std::size_t n_sp = 0;
      for (const auto& s : scenes) n_sp += s.superpoints.n_superpoints();
      Matrix sp = Matrix::Zero(static_cast<Eigen::Index>(n_sp), static_cast<Eigen::Index>(cfg.feature_dim));
      std::vector<std::size_t> offset;
      std::size_t base = 0;
      for (const auto& s : scenes) {
        const Matrix y = backbone_forward(backbone, s.points);
        std::vector<std::size_t> counts(s.superpoints.n_superpoints(), 0);
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
          const auto p = s.superpoints[static_cast<std::size_t>(i)];
          sp.row(static_cast<Eigen::Index>(base + p)) += y.row(i);
          ++counts[p];
        }
        for (std::size_t p = 0; p < counts.size(); ++p) sp.row(static_cast<Eigen::Index>(base + p)) /= static_cast<double>(counts[p]);
        offset.push_back(base);
        base += counts.size();
      }
      const auto sp_labels = cluster::cut_tree(cluster::ward_tree(sp), k);
      mu = Matrix::Zero(static_cast<Eigen::Index>(k), sp.cols());
      std::vector<std::size_t> members(k, 0);
      for (std::size_t i = 0; i < n_sp; ++i) {
        mu.row(sp_labels[i]) += sp.row(static_cast<Eigen::Index>(i));
        ++members[static_cast<std::size_t>(sp_labels[i])];
      }
      for (std::size_t c = 0; c < k; ++c) mu.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(members[c]);
      for (std::size_t s = 0; s < scenes.size(); ++s) {
        labels[s].labels.clear();
        for (std::size_t i = 0; i < scenes[s].n_points(); ++i) {
          labels[s].labels.push_back(sp_labels[offset[s] + scenes[s].superpoints[i]]);
        }
      }
      head_opt.reset();
    }

    std::vector<std::size_t> order(scenes.size());
    std::iota(order.begin(), order.end(), 0);
    CounterRng(cfg.seed, static_cast<std::uint64_t>(epoch), Stream::shuffle).shuffle(order);

    train::LossReport report;
    long steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_scenes) {
      const auto stop = std::min(order.size(), start + cfg.batch_scenes);
      const double lr = train::poly_lr(step, total_steps, cfg.lr0, cfg.lr_min, cfg.poly_power);
      if (steps == 0) report.lr = lr;
      std::size_t counted = 0;
      for (auto i = start; i < stop; ++i) counted += scenes[order[i]].n_points();

      std::vector<StepSum> parts;
      for (auto i = start; i < stop; ++i) {
        const auto& s = scenes[order[i]];
        train::ForwardCache cache;
        const Matrix y = backbone_forward(backbone, s.points, &cache);
        auto ce = train::head_ce_loss(y, mu, labels[order[i]], static_cast<double>(counted));
        Matrix grad_y = Matrix::Zero(y.rows(), y.cols());
        grad_y += ce.grad_features;
        parts.push_back({backbone_backward(backbone, cache, grad_y).params, ce.grad_mu, ce.loss});
      }
      const auto sum = tree_sum(parts, 0, parts.size());
      backbone_opt.step(train::backbone_tensors(backbone), train::backbone_tensors(sum.grad), lr);
      head_opt.step({&mu}, {&sum.grad_mu}, lr);
      report.local += sum.loss;
      ++step;
      ++steps;
    }
    report.local /= static_cast<double>(steps);
    report.total = report.local;
    out.push_back(report);
  }
  return out;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

Outcome baseline_degeneracy() {
  auto cfg = baseline_config(3);
  cfg.hidden = {32};
  cfg.feature_dim = 16;
  cfg.epochs = 6;
  cfg.batch_scenes = 4;
  cfg.threads = 2;
  const auto corpus = synthetic_corpus(3);
  const auto pipeline = train::run_pipeline(cfg, corpus, std::nullopt);
  train::Backbone direct_backbone;
  const auto direct = direct_baseline(cfg, corpus.scenes, direct_backbone);

  int mismatched = 0;
  for (std::size_t e = 0; e < std::max(direct.size(), pipeline.losses.size()); ++e) {
    if (e >= direct.size() || e >= pipeline.losses.size()) {
      ++mismatched;
      continue;
    }
    const auto& a = direct[e];
    const auto& b = pipeline.losses[e];
    const bool same = same_bits(a.local, b.local) && same_bits(a.global, b.global) && same_bits(a.entity, b.entity) &&
                      same_bits(a.total, b.total) && same_bits(a.lr, b.lr);
    mismatched += same ? 0 : 1;
  }
  bool params_equal = true;
  for (std::size_t l = 0; l < direct_backbone.layers.size(); ++l) {
    params_equal = params_equal && direct_backbone.layers[l].weight == pipeline.backbone.layers[l].weight &&
                   direct_backbone.layers[l].bias == pipeline.backbone.layers[l].bias;
  }
  const bool pass = mismatched == 0 && params_equal && !direct.empty();
  return {pass, std::to_string(direct.size()) + " epochs, " + std::to_string(mismatched) +
                    " differing loss rows, final backbone " + (params_equal ? "identical" : "differs") +
                    " (first local=" + fmt(direct.front().local, 17) + ")"};
}

// ---------------------------------------------------------------- 9

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "langtail");
  return cli::run_command(args);
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("langtail_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  const auto corpus = (root / "corpus").string();
  std::vector<int> codes;
  codes.push_back(cli({"synth", "--out", corpus, "--seed", "4"}));
  const std::vector<std::string> common{"train",     "--corpus",    corpus, "--bank", corpus + "/bank", "--seed",           "4",  "--hidden",
                                        "64",        "--feature-dim", "32", "--epochs",         "6",  "--lr0",
                                        "1e-3",      "--recluster-every", "2", "--granularities", "48,32,8",
                                        "--lambda", "0.9",         "--entity-batch", "32"};
  auto run = [&](const std::string& out, const std::string& threads) {
    auto args = common;
    args.insert(args.end(), {"--out", (root / out).string(), "--threads", threads});
    codes.push_back(cli(args));
  };
  run("a", "1");
  run("b", "1");
  run("c", "2");

  int differing = 0;
  std::size_t compared = 0;
  for (const char* name : {"checkpoint.ltck", "report.tsv", "losses.tsv", "pred.ltlb", "bank_aligned.ltfm"}) {
    const auto a = read_bytes(root / "a" / name);
    for (const char* other : {"b", "c"}) {
      const auto b = read_bytes(root / other / name);
      differing += (a.empty() || a != b) ? 1 : 0;
      ++compared;
    }
  }
  const bool codes_ok = std::all_of(codes.begin(), codes.end(), [](int c) { return c == 0; });
  fs::remove_all(root);
  return {codes_ok && differing == 0, std::to_string(compared) + " file comparisons (repeat and 2 threads), " +
                                          std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  setenv("LANGTAIL_LOG", "quiet", 0);
  struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
  };
  const std::vector<Criterion> criteria{
      {1, "gradient suite", gradient_suite},       {2, "ward oracle", ward_oracle},
      {3, "hungarian oracle", hungarian_oracle},   {4, "spectral suite", spectral_suite},
      {5, "gram alignment", gram_alignment},       {6, "evaluation protocol", eval_fixtures},
      {7, "long-tail rescue", longtail_rescue},    {8, "baseline degeneracy", baseline_degeneracy},
      {9, "determinism", determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }

  // The degenerate baseline is expected to lose its rarest class outright
  // (IoU < 0.05) on most seeds. Reported, not gated.
  if (!g_longtail.empty()) {
    int absorbed = 0;
    for (const auto& r : g_longtail) absorbed += r.base_rarest_iou < eval::kAbsorbedIou ? 1 : 0;
    std::printf("INFO baseline rarest class absorbed in %d/10 seeds (expected >= 8/10: %s)\n", absorbed,
                absorbed >= 8 ? "met" : "not met");
  }
  return failures == 0 ? 0 : 1;
}
