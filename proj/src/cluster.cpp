#include "langtail/cluster.hpp"

#include "langtail/errors.hpp"
#include "langtail/rng.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

namespace langtail::cluster {

namespace {

/// Index into the condensed upper triangle, i < j.
inline std::size_t condensed(std::size_t n, std::size_t i, std::size_t j) {
  return i * (2 * n - i - 1) / 2 + (j - i - 1);
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
};

}  // namespace

double inertia(const Matrix& x, const Matrix& centroids, const LabelVector& labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    total += squared_distance(x, i, centroids, labels[static_cast<std::size_t>(i)]);
  }
  return total;
}

Matrix cluster_means(const Matrix& x, const LabelVector& labels, std::size_t k) {
  Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(k), x.cols());
  std::vector<std::size_t> counts(k, 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto l = labels[static_cast<std::size_t>(i)];
    if (l < 0) continue;
    sums.row(l) += x.row(i);
    ++counts[static_cast<std::size_t>(l)];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] > 0) sums.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(counts[c]);
  }
  return sums;
}

LabelVector assign_nearest(const Matrix& x, const Matrix& centroids) {
  LabelVector out;
  out.labels.resize(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::int32_t arg = 0;
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = squared_distance(x, i, centroids, c);
      if (d < best) {
        best = d;
        arg = static_cast<std::int32_t>(c);
      }
    }
    out[static_cast<std::size_t>(i)] = arg;
  }
  return out;
}

KMeansResult kmeans(const Matrix& x, std::size_t k, std::uint64_t seed, int max_iters) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (k == 0 || k > n) {
    throw ConfigError("kmeans: k=" + std::to_string(k) + " must be in [1, " + std::to_string(n) + "]");
  }
  if (max_iters < 1) throw ConfigError("kmeans: max_iters must be >= 1");

  // Farthest-point seeding.
  CounterRng rng(seed, 0, Stream::kmeans);
  Matrix centroids(static_cast<Eigen::Index>(k), x.cols());
  const auto first = static_cast<Eigen::Index>(rng.below(n));
  centroids.row(0) = x.row(first);
  std::vector<double> min_d(n);
  for (std::size_t i = 0; i < n; ++i) min_d[i] = squared_distance(x, static_cast<Eigen::Index>(i), x, first);
  for (std::size_t c = 1; c < k; ++c) {
    const auto far = static_cast<std::size_t>(std::max_element(min_d.begin(), min_d.end()) - min_d.begin());
    centroids.row(static_cast<Eigen::Index>(c)) = x.row(static_cast<Eigen::Index>(far));
    for (std::size_t i = 0; i < n; ++i) {
      min_d[i] = std::min(min_d[i], squared_distance(x, static_cast<Eigen::Index>(i), x, static_cast<Eigen::Index>(far)));
    }
  }

  KMeansResult result;
  LabelVector previous;
  for (int iter = 0; iter < max_iters; ++iter) {
    LabelVector labels = assign_nearest(x, centroids);

    std::vector<std::size_t> counts(k, 0);
    for (auto l : labels.labels) ++counts[static_cast<std::size_t>(l)];
    std::vector<char> taken(n, 0);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      // Re-seed an empty cluster at the point farthest from its centroid,
      // skipping points that would leave their own cluster empty.
      double best = -1.0;
      std::size_t arg = n;
      for (std::size_t i = 0; i < n; ++i) {
        const auto own = static_cast<std::size_t>(labels[i]);
        if (taken[i] || counts[own] <= 1) continue;
        const double d = squared_distance(x, static_cast<Eigen::Index>(i), centroids, labels[i]);
        if (d > best) {
          best = d;
          arg = i;
        }
      }
      if (arg == n) break;
      --counts[static_cast<std::size_t>(labels[arg])];
      labels[arg] = static_cast<std::int32_t>(c);
      counts[c] = 1;
      taken[arg] = 1;
    }

    // Clusters that stayed empty keep their previous centroid.
    Matrix means = cluster_means(x, labels, k);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) centroids.row(static_cast<Eigen::Index>(c)) = means.row(static_cast<Eigen::Index>(c));
    }
    result.inertia.push_back(inertia(x, centroids, labels));
    result.iterations = iter + 1;
    const bool converged = labels == previous;
    previous = std::move(labels);
    if (converged) break;
  }
  result.centroids = std::move(centroids);
  result.assignments = std::move(previous);
  return result;
}

Dendrogram ward_tree(const Matrix& x) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (n < 2) throw ConfigError("ward_tree: need at least 2 rows, got " + std::to_string(n));

  std::vector<double> cost(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      cost[condensed(n, i, j)] = 0.5 * squared_distance(x, static_cast<Eigen::Index>(i), x, static_cast<Eigen::Index>(j));
    }
  }
  auto at = [&](std::size_t i, std::size_t j) -> double& {
    return i < j ? cost[condensed(n, i, j)] : cost[condensed(n, j, i)];
  };

  std::vector<std::size_t> size(n, 1);
  std::vector<char> active(n, 1);
  struct RawMerge {
    std::size_t a, b;
    double cost;
  };
  std::vector<RawMerge> raw;
  raw.reserve(n - 1);
  std::vector<std::size_t> chain;
  chain.reserve(n);

  std::size_t remaining = n;
  std::size_t first_active = 0;
  while (remaining > 1) {
    if (chain.empty()) {
      while (!active[first_active]) ++first_active;
      chain.push_back(first_active);
    }
    while (true) {
      const auto a = chain.back();
      // Nearest neighbour of the chain tip. Ties prefer the previous chain
      // element (guarantees termination), then the smallest index.
      std::size_t b = n;
      double best = std::numeric_limits<double>::infinity();
      if (chain.size() >= 2) {
        b = chain[chain.size() - 2];
        best = at(a, b);
      }
      for (std::size_t c = 0; c < n; ++c) {
        if (!active[c] || c == a) continue;
        const double d = at(a, c);
        if (d < best) {
          best = d;
          b = c;
        }
      }
      if (chain.size() >= 2 && b == chain[chain.size() - 2]) {
        chain.pop_back();
        chain.pop_back();
        const auto keep = std::min(a, b);
        const auto drop = std::max(a, b);
        raw.push_back({keep, drop, best});
        const double na = static_cast<double>(size[keep]);
        const double nb = static_cast<double>(size[drop]);
        for (std::size_t c = 0; c < n; ++c) {
          if (!active[c] || c == keep || c == drop) continue;
          const double nc = static_cast<double>(size[c]);
          at(keep, c) = ((na + nc) * at(keep, c) + (nb + nc) * at(drop, c) - nc * best) / (na + nb + nc);
        }
        active[drop] = 0;
        size[keep] += size[drop];
        --remaining;
        break;
      }
      chain.push_back(b);
    }
  }

  // Chain order is not cost order; sort (stable keeps dependency order among
  // equal costs) and relabel to node ids.
  std::stable_sort(raw.begin(), raw.end(), [](const RawMerge& l, const RawMerge& r) { return l.cost < r.cost; });
  Dendrogram d;
  d.n_leaves = n;
  d.merges.reserve(n - 1);
  UnionFind uf(n);
  std::vector<std::size_t> node_of(n);
  std::iota(node_of.begin(), node_of.end(), 0);
  std::vector<std::size_t> node_size(n, 1);
  for (const auto& m : raw) {
    const auto ra = uf.find(m.a);
    const auto rb = uf.find(m.b);
    auto left = node_of[ra];
    auto right = node_of[rb];
    if (left > right) std::swap(left, right);
    const auto merged_size = node_size[ra] + node_size[rb];
    d.merges.push_back({left, right, std::max(0.0, m.cost), merged_size});
    const auto root = std::min(ra, rb);
    uf.parent[std::max(ra, rb)] = root;
    node_of[root] = n + d.merges.size() - 1;
    node_size[root] = merged_size;
  }
  return d;
}

LabelVector cut_tree(const Dendrogram& d, std::size_t k) {
  const auto n = d.n_leaves;
  if (k < 1 || k > n) {
    throw ConfigError("cut_tree: k=" + std::to_string(k) + " out of range [1, " + std::to_string(n) + "]");
  }
  // Node id -> representative leaf.
  std::vector<std::size_t> rep(n + d.merges.size());
  std::iota(rep.begin(), rep.begin() + static_cast<std::ptrdiff_t>(n), 0);
  UnionFind uf(n);
  for (std::size_t m = 0; m < n - k; ++m) {
    const auto& mg = d.merges[m];
    const auto ra = uf.find(rep[mg.left]);
    const auto rb = uf.find(rep[mg.right]);
    const auto root = std::min(ra, rb);
    uf.parent[std::max(ra, rb)] = root;
    rep[n + m] = root;
  }
  LabelVector labels;
  labels.labels.assign(n, -1);
  std::vector<std::int32_t> label_of_root(n, -1);
  std::int32_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = uf.find(i);
    if (label_of_root[r] < 0) label_of_root[r] = next++;
    labels[i] = label_of_root[r];
  }
  return labels;
}

GranularitySet::GranularitySet(std::vector<std::size_t> l) : levels(std::move(l)) {
  if (levels.empty()) throw ConfigError("granularity set is empty");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] < 1) throw ConfigError("granularity levels must be >= 1");
    if (i > 0 && levels[i] >= levels[i - 1]) throw ConfigError("granularity levels must be strictly descending");
  }
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (count >= n) return idx;
  CounterRng rng(seed, n, Stream::subsample);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(idx[i], idx[i + rng.below(n - i)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<LevelClustering> multi_granularity_labels(const Matrix& x, const GranularitySet& g,
                                                      std::size_t sample_cap, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(x.rows());
  const bool subsample = sample_cap > 0 && n > sample_cap;
  const auto used = subsample ? sample_cap : n;
  if (g.finest() > used) {
    throw ConfigError("granularity " + std::to_string(g.finest()) + " exceeds " + std::to_string(used) +
                      " clusterable rows");
  }
  std::vector<std::size_t> sample;
  Matrix xs;
  if (subsample) {
    sample = sample_indices(n, sample_cap, seed);
    xs.resize(static_cast<Eigen::Index>(sample.size()), x.cols());
    for (std::size_t i = 0; i < sample.size(); ++i) xs.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(sample[i]));
  }
  const Matrix& tree_input = subsample ? xs : x;

  std::vector<LevelClustering> out;
  if (used == 1) {
    // A single row can only form the k = 1 level.
    out.push_back({1, tree_input, LabelVector(std::vector<std::int32_t>(n, 0))});
    return out;
  }
  const auto tree = ward_tree(tree_input);
  for (auto k : g.levels) {
    LevelClustering level;
    level.k = k;
    auto cut = cut_tree(tree, k);
    level.centroids = cluster_means(tree_input, cut, k);
    if (subsample) {
      const auto nearest = assign_nearest(x, level.centroids);
      level.labels = nearest;
      for (std::size_t i = 0; i < sample.size(); ++i) level.labels[sample[i]] = cut[i];
    } else {
      level.labels = std::move(cut);
    }
    out.push_back(std::move(level));
  }
  return out;
}

}  // namespace langtail::cluster
