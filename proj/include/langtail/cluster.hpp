#pragma once

#include "langtail/data_model.hpp"
#include "langtail/matrix.hpp"

#include <cstdint>
#include <vector>

namespace langtail::cluster {

struct KMeansResult {
  Matrix centroids;               // k x C
  LabelVector assignments;        // per row, in [0, k)
  std::vector<double> inertia;    // after each iteration
  int iterations = 0;
};

/// Lloyd iterations from greedy farthest-point seeding. The first seed is
/// drawn from `seed`; later seeds maximize distance to the chosen set.
/// Empty clusters are re-seeded at the point farthest from its centroid.
KMeansResult kmeans(const Matrix& x, std::size_t k, std::uint64_t seed, int max_iters);

/// Sum of squared distances from each row to its assigned centroid.
double inertia(const Matrix& x, const Matrix& centroids, const LabelVector& labels);

struct Merge {
  std::size_t left;   // node ids: leaves are [0, n), merge i creates node n + i
  std::size_t right;  // left < right
  double cost;        // raw increase in within-cluster sum of squares
  std::size_t size;
};

struct Dendrogram {
  std::size_t n_leaves = 0;
  std::vector<Merge> merges;  // n_leaves - 1 merges in non-decreasing cost
};

/// Ward agglomeration via a nearest-neighbour chain with Lance-Williams
/// updates on a condensed matrix of merge costs.
/// Cost of merging clusters a and b: n_a n_b / (n_a + n_b) * |mu_a - mu_b|^2.
Dendrogram ward_tree(const Matrix& x);

/// Undo the last k-1 merges. Labels are dense in [0, k), numbered by the
/// smallest leaf index in each cluster.
LabelVector cut_tree(const Dendrogram& d, std::size_t k);

/// Descending cluster counts, e.g. {120, 80, 20}.
struct GranularitySet {
  std::vector<std::size_t> levels;

  GranularitySet() = default;
  explicit GranularitySet(std::vector<std::size_t> l);
  std::size_t finest() const { return levels.front(); }
  std::size_t primary() const { return levels.back(); }
};

struct LevelClustering {
  std::size_t k = 0;
  Matrix centroids;     // k x C, cluster means
  LabelVector labels;   // per row
};

/// Per-row cluster means for dense labels in [0, k).
Matrix cluster_means(const Matrix& x, const LabelVector& labels, std::size_t k);

/// Nearest centroid (Euclidean, ties to the lower index) for every row.
LabelVector assign_nearest(const Matrix& x, const Matrix& centroids);

inline constexpr std::size_t kDefaultSampleCap = 30000;

/// One Ward tree, one cut per level. When x has more than `sample_cap` rows a
/// uniform subsample (drawn from `seed`) builds the tree and the held-out rows
/// join the nearest cut-level centroid.
std::vector<LevelClustering> multi_granularity_labels(const Matrix& x, const GranularitySet& g,
                                                      std::size_t sample_cap = kDefaultSampleCap,
                                                      std::uint64_t seed = 0);

/// Sorted uniform sample of `count` distinct indices from [0, n).
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::uint64_t seed);

}  // namespace langtail::cluster
