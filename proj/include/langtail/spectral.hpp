#pragma once

#include "langtail/matrix.hpp"

#include <cstdint>
#include <vector>

namespace langtail::spectral {

/// Dense symmetric weights with zero diagonal.
struct AffinityGraph {
  Matrix weights;
  Eigen::Index n() const { return weights.rows(); }
};

/// Eigenpairs of a symmetric matrix, eigenvalues ascending. Columns of `u`
/// are the graph Fourier basis; each column's largest-magnitude entry is
/// positive.
struct SpectralBasis {
  Matrix u;
  Vector lambda;
  Eigen::Index n() const { return u.rows(); }
};

struct RefinedPatterns {
  Matrix v;                                   // n x S'
  std::vector<std::int32_t> cluster_of_pattern;  // eigenvector index -> column of v
};

/// a_ij = exp(-|f_i - f_j|^2) off the diagonal, 0 on it.
AffinityGraph build_affinity(const Matrix& features);

/// D^{-1/2} (D - A) D^{-1/2}. Throws DegenerateGraphError on an isolated node.
Matrix normalized_laplacian(const AffinityGraph& g);

/// Throws ShapeError when `l` is not square and symmetric.
SpectralBasis eigendecompose(const Matrix& l);

/// U^T F: row s is the frequency response of pattern u_s.
Matrix graph_fourier(const SpectralBasis& basis, const Matrix& features);

/// K-means over the frequency rows; each refined pattern is the mean of its
/// cluster's eigenvectors.
RefinedPatterns group_patterns(const SpectralBasis& basis, const Matrix& frequency, std::size_t s_prime,
                               std::uint64_t seed, bool normalize_frequency = false);

/// Row i is superpoint i's loading over the refined patterns.
Matrix global_superpoint_features(const RefinedPatterns& p);

struct GlobalBranchConfig {
  std::size_t s_prime = 64;
  bool normalize_frequency = false;
  std::uint64_t seed = 0;
};

struct GlobalBranchResult {
  SpectralBasis basis;
  RefinedPatterns patterns;
  Matrix features;  // global_superpoint_features
};

/// Full chain over superpoint features: row-normalize, affinity, Laplacian,
/// eigenbasis, projection, grouping.
GlobalBranchResult global_branch(const Matrix& superpoint_features, const GlobalBranchConfig& cfg);

}  // namespace langtail::spectral
