#include "langtail/spectral.hpp"

#include "langtail/cluster.hpp"
#include "langtail/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace langtail::spectral {

AffinityGraph build_affinity(const Matrix& features) {
  const auto n = features.rows();
  if (n < 2) throw ConfigError("build_affinity: need at least 2 superpoints");
  AffinityGraph g;
  g.weights = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double a = std::exp(-squared_distance(features, i, features, j));
      g.weights(i, j) = a;
      g.weights(j, i) = a;
    }
  }
  return g;
}

Matrix normalized_laplacian(const AffinityGraph& g) {
  const auto n = g.n();
  const Vector degree = g.weights.rowwise().sum();
  Vector inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(degree(i) > 0.0)) {
      throw DegenerateGraphError("node " + std::to_string(i) + " has zero degree");
    }
    inv_sqrt(i) = 1.0 / std::sqrt(degree(i));
  }
  Matrix l(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double lap = (i == j ? degree(i) : 0.0) - g.weights(i, j);
      l(i, j) = inv_sqrt(i) * lap * inv_sqrt(j);
    }
  }
  // Exact symmetry regardless of rounding order.
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) l(j, i) = l(i, j);
  }
  return l;
}

SpectralBasis eigendecompose(const Matrix& l) {
  if (l.rows() != l.cols() || l.rows() < 1) throw ShapeError("eigendecompose: matrix must be square");
  const double scale = std::max(1.0, l.cwiseAbs().maxCoeff());
  if (!l.allFinite()) throw DataError("eigendecompose: non-finite entry");
  if ((l - l.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw ShapeError("eigendecompose: matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(Eigen::MatrixXd(l), Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) throw NumericError("eigendecompose: solver did not converge");
  SpectralBasis basis;
  basis.lambda = solver.eigenvalues();
  basis.u = solver.eigenvectors();
  for (Eigen::Index c = 0; c < basis.u.cols(); ++c) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index r = 0; r < basis.u.rows(); ++r) {
      // Largest magnitude wins; near-ties go to the lower row index.
      const double m = std::abs(basis.u(r, c));
      if (m > best * (1.0 + 1e-12)) {
        best = m;
        arg = r;
      }
    }
    if (basis.u(arg, c) < 0.0) basis.u.col(c) *= -1.0;
  }
  return basis;
}

Matrix graph_fourier(const SpectralBasis& basis, const Matrix& features) {
  if (basis.n() != features.rows()) {
    throw ShapeError("graph_fourier: basis has " + std::to_string(basis.n()) + " nodes, features have " +
                     std::to_string(features.rows()) + " rows");
  }
  return basis.u.transpose() * features;
}

RefinedPatterns group_patterns(const SpectralBasis& basis, const Matrix& frequency, std::size_t s_prime,
                               std::uint64_t seed, bool normalize_frequency) {
  const auto n = static_cast<std::size_t>(basis.u.cols());
  if (static_cast<std::size_t>(frequency.rows()) != n) throw ShapeError("group_patterns: one frequency row per pattern");
  if (s_prime < 1 || s_prime > n) {
    throw ConfigError("group_patterns: s_prime=" + std::to_string(s_prime) + " must be in [1, " + std::to_string(n) + "]");
  }
  Matrix rows = frequency;
  if (normalize_frequency) {
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      const double norm = rows.row(i).norm();
      if (norm > 0.0) rows.row(i) /= norm;
    }
  }
  const auto km = cluster::kmeans(rows, s_prime, seed, 100);
  RefinedPatterns p;
  p.cluster_of_pattern = km.assignments.labels;
  // Empty k-means clusters are dropped; columns keep label order.
  std::vector<bool> used(s_prime, false);
  for (auto label : p.cluster_of_pattern) used[static_cast<std::size_t>(label)] = true;
  std::vector<std::int32_t> column_of(s_prime, -1);
  std::int32_t next = 0;
  for (std::size_t c = 0; c < s_prime; ++c) {
    if (used[c]) column_of[c] = next++;
  }
  p.v = Matrix::Zero(basis.u.rows(), next);
  std::vector<std::size_t> count(static_cast<std::size_t>(next), 0);
  for (std::size_t s = 0; s < n; ++s) {
    auto& label = p.cluster_of_pattern[s];
    label = column_of[static_cast<std::size_t>(label)];
    p.v.col(label) += basis.u.col(static_cast<Eigen::Index>(s));
    ++count[static_cast<std::size_t>(label)];
  }
  for (Eigen::Index c = 0; c < p.v.cols(); ++c) p.v.col(c) /= static_cast<double>(count[static_cast<std::size_t>(c)]);
  return p;
}

Matrix global_superpoint_features(const RefinedPatterns& p) { return p.v; }

GlobalBranchResult global_branch(const Matrix& superpoint_features, const GlobalBranchConfig& cfg) {
  GlobalBranchResult r;
  const Matrix normalized = normalize_rows(superpoint_features);
  const auto laplacian = normalized_laplacian(build_affinity(normalized));
  r.basis = eigendecompose(laplacian);
  const Matrix freq = graph_fourier(r.basis, normalized);
  const auto s_prime = std::min<std::size_t>(cfg.s_prime, static_cast<std::size_t>(normalized.rows()));
  r.patterns = group_patterns(r.basis, freq, s_prime, cfg.seed, cfg.normalize_frequency);
  r.features = global_superpoint_features(r.patterns);
  return r;
}

}  // namespace langtail::spectral
