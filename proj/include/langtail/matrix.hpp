#pragma once

#include <Eigen/Dense>

#include <cstddef>

namespace langtail {

/// Dense row-major matrix of doubles. Rows are items (points, superpoints,
/// entities), columns are feature dimensions.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// On-disk feature matrices and every in-memory feature table share this type.
using FeatureMatrix = Matrix;

/// Throws DataError when the matrix is empty or holds a non-finite value.
void check_feature_matrix(const Matrix& m, const char* what);

/// Row-wise L2 normalization. Throws NormalizationError on a zero row.
Matrix normalize_rows(const Matrix& m);

/// Squared Euclidean distance between row i of a and row j of b.
inline double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

}  // namespace langtail
