#include "langtail/errors.hpp"
#include "langtail/spectral.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace langtail;
using namespace langtail::spectral;

namespace {

Matrix random_laplacian(CounterRng& rng, Eigen::Index n) {
  return normalized_laplacian(build_affinity(oracle::random_matrix(rng, n, 3, 0.7)));
}

}  // namespace

TEST_SUITE("spectral") {

TEST_CASE("affinity values") {
  Matrix f(3, 2);
  f << 0, 0, 0, 0, std::sqrt(std::log(2.0)), 0;
  const auto g = build_affinity(f);
  CHECK(g.weights(0, 1) == 1.0);
  CHECK(g.weights(0, 2) == doctest::Approx(0.5).epsilon(1e-14));
  for (int i = 0; i < 3; ++i) CHECK(g.weights(i, i) == 0.0);

  const auto same = build_affinity(Matrix::Constant(3, 4, 0.3));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) CHECK(same.weights(i, j) == (i == j ? 0.0 : 1.0));
  }
  CHECK_THROWS_AS(build_affinity(Matrix::Ones(1, 2)), ConfigError);
}

TEST_CASE("two-node Laplacian") {
  for (double a : {0.01, 0.5, 1.0}) {
    AffinityGraph g{Matrix::Zero(2, 2)};
    g.weights(0, 1) = g.weights(1, 0) = a;
    const auto l = normalized_laplacian(g);
    CHECK(l(0, 0) == doctest::Approx(1.0));
    CHECK(l(0, 1) == doctest::Approx(-1.0));
    const auto b = eigendecompose(l);
    CHECK(std::abs(b.lambda(0)) < 1e-10);
    CHECK(std::abs(b.lambda(1) - 2.0) < 1e-10);
    const double r = 1.0 / std::sqrt(2.0);
    CHECK(b.u(0, 0) == doctest::Approx(r));
    CHECK(b.u(1, 0) == doctest::Approx(r));
    CHECK(b.u(0, 1) == doctest::Approx(r));
    CHECK(b.u(1, 1) == doctest::Approx(-r));
  }
}

TEST_CASE("complete graph on three nodes") {
  AffinityGraph g{Matrix::Constant(3, 3, 0.4)};
  for (int i = 0; i < 3; ++i) g.weights(i, i) = 0.0;
  const auto b = eigendecompose(normalized_laplacian(g));
  CHECK(std::abs(b.lambda(0)) < 1e-12);
  CHECK(b.lambda(1) == doctest::Approx(1.5));
  CHECK(b.lambda(2) == doctest::Approx(1.5));
}

TEST_CASE("isolated node is degenerate") {
  AffinityGraph g{Matrix::Zero(3, 3)};
  g.weights(0, 1) = g.weights(1, 0) = 1.0;
  CHECK_THROWS_AS(normalized_laplacian(g), DegenerateGraphError);
}

TEST_CASE("Laplacian symmetry and eigendecomposition reconstruction") {
  for (std::uint64_t t = 0; t < 10; ++t) {
    CounterRng rng(t, 2, Stream::test);
    const auto l = random_laplacian(rng, 6 + static_cast<Eigen::Index>(t));
    CHECK((l - l.transpose()).norm() == 0.0);
    const auto b = eigendecompose(l);
    const Matrix back = b.u * b.lambda.asDiagonal() * b.u.transpose();
    CHECK((back - l).norm() / l.norm() < 1e-10);
    for (Eigen::Index i = 1; i < b.lambda.size(); ++i) CHECK(b.lambda(i) >= b.lambda(i - 1));
  }
  const auto id = eigendecompose(Matrix::Identity(3, 3));
  for (int i = 0; i < 3; ++i) CHECK(id.lambda(i) == doctest::Approx(1.0));
  Matrix asym = Matrix::Identity(2, 2);
  asym(0, 1) = 0.5;
  CHECK_THROWS_AS(eigendecompose(asym), ShapeError);
  CHECK_THROWS_AS(eigendecompose(Matrix::Zero(2, 3)), ShapeError);
}

TEST_CASE("sign convention makes the largest entry positive") {
  CounterRng rng(9, 0, Stream::test);
  const auto b = eigendecompose(random_laplacian(rng, 8));
  for (Eigen::Index c = 0; c < b.u.cols(); ++c) {
    Eigen::Index arg = 0;
    b.u.col(c).cwiseAbs().maxCoeff(&arg);
    CHECK(b.u(arg, c) > 0.0);
  }
}

TEST_CASE("graph Fourier transform") {
  CounterRng rng(10, 0, Stream::test);
  const Matrix f = oracle::random_matrix(rng, 5, 3);
  SpectralBasis identity{Matrix::Identity(5, 5), Vector::Zero(5)};
  CHECK(graph_fourier(identity, f) == f);

  const auto b = eigendecompose(random_laplacian(rng, 5));
  const Matrix feq = graph_fourier(b, f);
  CHECK((b.u * feq - f).norm() < 1e-10);
  CHECK(std::abs(feq.norm() - f.norm()) < 1e-10);
  CHECK_THROWS_AS(graph_fourier(b, oracle::random_matrix(rng, 4, 3)), ShapeError);
}

TEST_CASE("pattern grouping") {
  CounterRng rng(11, 0, Stream::test);
  const auto b = eigendecompose(random_laplacian(rng, 6));
  const Matrix freq = oracle::random_matrix(rng, 6, 3);

  // One group per eigenvector: V is U with columns permuted.
  const auto all = group_patterns(b, freq, 6, 0);
  REQUIRE(all.v.cols() == 6);
  for (Eigen::Index s = 0; s < 6; ++s) {
    CHECK((all.v.col(all.cluster_of_pattern[static_cast<std::size_t>(s)]) - b.u.col(s)).norm() < 1e-14);
  }

  const auto one = group_patterns(b, freq, 1, 0);
  REQUIRE(one.v.cols() == 1);
  CHECK((one.v.col(0) - b.u.rowwise().mean()).norm() < 1e-14);

  // Rows 0,2 and 1,3 share a frequency signature.
  SpectralBasis four{Matrix::Zero(4, 4), Vector::Zero(4)};
  four.u << 1, 2, 3, 4,
            5, 6, 7, 8,
            9, 10, 11, 12,
            13, 14, 15, 16;
  Matrix dup(4, 2);
  dup << 0, 0, 5, 5, 0, 0, 5, 5;
  const auto two = group_patterns(four, dup, 2, 0);
  REQUIRE(two.v.cols() == 2);
  CHECK(two.cluster_of_pattern[0] == two.cluster_of_pattern[2]);
  CHECK(two.cluster_of_pattern[1] == two.cluster_of_pattern[3]);
  CHECK(two.cluster_of_pattern[0] != two.cluster_of_pattern[1]);
  const auto c02 = two.cluster_of_pattern[0];
  const auto c13 = two.cluster_of_pattern[1];
  CHECK(two.v(0, c02) == doctest::Approx(2.0));   // (1 + 3) / 2
  CHECK(two.v(3, c02) == doctest::Approx(14.0));  // (13 + 15) / 2
  CHECK(two.v(0, c13) == doctest::Approx(3.0));   // (2 + 4) / 2
  CHECK(two.v(2, c13) == doctest::Approx(11.0));  // (10 + 12) / 2

  CHECK_THROWS_AS(group_patterns(b, freq, 7, 0), ConfigError);
  CHECK_THROWS_AS(group_patterns(b, freq, 0, 0), ConfigError);
}

TEST_CASE("global branch output shape") {
  CounterRng rng(12, 0, Stream::test);
  const Matrix f = oracle::random_matrix(rng, 30, 4);
  const auto r = global_branch(f, {8, false, 1});
  CHECK(r.features.rows() == 30);
  CHECK(r.features.cols() <= 8);
  CHECK(r.features == global_superpoint_features(r.patterns));
  const auto small = global_branch(f.topRows(5), {64, false, 1});
  CHECK(small.features.cols() <= 5);
  // Same input, same seed, same result.
  CHECK(global_branch(f, {8, false, 1}).features == r.features);
}

}  // TEST_SUITE
