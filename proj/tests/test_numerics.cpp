#include "doctest.h"

#include <Eigen/Eigenvalues>

#include "collig/linalg.hpp"
#include "collig/quadrature.hpp"
#include "collig/rng.hpp"
#include "collig/types.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

using namespace collig;

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature
// ---------------------------------------------------------------------------

TEST_CASE("gauss_hermite rejects out-of-range orders") {
  CHECK_THROWS_AS(gauss_hermite(0), InvalidOrder);
  CHECK_THROWS_AS(gauss_hermite(-5), InvalidOrder);
  CHECK_THROWS_AS(gauss_hermite(201), InvalidOrder);
  CHECK_NOTHROW(gauss_hermite(1));
  CHECK_NOTHROW(gauss_hermite(200));
}

TEST_CASE("gauss_hermite basic structure") {
  for (int order : {1, 2, 3, 7, 40, 128}) {
    CAPTURE(order);
    const QuadratureRule rule = gauss_hermite(order);
    REQUIRE(rule.order() == order);
    REQUIRE(rule.weights.size() == order);
    // weights positive, summing to one
    CHECK(rule.weights.minCoeff() > 0.0);
    CHECK(std::abs(rule.weights.sum() - 1.0) < 1e-12);
    // nodes strictly increasing and symmetric about 0
    for (int i = 1; i < order; ++i) CHECK(rule.nodes[i] > rule.nodes[i - 1]);
    for (int i = 0; i < order; ++i) {
      CHECK(std::abs(rule.nodes[i] + rule.nodes[order - 1 - i]) < 1e-13);
    }
  }
}

TEST_CASE("gauss_hermite reproduces Gaussian moments") {
  // E[x^2] = 1 for every order >= 2, E[x^4] = 3 for every order >= 3.
  for (int order : {2, 3, 5, 11, 40}) {
    CAPTURE(order);
    const QuadratureRule rule = gauss_hermite(order);
    const real m2 = (rule.weights.array() * rule.nodes.array().square()).sum();
    CHECK(std::abs(m2 - 1.0) < 1e-13);
    if (order >= 3) {
      const real m4 =
          (rule.weights.array() * rule.nodes.array().pow(4)).sum();
      CHECK(std::abs(m4 - 3.0) < 1e-12);
    }
    // odd moments vanish by symmetry
    const real m3 = (rule.weights.array() * rule.nodes.array().cube()).sum();
    CHECK(std::abs(m3) < 1e-12);
  }
}

TEST_CASE("gauss_hermite integrates the Gaussian mgf") {
  // E[e^{cx}] = e^{c^2/2}; a 40-point rule nails it for |c| <= 3.
  const QuadratureRule rule = gauss_hermite(40);
  for (real c : {-3.0, -1.7, -0.5, 0.25, 1.0, 2.0, 3.0}) {
    CAPTURE(c);
    const real numeric =
        (rule.weights.array() * (c * rule.nodes.array()).exp()).sum();
    const real exact = std::exp(0.5 * c * c);
    CHECK(rel_err(numeric, exact) < 1e-8);
  }
}

TEST_CASE("gauss_hermite is exact to degree 2*order-1") {
  // order 5 integrates x^8 exactly (E[x^8] = 105) but must miss x^10.
  const QuadratureRule rule = gauss_hermite(5);
  const real m8 = (rule.weights.array() * rule.nodes.array().pow(8)).sum();
  CHECK(rel_err(m8, 105.0) < 1e-12);
  const real m10 = (rule.weights.array() * rule.nodes.array().pow(10)).sum();
  CHECK(std::abs(m10 - 945.0) > 1.0);  // degree 10 is out of reach at order 5
}

// ---------------------------------------------------------------------------
// SVD / polar / determinant helpers
// ---------------------------------------------------------------------------

namespace {

Mat random_matrix(int rows, int cols, RngStream& rng) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("svd reconstructs and has orthogonal factors") {
  RngStream rng(2024, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const int rows = 1 + static_cast<int>(rng.uniform() * 6);
    const int cols = 1 + static_cast<int>(rng.uniform() * 6);
    const Mat a = random_matrix(rows, cols, rng);
    const SvdResult f = svd(a);
    REQUIRE(f.u.rows() == rows);
    REQUIRE(f.v.rows() == cols);
    const int k = static_cast<int>(f.sigma.size());
    REQUIRE(k == std::min(rows, cols));
    // descending, non-negative spectrum
    for (int i = 1; i < k; ++i) CHECK(f.sigma[i] <= f.sigma[i - 1]);
    CHECK(f.sigma[k - 1] >= 0.0);
    // orthogonality
    CHECK((f.u.transpose() * f.u - Mat::Identity(rows, rows)).cwiseAbs()
              .maxCoeff() < 1e-13);
    CHECK((f.v.transpose() * f.v - Mat::Identity(cols, cols)).cwiseAbs()
              .maxCoeff() < 1e-13);
    // reconstruction
    Mat middle = Mat::Zero(rows, cols);
    middle.topLeftCorner(k, k) = Mat(f.sigma.asDiagonal());
    CHECK((f.u * middle * f.v.transpose() - a).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("svd sign convention is deterministic") {
  RngStream rng(11, 0);
  const Mat a = random_matrix(4, 3, rng);
  const SvdResult f1 = svd(a);
  const SvdResult f2 = svd(a);
  CHECK((f1.u - f2.u).cwiseAbs().maxCoeff() == 0.0);
  CHECK((f1.v - f2.v).cwiseAbs().maxCoeff() == 0.0);
  // anchor entries are non-negative
  for (int kcol = 0; kcol < f1.v.cols() && kcol < f1.sigma.size(); ++kcol) {
    int anchor = 0;
    f1.v.col(kcol).cwiseAbs().maxCoeff(&anchor);
    CHECK(f1.v(anchor, kcol) >= 0.0);
  }
}

TEST_CASE("svd rejects bad input") {
  CHECK_THROWS_AS(svd(Mat()), InvalidMatrix);
  Mat bad = Mat::Ones(2, 2);
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS(svd(bad), InvalidMatrix);
}

TEST_CASE("polar_decompose splits into orthogonal times SPD") {
  RngStream rng(5, 0);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform() * 4);
    Mat a = random_matrix(n, n, rng);
    a += 3.0 * Mat::Identity(n, n);  // keep comfortably invertible
    const PolarResult pf = polar_decompose(a);
    CHECK((pf.q.transpose() * pf.q - Mat::Identity(n, n)).cwiseAbs()
              .maxCoeff() < 1e-13);
    CHECK((pf.p - pf.p.transpose()).cwiseAbs().maxCoeff() < 1e-13);
    Eigen::SelfAdjointEigenSolver<Mat> es(pf.p);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    CHECK((pf.q * pf.p - a).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("polar_decompose rejects singular input") {
  Mat a = Mat::Zero(3, 3);
  a(0, 0) = 1.0;
  a(1, 1) = 2.0;  // rank 2
  CHECK_THROWS_AS(polar_decompose(a), SingularMatrix);
  CHECK_THROWS_AS(polar_decompose(Mat::Ones(2, 3)), InvalidMatrix);
}

TEST_CASE("log_abs_det matches hand values and is additive") {
  Mat d = Mat::Zero(3, 3);
  d.diagonal() << 2.0, -0.5, 4.0;  // |det| = 4
  const LogAbsDet ld = log_abs_det(d);
  CHECK(!ld.singular);
  CHECK(std::abs(ld.value - std::log(4.0)) < 1e-14);

  RngStream rng(77, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform() * 5);
    const Mat a = random_matrix(n, n, rng) + 2.0 * Mat::Identity(n, n);
    const Mat b = random_matrix(n, n, rng) + 2.0 * Mat::Identity(n, n);
    const real lhs = log_abs_det(Mat(a * b)).value;
    const real rhs = log_abs_det(a).value + log_abs_det(b).value;
    CHECK(std::abs(lhs - rhs) < 1e-10);
  }
}

TEST_CASE("log_abs_det flags singular matrices") {
  Mat a = Mat::Ones(3, 3);  // rank 1
  const LogAbsDet ld = log_abs_det(a);
  CHECK(ld.singular);
  CHECK(std::isinf(ld.value));
  CHECK(ld.value < 0.0);
}

TEST_CASE("haar_orthogonal produces exactly orthogonal matrices") {
  RngStream rng(123, 0);
  for (int dim : {1, 2, 3, 5, 8}) {
    CAPTURE(dim);
    const Mat q = haar_orthogonal(dim, rng);
    CHECK((q.transpose() * q - Mat::Identity(dim, dim)).cwiseAbs()
              .maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(haar_orthogonal(0, rng), InvalidDimension);
}

TEST_CASE("haar_orthogonal has Haar first-entry statistics") {
  // For Haar O(n), E[q_00] = 0 and E[q_00^2] = 1/n.  With 4000 draws the
  // standard error of the mean of q_00^2 is about sqrt(2)/n/sqrt(4000);
  // allow five standard errors.
  RngStream rng(321, 0);
  const int dim = 3;
  const int draws = 4000;
  std::vector<real> first(draws), first_sq(draws);
  for (int t = 0; t < draws; ++t) {
    const Mat q = haar_orthogonal(dim, rng);
    first[t] = q(0, 0);
    first_sq[t] = q(0, 0) * q(0, 0);
  }
  const real mean = pairwise_sum(first) / draws;
  const real mean_sq = pairwise_sum(first_sq) / draws;
  CHECK(std::abs(mean) < 5.0 * std::sqrt(1.0 / dim / draws));
  CHECK(std::abs(mean_sq - 1.0 / dim) <
        5.0 * std::sqrt(2.0) / dim / std::sqrt(static_cast<real>(draws)));
}

// ---------------------------------------------------------------------------
// RngStream
// ---------------------------------------------------------------------------

TEST_CASE("RngStream emits the pinned reference sequence") {
  // First four raw outputs for (seed, stream) pairs, computed independently
  // from the published splitmix64/xoshiro256++ update rules.  Pinning them
  // catches silent reseeding or algorithm drift that would destroy
  // cross-host reproducibility.
  {
    RngStream rng(42, 0);
    CHECK(rng.next_u64() == 0x1ACD42E57001B8B5ULL);
    CHECK(rng.next_u64() == 0x979F2122E83B550DULL);
    CHECK(rng.next_u64() == 0x871AA1241AA07BC3ULL);
    CHECK(rng.next_u64() == 0xBA90E90EE338EB47ULL);
    CHECK(rng.counter() == 4);
  }
  {
    RngStream rng(42, 1);
    CHECK(rng.next_u64() == 0x840001DC19D0E15CULL);
  }
  {
    RngStream rng(7, 3);
    CHECK(rng.next_u64() == 0x69A65B8BC3F8B34DULL);
    const real u = RngStream(7, 3).uniform();
    CHECK(std::abs(u - 0.41269466554874412) < 1e-16);
  }
}

TEST_CASE("RngStream streams are reproducible and decorrelated") {
  RngStream a(999, 4);
  RngStream b(999, 4);
  RngStream c(999, 5);
  bool all_equal_ab = true;
  bool any_equal_ac = false;
  for (int i = 0; i < 64; ++i) {
    const std::uint64_t va = a.next_u64();
    const std::uint64_t vb = b.next_u64();
    const std::uint64_t vc = c.next_u64();
    all_equal_ab = all_equal_ab && (va == vb);
    any_equal_ac = any_equal_ac || (va == vc);
  }
  CHECK(all_equal_ab);
  CHECK(!any_equal_ac);
}

TEST_CASE("RngStream uniform lies in (0,1]") {
  RngStream rng(1, 0);
  real lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const real u = rng.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    if (!(u > 0.0 && u <= 1.0)) {
      FAIL("uniform out of range: ", u);
    }
  }
  CHECK(lo > 0.0);
  CHECK(hi <= 1.0);
  CHECK(hi > 0.999);  // actually explores the top of the interval
  CHECK(lo < 1e-3);
}

TEST_CASE("RngStream normal moments") {
  RngStream rng(31337, 0);
  const int draws = 200000;
  std::vector<real> x(draws), x2(draws), x3(draws), x4(draws);
  for (int i = 0; i < draws; ++i) {
    const real v = rng.normal();
    x[i] = v;
    x2[i] = v * v;
    x3[i] = v * v * v;
    x4[i] = v * v * v * v;
  }
  const real n = draws;
  // five-sigma bands around N(0,1) moments
  CHECK(std::abs(pairwise_sum(x) / n) < 5.0 / std::sqrt(n));
  CHECK(std::abs(pairwise_sum(x2) / n - 1.0) < 5.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(pairwise_sum(x3) / n) < 5.0 * std::sqrt(15.0 / n));
  CHECK(std::abs(pairwise_sum(x4) / n - 3.0) < 5.0 * std::sqrt(96.0 / n));
}

// ---------------------------------------------------------------------------
// pairwise_sum / rel_err
// ---------------------------------------------------------------------------

TEST_CASE("pairwise_sum matches exact sums") {
  std::vector<real> v;
  CHECK(pairwise_sum(v) == 0.0);
  v = {1.5};
  CHECK(pairwise_sum(v) == 1.5);
  v = {1.0, 2.0, 3.0, 4.0, 5.0};
  CHECK(pairwise_sum(v) == 15.0);

  // 2^20 copies of 0.1: pairwise stays at full precision where a naive
  // left-to-right loop has drifted by ~1e-9.
  const std::size_t count = 1u << 20;
  std::vector<real> tenth(count, 0.1);
  const real exact = 0.1 * static_cast<real>(count);
  CHECK(std::abs(pairwise_sum(tenth) - exact) < 1e-10);
}

TEST_CASE("rel_err uses the larger magnitude and a floor") {
  CHECK(rel_err(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(rel_err(0.0, 0.0) == 0.0);
  CHECK(rel_err(1e-15, 0.0) == doctest::Approx(1e-3));  // floored at 1e-12
  CHECK(rel_err(cplx(0.0, 2.0), cplx(0.0, 1.0)) == doctest::Approx(0.5));
}
