#include "doctest.h"

#include "collig/gaussian_space.hpp"
#include "collig/linalg.hpp"

#include <cmath>
#include <complex>
#include <vector>

using namespace collig;

namespace {

Mat random_invertible(int size, RngStream& rng, real spread = 0.3) {
  Mat m = Mat::Identity(size, size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) m(i, j) += spread * rng.normal();
  return m;
}

}  // namespace

TEST_CASE("make_linear_symmetry validates and caches the determinant") {
  CHECK_THROWS_AS(make_linear_symmetry(Mat::Ones(2, 3)), InvalidMatrix);
  CHECK_THROWS_AS(make_linear_symmetry(Mat::Zero(2, 2)), SingularMatrix);
  Mat d = Mat::Zero(2, 2);
  d.diagonal() << 3.0, -0.5;
  const LinearSymmetry sym = make_linear_symmetry(d);
  CHECK(std::abs(sym.log_det - std::log(1.5)) < 1e-14);
}

TEST_CASE("sample has Gaussian first and second moments") {
  GaussianSpace space{2};
  RngStream rng(1001, 0);
  const int count = 100000;
  const Mat draws = sample(space, count, rng);
  // mean: 3 sigma = 3 / sqrt(count)
  const real band = 3.0 / std::sqrt(static_cast<real>(count));
  for (int j = 0; j < 2; ++j) {
    CHECK(std::abs(draws.col(j).mean()) < band);
  }
  // covariance: var of x^2 is 2, var of x*y is 1
  const Mat cov = draws.transpose() * draws / static_cast<real>(count);
  CHECK(std::abs(cov(0, 0) - 1.0) < 3.0 * std::sqrt(2.0 / count));
  CHECK(std::abs(cov(1, 1) - 1.0) < 3.0 * std::sqrt(2.0 / count));
  CHECK(std::abs(cov(0, 1)) < 3.0 / std::sqrt(static_cast<real>(count)));
}

TEST_CASE("sample is deterministic per stream") {
  GaussianSpace space{3};
  RngStream r1(55, 1), r2(55, 1);
  const Mat a = sample(space, 10, r1);
  const Mat b = sample(space, 10, r2);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("act is the row-vector action") {
  const LinearSymmetry id = make_linear_symmetry(Mat::Identity(2, 2));
  Row x(2);
  x << 1.0, 2.0;
  CHECK((act(x, id) - x).cwiseAbs().maxCoeff() == 0.0);

  Mat swap(2, 2);
  swap << 0.0, 1.0, 1.0, 0.0;
  const Row swapped = act(x, make_linear_symmetry(swap));
  CHECK(swapped[0] == 2.0);
  CHECK(swapped[1] == 1.0);

  Row wrong(3);
  wrong.setZero();
  CHECK_THROWS_AS(act(wrong, id), DimensionMismatch);
}

TEST_CASE("act is associative with the matrix product") {
  RngStream rng(2002, 0);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + trial % 3;
    const LinearSymmetry a = make_linear_symmetry(random_invertible(n, rng));
    const LinearSymmetry b = make_linear_symmetry(random_invertible(n, rng));
    const LinearSymmetry ab = make_linear_symmetry(a.a * b.a);
    Row x(n);
    for (int j = 0; j < n; ++j) x[j] = rng.normal();
    CHECK((act(act(x, a), b) - act(x, ab)).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("radon_nikodym closed values") {
  const LinearSymmetry id = make_linear_symmetry(Mat::Identity(3, 3));
  Row x(3);
  x << 0.3, -1.2, 0.7;
  CHECK(radon_nikodym(id, x) == 0.0);

  const LinearSymmetry d =
      make_linear_symmetry(Mat(Mat::Identity(1, 1) * 1.5));
  Row zero(1);
  zero << 0.0;
  CHECK(std::abs(radon_nikodym(d, zero) - std::log(1.5)) < 1e-15);
}

TEST_CASE("radon_nikodym conserves mass under the change of variables") {
  // E_x[exp(rn(A,x))] = 1 because exp(rn) is the density of the pullback.
  RngStream rng(3003, 0);
  const int n = 3, count = 100000;
  const LinearSymmetry a = make_linear_symmetry(random_invertible(n, rng, 0.1));
  GaussianSpace space{n};
  const Mat draws = sample(space, count, rng);
  std::vector<real> mass(count);
  for (int i = 0; i < count; ++i) {
    mass[i] = std::exp(radon_nikodym(a, Row(draws.row(i))));
  }
  const real mean = pairwise_sum(mass) / count;
  std::vector<real> sq(count);
  for (int i = 0; i < count; ++i) sq[i] = (mass[i] - mean) * (mass[i] - mean);
  const real stderr_est =
      std::sqrt(pairwise_sum(sq) / count / static_cast<real>(count));
  CHECK(std::abs(mean - 1.0) < 3.0 * stderr_est);
}

TEST_CASE("radon_nikodym is zero for orthogonal maps") {
  RngStream rng(4004, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 2 + trial;
    const LinearSymmetry q = make_linear_symmetry(haar_orthogonal(n, rng));
    for (int k = 0; k < 5; ++k) {
      Row x(n);
      for (int j = 0; j < n; ++j) x[j] = 2.0 * rng.normal();
      CHECK(std::abs(radon_nikodym(q, x)) < 1e-12);
    }
  }
}

TEST_CASE("radon_nikodym_diagonal closed values and agreement") {
  Row zero1(1);
  zero1 << 0.0;
  CHECK(radon_nikodym_diagonal(Vec::Zero(1), zero1) == 0.0);
  CHECK(std::abs(radon_nikodym_diagonal(Vec::Constant(1, 0.5), zero1) -
                 std::log(1.5)) < 1e-15);

  RngStream rng(5005, 0);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 4;
    Vec t(n);
    Row x(n);
    for (int j = 0; j < n; ++j) {
      t[j] = -0.9 + 2.0 * rng.uniform();  // inside (-1, 1.1)
      x[j] = rng.normal();
    }
    Mat a = Mat::Zero(n, n);
    a.diagonal() = (t.array() + 1.0).matrix();
    const real general = radon_nikodym(make_linear_symmetry(a), x);
    const real diagonal = radon_nikodym_diagonal(t, x);
    CHECK(std::abs(general - diagonal) < 1e-12);
  }

  Row x1(1);
  x1 << 0.0;
  CHECK_THROWS_AS(radon_nikodym_diagonal(Vec::Constant(1, -1.0), x1),
                  InvalidParameter);
  CHECK_THROWS_AS(radon_nikodym_diagonal(Vec::Zero(2), x1),
                  DimensionMismatch);
}

TEST_CASE("rn cocycle residual vanishes") {
  const LinearSymmetry id = make_linear_symmetry(Mat::Identity(2, 2));
  Row x0(2);
  x0 << 0.4, -0.8;
  CHECK(rn_cocycle_check(id, id, x0) == 0.0);

  RngStream rng(6006, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3;
    const LinearSymmetry a = make_linear_symmetry(random_invertible(n, rng));
    const LinearSymmetry b = make_linear_symmetry(random_invertible(n, rng));
    Row x(n);
    for (int j = 0; j < n; ++j) x[j] = rng.normal();
    CHECK(rn_cocycle_check(a, b, x) < 1e-10);
  }

  // diagonal pair: closed forms cancel almost exactly
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3;
    Mat da = Mat::Zero(n, n), db = Mat::Zero(n, n);
    Row x(n);
    for (int j = 0; j < n; ++j) {
      da(j, j) = 0.5 + rng.uniform();
      db(j, j) = 0.5 + rng.uniform();
      x[j] = rng.normal();
    }
    CHECK(rn_cocycle_check(make_linear_symmetry(da), make_linear_symmetry(db),
                           x) < 1e-12);
  }
}

TEST_CASE("apply_T_lambda specializes correctly") {
  RngStream rng(7007, 0);
  const int n = 2;
  const LinearSymmetry a = make_linear_symmetry(random_invertible(n, rng));
  const LinearSymmetry id = make_linear_symmetry(Mat::Identity(n, n));
  const ScalarField f = [](const Row& y) {
    return cplx(std::cos(y[0]) + 0.5 * y[1], 0.0);
  };
  Row x(n);
  x << 0.3, -0.9;
  // lambda = 0: pure substitution
  CHECK(std::abs(apply_T_lambda(a, cplx(0.0, 0.0), f, x) - f(act(x, a))) <
        1e-15);
  // identity map: f unchanged for any lambda
  CHECK(std::abs(apply_T_lambda(id, cplx(0.37, 0.2), f, x) - f(x)) < 1e-15);
}

TEST_CASE("apply_T_lambda is an isometry of L2 at lambda = 1/2") {
  // E |T_1/2 f|^2 = E |f|^2; estimate the difference with its own spread.
  RngStream rng(8008, 0);
  const int n = 2, count = 100000;
  const LinearSymmetry a = make_linear_symmetry(random_invertible(n, rng, 0.2));
  const ScalarField f = [](const Row& y) {
    return cplx(std::cos(y[0]), 0.0);
  };
  GaussianSpace space{n};
  const Mat draws = sample(space, count, rng);
  std::vector<real> diff(count);
  for (int i = 0; i < count; ++i) {
    const Row x = draws.row(i);
    const cplx tf = apply_T_lambda(a, cplx(0.5, 0.0), f, x);
    diff[i] = std::norm(tf) - std::norm(f(x));
  }
  const real mean = pairwise_sum(diff) / count;
  std::vector<real> sq(count);
  for (int i = 0; i < count; ++i) sq[i] = (diff[i] - mean) * (diff[i] - mean);
  const real stderr_est =
      std::sqrt(pairwise_sum(sq) / count / static_cast<real>(count));
  CHECK(std::abs(mean) < 3.0 * std::max(stderr_est, 1e-12));
}

TEST_CASE("T_lambda composes along the matrix product") {
  // Applying the B-operator then the A-operator equals the operator of the
  // matrix product A*B (right action: x(AB) = (xA)B).
  RngStream rng(9009, 0);
  const int n = 3;
  const LinearSymmetry a = make_linear_symmetry(random_invertible(n, rng));
  const LinearSymmetry b = make_linear_symmetry(random_invertible(n, rng));
  const LinearSymmetry ab = make_linear_symmetry(a.a * b.a);
  const ScalarField f = [](const Row& y) {
    return cplx(std::cos(y[0] + 0.5 * y[1]), std::sin(y[2]));
  };
  for (cplx lambda : {cplx(0.0, 0.0), cplx(0.5, 0.0), cplx(1.0, 0.0),
                      cplx(0.5, 0.3)}) {
    CAPTURE(lambda.real());
    for (int trial = 0; trial < 5; ++trial) {
      Row x(n);
      for (int j = 0; j < n; ++j) x[j] = rng.normal();
      const ScalarField tb = [&](const Row& y) {
        return apply_T_lambda(b, lambda, f, y);
      };
      const cplx composed = apply_T_lambda(a, lambda, tb, x);
      const cplx direct = apply_T_lambda(ab, lambda, f, x);
      CHECK(std::abs(composed - direct) < 1e-10);
    }
  }
}
