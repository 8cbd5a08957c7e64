#include "collig/gaussian_space.hpp"

#include "collig/linalg.hpp"

#include <cmath>
#include <iostream>

namespace collig {

LinearSymmetry make_linear_symmetry(Mat a) {
  if (a.rows() < 1 || a.rows() != a.cols()) {
    throw InvalidMatrix("linear symmetry: matrix must be square, size >= 1");
  }
  if (!is_finite(a)) {
    throw InvalidMatrix("linear symmetry: non-finite entries");
  }
  const LogAbsDet ld = log_abs_det(a);
  if (ld.singular) {
    throw SingularMatrix("linear symmetry: matrix is singular");
  }
  LinearSymmetry sym;
  sym.n = static_cast<int>(a.rows());
  sym.a = std::move(a);
  sym.log_det = ld.value;
  return sym;
}

Mat sample(const GaussianSpace& space, int count, RngStream& rng) {
  if (space.n < 1) throw InvalidDimension("sample: space dimension >= 1");
  if (count < 1) throw InvalidParameter("sample: count must be >= 1");
  Mat draws(count, space.n);
  for (int i = 0; i < count; ++i) {
    for (int j = 0; j < space.n; ++j) draws(i, j) = rng.normal();
  }
  return draws;
}

Row act(const Row& x, const LinearSymmetry& a) {
  if (x.size() != a.n) {
    throw DimensionMismatch("act: vector length differs from matrix size");
  }
  return x * a.a;
}

real radon_nikodym(const LinearSymmetry& a, const Row& x) {
  if (x.size() != a.n) {
    throw DimensionMismatch("radon_nikodym: vector length mismatch");
  }
  const Row xa = x * a.a;
  return a.log_det - 0.5 * xa.squaredNorm() + 0.5 * x.squaredNorm();
}

real radon_nikodym_diagonal(const Vec& t, const Row& x) {
  if (t.size() != x.size()) {
    throw DimensionMismatch("radon_nikodym_diagonal: length mismatch");
  }
  real acc = 0.0;
  for (int j = 0; j < t.size(); ++j) {
    if (!(t[j] > -1.0)) {
      throw InvalidParameter("radon_nikodym_diagonal: t entries must be > -1");
    }
    // ln(1+t) - ((1+t)^2 - 1) x^2 / 2, written to avoid cancellation
    acc += std::log1p(t[j]) -
           0.5 * (2.0 * t[j] + t[j] * t[j]) * x[j] * x[j];
  }
  return acc;
}

cplx apply_T_lambda(const LinearSymmetry& a, cplx lambda, const ScalarField& f,
                    const Row& x) {
  if (lambda.real() < -1e-12 || lambda.real() > 1.0 + 1e-12) {
    std::cerr << "note: T_lambda evaluated outside the strip 0 <= Re lambda "
                 "<= 1 (Re = "
              << lambda.real() << ")\n";
  }
  const real rn = radon_nikodym(a, x);
  return f(act(x, a)) * std::exp(lambda * rn);
}

real rn_cocycle_check(const LinearSymmetry& a, const LinearSymmetry& b,
                      const Row& x) {
  if (a.n != b.n) throw DimensionMismatch("rn_cocycle_check: size mismatch");
  const LinearSymmetry ab = make_linear_symmetry(a.a * b.a);
  const real lhs = radon_nikodym(ab, x);
  const real rhs = radon_nikodym(a, x) + radon_nikodym(b, act(x, a));
  return std::abs(lhs - rhs);
}

}  // namespace collig
