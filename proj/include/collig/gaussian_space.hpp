// The truncated Gaussian product space (R^n, standard Gaussian): sampling,
// the right action x -> xA, Radon-Nikodym derivatives in log domain, and the
// weighted substitution operators T_lambda.
#pragma once

#include "collig/rng.hpp"
#include "collig/types.hpp"

#include <functional>

namespace collig {

struct GaussianSpace {
  int n = 1;
};

// An invertible linear map acting on row vectors from the right, with its
// log-determinant cached for Radon-Nikodym evaluation.
struct LinearSymmetry {
  int n = 0;
  Mat a;
  real log_det = 0.0;
};

// Validates shape/finiteness/invertibility and caches ln|det a|.
LinearSymmetry make_linear_symmetry(Mat a);

// count i.i.d. samples of the n-dimensional standard Gaussian, one per row.
Mat sample(const GaussianSpace& space, int count, RngStream& rng);

// Row-vector action x -> xA.
Row act(const Row& x, const LinearSymmetry& a);

// ln of the density of the pushed-forward Gaussian against the Gaussian:
//   ln|det A| - ||xA||^2/2 + ||x||^2/2.
real radon_nikodym(const LinearSymmetry& a, const Row& x);

// Same derivative for A = diag(1 + t): sum_j [ln(1+t_j) -
// (2 t_j + t_j^2) x_j^2 / 2], a cancellation-free closed form.  Requires all
// t_j > -1 (InvalidParameter) and matching lengths (DimensionMismatch).
real radon_nikodym_diagonal(const Vec& t, const Row& x);

using ScalarField = std::function<cplx(const Row&)>;

// (T_lambda(A) f)(x) = f(xA) * exp(lambda * radon_nikodym(A, x)).  Values of
// lambda outside the strip 0 <= Re lambda <= 1 are allowed (the family is
// holomorphic in lambda) but provoke a stderr note.
cplx apply_T_lambda(const LinearSymmetry& a, cplx lambda, const ScalarField& f,
                    const Row& x);

// |rn(AB, x) - rn(A, x) - rn(B, xA)|: the chain-rule residual, identically
// zero in exact arithmetic.
real rn_cocycle_check(const LinearSymmetry& a, const LinearSymmetry& b,
                      const Row& x);

}  // namespace collig
