// Finite-truncation operator colligations: representatives, the inner-space
// concatenating block product, double-coset normalization, and Potapov
// coordinates.
#pragma once

#include "collig/linalg.hpp"
#include "collig/rng.hpp"
#include "collig/types.hpp"

#include <string>

namespace collig {

// An invertible (n+m) x (n+m) representative of a rank-n colligation with
// auxiliary dimension m, considered up to diag(I_n, u) * rep * diag(I_n, v)
// for orthogonal u, v.  Block layout (row/column split n | m):
//
//   rep = | outer   coupling_out |      outer        n x n
//         | coupling_in   inner  |      coupling_out n x m
//                                       coupling_in  m x n
//                                       inner        m x m
struct Colligation {
  int n = 0;
  int m = 0;
  Mat rep;
};

// Validates shape (square of size n+m, finite entries) and invertibility
// (sigma_min > 1e-12 * sigma_max); raises InvalidDimension / InvalidMatrix /
// SingularMatrix.
Colligation make_colligation(int n, int m, Mat rep);

// The unit of the product: m = 0, rep = I_n.
Colligation identity_colligation(int n);

// Block product.  For a = (alpha beta; gamma delta) with auxiliary size m_a
// and b = (phi psi; theta kappa) with auxiliary size m_b (same rank n), the
// result has auxiliary size m_a + m_b and representative
//
//   | alpha*phi  beta  alpha*psi |
//   | gamma*phi  delta gamma*psi |
//   | theta      0     kappa     |
//
// so that the associated operators compose: T(a) T(b) = T(a*b).
// Raises DimensionMismatch when ranks differ.
Colligation product(const Colligation& a, const Colligation& b);

// diag(I_n, u) * rep * diag(I_n, v) for orthogonal u, v of size m: a new
// representative of the same colligation.  Raises DimensionMismatch on wrong
// sizes and NotOrthogonal when ||u^T u - I|| or ||v^T v - I|| exceeds 1e-8.
Colligation coset_act(const Colligation& g, const Mat& u, const Mat& v);

// The normalized representative (row/column split n | n | m-n):
//
//   | a  b1  b2     |      h: m-n positive reals, sorted descending,
//   | c  d1  d2     |      invariant under coset_act;
//   | 0  0   diag h |      c invertible.
struct CanonicalForm {
  int n = 0;
  int m = 0;
  Mat a, b1, b2;
  Mat c, d1, d2;
  Vec h;

  Mat assemble() const;            // the (n+m) x (n+m) matrix drawn above
  Colligation as_colligation() const;
};

// Two-sided orthogonal reduction to the canonical zero pattern:
//   stage 1  compress the m x n block coupling_in onto its top n rows by a
//            left orthogonal factor (SVD of coupling_in), producing c;
//   stage 2  reduce the remaining bottom (m-n) x m strip to (0 | diag h) by
//            a left orthogonal factor on those rows and a right orthogonal
//            factor on the last m columns (SVD of the strip, null space
//            completed deterministically by Householder QR).
// h is the strip's singular-value list; it is the double-coset invariant.
// Requires m >= n and sigma_min(coupling_in) > 1e-10 * sigma_max(rep);
// violations raise NonGenericColligation.
CanonicalForm canonical_form(const Colligation& g);

// Linear-fractional coordinates of a canonical form:
//   (P1 P2 Q; R1 R2 T) = (b1 - a c^-1 d1,  b2 - a c^-1 d2,  -a c^-1;
//                         c^-1 d1,         c^-1 d2,         c^-1)
// with the determinant logs cached for kernel evaluation.  Inverted by
// canonical_from_potapov.  Raises NonGenericColligation when c (or the
// resulting P1) is numerically singular.
struct PotapovCoords {
  Mat p1, p2, q;
  Mat r1, r2, t;
  real log_det_t = 0.0;   // ln|det T| = -ln|det c|
  real log_det_p1 = 0.0;  // ln|det P1|
  real sum_log_h = 0.0;   // sum_j ln h_j
};
PotapovCoords potapov(const CanonicalForm& cf);

// Inverse coordinate map: c = T^-1, a = -Q c, d = c (R1 R2), b = P - Q d.
CanonicalForm canonical_from_potapov(const PotapovCoords& pc, const Vec& h);

// ln|det rep| computed two ways — directly from the assembled matrix and as
// ln|det P1| + sum ln h_j - ln|det T| — returning the direct value.  The two
// routes agreeing is a structural invariant of the reduction; disagreement
// beyond 1e-6 raises InternalInconsistency.
real log_abs_det(const CanonicalForm& cf);

// Keeps the upper-left (n+k) x (n+k) corner as a colligation with m = k (the
// discarded auxiliary directions are replaced by identity, which the corner
// convention realizes implicitly).  Raises InvalidTruncation unless
// 0 <= k <= g.m.
Colligation truncate(const Colligation& g, int k);

// Seeded generic representative: rep = (I + E) * diag(I_n, Q_haar) with E
// symmetric, |E_ij| <= decay^(i+j) (1-based), drawn uniformly.  Retries (new
// E and Q) until the reduction succeeds, at most 100 times, then raises
// GenerationFailed.  decay must lie in (0,1): InvalidParameter otherwise.
Colligation random_colligation(int n, int m, real decay, RngStream& rng);

// Exploratory escape hatch for non-generic inputs: adds iid noise of the
// given magnitude to rep until canonical_form succeeds (same retry budget).
// Verification code never calls this.
Colligation perturbed_generic(const Colligation& g, RngStream& rng,
                              real magnitude = 1e-8);

// JSON documents: {"n": .., "m": .., "rep": [row-major]} for colligations;
// named blocks plus an "h" array for canonical forms.  Binary64 values
// round-trip exactly.  Malformed documents raise InvalidConfig.
std::string to_json(const Colligation& g);
Colligation colligation_from_json(const std::string& text);
std::string to_json(const CanonicalForm& cf);
CanonicalForm canonical_form_from_json(const std::string& text);

}  // namespace collig
