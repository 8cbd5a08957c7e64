// Dense factorizations with deterministic output conventions.
#pragma once

#include "collig/rng.hpp"
#include "collig/types.hpp"

namespace collig {

// Full SVD a = u * diag(sigma) * v^T with sigma sorted descending.  The sign
// ambiguity of the singular pairs is resolved deterministically: for each
// column k the entry of v with the largest magnitude (smallest row index on
// ties) is made non-negative, flipping u's column alongside.  Raises
// InvalidMatrix on empty or non-finite input.
struct SvdResult {
  Mat u;
  Vec sigma;
  Mat v;
};
SvdResult svd(const Mat& a);

// Polar factorization a = q * p with q orthogonal and p symmetric positive
// semidefinite (square a only).  Raises SingularMatrix when sigma_min <=
// 1e-12 * sigma_max, where the orthogonal factor stops being well determined.
struct PolarResult {
  Mat q;
  Mat p;
};
PolarResult polar_decompose(const Mat& a);

// Haar-distributed orthogonal matrix: QR of an iid N(0,1) matrix with the
// R-diagonal sign fix that makes the distribution exactly uniform.
Mat haar_orthogonal(int dim, RngStream& rng);

// log|det a| for square a.  Singular input is reported, not thrown: value is
// -infinity and `singular` is set.
struct LogAbsDet {
  real value = 0.0;
  bool singular = false;
};
LogAbsDet log_abs_det(const Mat& a);

}  // namespace collig
