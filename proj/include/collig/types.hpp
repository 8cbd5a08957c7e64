// Scalar/matrix aliases, the shared error taxonomy, and small numeric helpers.
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace collig {

using real = double;
using cplx = std::complex<real>;

template <class Scalar>
using matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using col_vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using row_vector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Mat = matrix<real>;
using Vec = col_vector<real>;
using Row = row_vector<real>;
using CMat = matrix<cplx>;

// ---------------------------------------------------------------------------
// Error taxonomy.  Every precondition violation raises a typed error; callers
// that want perturb-and-retry behavior use the dedicated helpers instead.
// ---------------------------------------------------------------------------
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define COLLIG_DEFINE_ERROR(NAME) \
  struct NAME : Error {           \
    using Error::Error;           \
  }

COLLIG_DEFINE_ERROR(InvalidMatrix);         // non-finite or mis-shaped input
COLLIG_DEFINE_ERROR(SingularMatrix);        // factorization needs invertibility
COLLIG_DEFINE_ERROR(InvalidOrder);          // quadrature order out of range
COLLIG_DEFINE_ERROR(InvalidDimension);      // dimension must be positive
COLLIG_DEFINE_ERROR(DimensionMismatch);     // operands of incompatible shape
COLLIG_DEFINE_ERROR(NotOrthogonal);         // coset factor fails orthogonality
COLLIG_DEFINE_ERROR(NonGenericColligation); // rank/invertibility precondition
COLLIG_DEFINE_ERROR(InvalidTruncation);     // corner size out of range
COLLIG_DEFINE_ERROR(GenerationFailed);      // random generation retry cap hit
COLLIG_DEFINE_ERROR(InternalInconsistency); // cross-route identity violated
COLLIG_DEFINE_ERROR(InvalidParameter);      // parameter outside its domain
COLLIG_DEFINE_ERROR(BranchCut);             // Mellin query crosses a branch cut
COLLIG_DEFINE_ERROR(BranchPoint);           // kernel factor at a branch point
COLLIG_DEFINE_ERROR(SingularH);             // route needs all h_j away from 1
COLLIG_DEFINE_ERROR(SupportOverflow);       // convolution support exceeds cap
COLLIG_DEFINE_ERROR(ToleranceNotMet);       // tail bound never certified
COLLIG_DEFINE_ERROR(NotProbability);        // sampling needs unit total mass
COLLIG_DEFINE_ERROR(TooLarge);              // oracle dimension guard
COLLIG_DEFINE_ERROR(InvalidConfig);         // bad CLI/config input

#undef COLLIG_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Pairwise (cascade) summation.  Used for every long accumulation so results
// are independent of chunking/thread count and carry O(log n) rounding.
// ---------------------------------------------------------------------------
template <class T>
T pairwise_sum(const T* data, std::size_t count) {
  if (count == 0) return T{};
  if (count <= 16) {
    T acc = data[0];
    for (std::size_t i = 1; i < count; ++i) acc += data[i];
    return acc;
  }
  const std::size_t half = count / 2;
  return pairwise_sum(data, half) + pairwise_sum(data + half, count - half);
}

template <class T>
T pairwise_sum(const std::vector<T>& v) {
  return pairwise_sum(v.data(), v.size());
}

// Relative deviation |a-b| / max(|a|, |b|, floor); the floor keeps checks
// meaningful when both values are tiny.
inline real rel_err(real a, real b, real floor_scale = 1e-12) {
  const real scale = std::max({std::abs(a), std::abs(b), floor_scale});
  return std::abs(a - b) / scale;
}
inline real rel_err(cplx a, cplx b, real floor_scale = 1e-12) {
  const real scale = std::max({std::abs(a), std::abs(b), floor_scale});
  return std::abs(a - b) / scale;
}

inline bool is_finite(const Mat& m) { return m.allFinite(); }

}  // namespace collig
