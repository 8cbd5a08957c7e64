#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "collig/colligation.hpp"
#include "collig/rng.hpp"
#include "collig/types.hpp"

namespace collig {

/// Uniform lattice in the logarithmic coordinate s = ln t.  Node i sits at
/// s_i = (i0 + i) * step + shift; `shift` is kept as an exact real offset so
/// that convolving with a point mass moves the grid without resampling.
/// `values` are hat-function (piecewise-linear finite element) projection
/// coefficients of the density, not pointwise samples: the plain step-weighted
/// sum of values * exp(lambda * s_i) then integrates the density against the
/// piecewise-linear interpolant of exp(lambda * s), which keeps the quadrature
/// uniformly second-order accurate even across inverse-square-root endpoint
/// singularities, makes the lattice mass exact, and makes the discrete
/// convolution exactly Mellin-multiplicative.
struct LogGrid {
  real step = 0.0;
  std::int64_t i0 = 0;
  real shift = 0.0;
  /// Upper bound on the log-slope of the stored density's decaying tails,
  /// in 1/s units.  Convolution uses it to size its overlap-add blocks so
  /// that FFT rounding noise stays small relative to the local tail values
  /// (0 means unknown; treated as a gentle slope).
  real tail_rate = 0.0;
  std::vector<real> values;

  [[nodiscard]] real node(std::size_t i) const {
    return (static_cast<real>(i0) + static_cast<real>(i)) * step + shift;
  }
  [[nodiscard]] real mass() const;
};

/// Global lattice step shared by every density so convolutions never resample.
inline constexpr real kLatticeStep = 0x1p-13;

/// Half-width cap on the log-coordinate support of convolution results.
inline constexpr real kSupportLMax = 60.0;

/// Parameters of the building-block measure with Mellin transform
/// (1 + b*lambda)^(-1/2) * exp(M / (1 + b*lambda)).
struct PhiParams {
  real b = 0.0;
  real big_m = 0.0;
};

/// Parameters of the unit-mass factor measure with Mellin transform
/// h^lambda * (1 + lambda*(h^2-1))^(-1/2)
///   * exp(lambda^2 h^2 psi^2 / (2 (lambda h^2 - lambda + 1)) - lambda psi^2 / 2).
struct XiParams {
  real h = 0.0;
  real psi = 0.0;
};

/// Measure on (0, infinity) with finitely many atoms plus an optional
/// absolutely-continuous part held on the log lattice.  When a closed-form
/// Mellin transform is attached, every transform query cross-checks the
/// lattice evaluation against it before returning the closed form.
struct RxMeasure {
  std::vector<std::pair<real, real>> atoms;  ///< (location t > 0, mass >= 0)
  std::optional<LogGrid> density;
  std::function<cplx(cplx)> mellin_closed_form;  ///< may be empty

  [[nodiscard]] real mass() const;
};

/// Closed-form Mellin transforms (principal branch).  Throw BranchCut when
/// 1 + b*lambda is within 0.05 of the branch point or lies near the cut line.
[[nodiscard]] cplx phi_mellin_closed(const PhiParams& params, cplx lambda);
[[nodiscard]] cplx xi_mellin_closed(const XiParams& params, cplx lambda);

/// Build the Phi measure.  b = 0 gives the atom exp(M) * delta(t - 1); b != 0
/// gives a pure density supported on (0,1) for b > 0 and on (1,infinity) for
/// b < 0, normalized so the lattice mass equals exp(M) exactly.
/// Errors: M < 0 or non-finite input -> InvalidParameter.
[[nodiscard]] RxMeasure phi_measure(const PhiParams& params);

/// Build the unit-mass Xi factor measure.  Away from h = 1 it is the atom of
/// mass exp(-M') at t0 = h * exp(psi^2 / (2 (h^2 - 1))) convolved with
/// Phi[h^2 - 1, M'], M' = h^2 psi^2 / (2 (h^2 - 1)^2); within |h - 1| <= 1e-6
/// it degenerates to the limiting Gaussian-in-log-coordinate density (or a
/// single atom when psi vanishes).  Errors: h <= 0 -> InvalidParameter.
[[nodiscard]] RxMeasure xi_measure(const XiParams& params);

/// Point mass A * delta(t - B) attached to a fiber point (x, u): A and B are
/// assembled from the Potapov coordinates, the diagonal h, and the fiber data,
/// including the h-dependent Gaussian correction factors.
/// Errors: any |h_j - 1| <= 1e-6 -> SingularH; size mismatches ->
/// DimensionMismatch.
[[nodiscard]] RxMeasure delta_n(const PotapovCoords& pc, const Vec& h,
                                const Row& x, const Row& u);

/// The h-independent companion atom: same fiber point, but with the diagonal
/// correction factors stripped.  For m = n the two atoms coincide.
[[nodiscard]] RxMeasure delta_n_circ(const PotapovCoords& pc, const Row& x,
                                     const Row& u);

/// Multiplicative convolution.  Atom pairs multiply exactly; an atom against a
/// density is an exact lattice shift; density against density is the discrete
/// lattice convolution (FFT), which is exactly Mellin-multiplicative for the
/// lattice functional.  The result never carries a closed form, so downstream
/// transform checks stay independent.  Errors: trimmed support exceeding the
/// half-width cap -> SupportOverflow.
[[nodiscard]] RxMeasure convolve(const RxMeasure& lhs, const RxMeasure& rhs);

/// Mellin transform at lambda: sum of atom masses times t^lambda plus the
/// lattice functional of the density.  Soft-warns (stderr) outside the closed
/// strip 0 <= Re lambda <= 1.  If the measure carries a closed form, asserts
/// numeric agreement within 1e-6 relative and returns the closed form.
/// Errors: window inadequate for this lambda (integrand not decayed at the
/// lattice boundary) or closed-form branch trouble -> BranchCut;
/// closed-vs-lattice disagreement -> InternalInconsistency.
[[nodiscard]] cplx mellin(const RxMeasure& mu, cplx lambda);

struct InfiniteConvolutionResult {
  RxMeasure measure;
  real tail_bound = 0.0;  ///< certified bound on the skipped factors
  int factors_used = 0;
};

/// Convolve the Xi factors in order until the remaining tail is certified
/// below `tol` by the closed-form log-transform increments at
/// lambda in {0, 1/2, 1}; the skipped factors are dropped.
/// Errors: tolerance never certified within the list -> ToleranceNotMet;
/// tol <= 0 -> InvalidParameter.
[[nodiscard]] InfiniteConvolutionResult infinite_convolution(
    const std::vector<XiParams>& factors, real tol);

/// Draw `count` samples of t from a probability measure by inverse transform
/// in the log coordinate (piecewise-linear inversion within lattice cells,
/// atoms as point masses).  Errors: total mass farther than 1e-8 from 1 ->
/// NotProbability; count < 0 -> InvalidParameter.
[[nodiscard]] std::vector<real> sample_measure(const RxMeasure& mu, int count,
                                               RngStream& rng);

/// Serialize to JSON: {"atoms": [[t, mass], ...], "grid": {"L": .., "k": ..,
/// "values": [..]}} where the grid resamples the density onto 2^k uniform
/// points over [-L, L] in the log coordinate (L the smallest integer covering
/// the support).  The grid field is omitted for purely atomic measures.
[[nodiscard]] std::string to_json(const RxMeasure& mu, int k = 12);

/// CSV rows "s,density" over the same presentation grid as to_json.
[[nodiscard]] std::string to_csv(const RxMeasure& mu, int k = 12);

}  // namespace collig
