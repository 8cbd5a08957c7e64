// The integral-kernel realization of a colligation's action on Gaussian
// space: the closed-form kernel K_lambda(x, u), two brute-force averaging
// oracles that recompute it from the raw representative, operator application
// and composition by Gauss-Hermite substitution, the fiber measure attached
// to a point pair, and the Markov / contraction diagnostics.
#pragma once

#include "collig/colligation.hpp"
#include "collig/gaussian_space.hpp"
#include "collig/quadrature.hpp"
#include "collig/rx_measure.hpp"
#include "collig/types.hpp"

#include <string>
#include <utility>
#include <vector>

namespace collig {

/// Diagonal entries within this distance of 1 are flagged: their branch
/// factor switches to its continuous limit exp{-lambda psi^2/2 +
/// lambda^2 psi^2/2}, which matches the exact factor to O(seam width), far
/// below every tolerance used here.  The kernel seam is much narrower than
/// the 1e-6 seam of the factor measures because the exact branch factor stays
/// numerically well conditioned arbitrarily close to h = 1.
inline constexpr real kKernelSeamWidth = 1e-8;

/// Immutable, shareable evaluation state for one colligation's kernel.  All
/// fields are set by make_kernel_evaluator and never mutated afterwards;
/// concurrent reads are safe.
struct KernelEvaluator {
  CanonicalForm cf;
  PotapovCoords pc;
  real log_det_g = 0.0;  ///< ln|det rep|, cross-checked against the
                         ///< coordinate route within 1e-9 at assembly
  real log_det_t = 0.0;  ///< ln|det T| = -ln|det c|
  Vec h;                 ///< diagonal invariants, descending
  std::vector<bool> h_near_one;  ///< |h_j - 1| <= kKernelSeamWidth
  /// ln of the kernel's constant prefactor.  It is derived at assembly time
  /// by enforcing a unit u-integral for the lambda = 0 kernel (the defining
  /// stochasticity condition), not copied from the closed-form constant; the
  /// two must then agree to quadrature accuracy.
  real log_normalization = 0.0;
  /// log_normalization minus the closed-form constant
  /// -(n/2) ln(2 pi) + ln|det T|; a diagnostic that stays at rounding level.
  real normalization_correction = 0.0;
};

/// Reduce g to canonical form, take linear-fractional coordinates, freeze the
/// determinant logs, flag near-1 diagonal entries, and fix the normalization
/// by quadrature.  Errors: NonGenericColligation propagated from the
/// reduction; InternalInconsistency when the cached determinant routes
/// disagree beyond 1e-9 or the enforced normalization drifts from the
/// closed-form constant beyond 1e-9.
[[nodiscard]] KernelEvaluator make_kernel_evaluator(const Colligation& g);

/// ln K_lambda(x, u) on the principal branch.  The kernel is assembled in log
/// domain from a lambda-free Gaussian part, a part linear in lambda, and one
/// branch factor per diagonal entry:
///   -(1/2) ln(lambda (h_j^2 - 1) + 1)
///     + lambda (lambda - 1) psi_j^2 / (2 (lambda (h_j^2 - 1) + 1)),
/// where psi = x P2 + u R2; the second term is the exact partial-fraction
/// regrouping of the raw factor exp{M_j / (lambda (h_j^2-1) + 1)} with the
/// lambda-free and lambda-linear psi_j^2 pieces, which cancels the 1/(h^2-1)^2
/// growth analytically instead of numerically.  Flagged entries use the
/// h = 1 limit (the same expression with h_j^2 - 1 = 0).
/// Errors: |lambda (h_j^2 - 1) + 1| < 1e-8 -> BranchPoint; mis-sized or
/// non-finite x, u -> DimensionMismatch / InvalidParameter.
[[nodiscard]] cplx log_kernel_K(const KernelEvaluator& ke, cplx lambda,
                                const Row& x, const Row& u);

/// exp(log_kernel_K): the kernel value itself.  Real and positive for real
/// lambda.
[[nodiscard]] cplx kernel_K(const KernelEvaluator& ke, cplx lambda,
                            const Row& x, const Row& u);

/// Brute-force averaging oracle: the weighted substitution operator applied
/// to f at x, computed from the assembled representative only (no canonical
/// form, no coordinate shortcut):
///   |det rep|^lambda * E_w[ f(x a + w c) *
///     exp{-(lambda/2) ((x,w) (rep rep^t - I) (x,w)^t)} ]
/// with w an m-dimensional standard Gaussian integrated by tensor-product
/// Gauss-Hermite, a the n x n outer block and c the m x n in-coupling block.
/// This is the independent reference that every kernel identity is tested
/// against.  Errors: m > 6 or more than 5e7 tensor nodes -> TooLarge;
/// mis-sized input -> DimensionMismatch.
[[nodiscard]] cplx oracle_T_lambda(const Colligation& g, cplx lambda,
                                   const ScalarField& f, const Row& x,
                                   const QuadratureRule& quad);

/// Pointwise kernel oracle: disintegrates the averaging integral over the
/// affine slice {w : x a + w c = u} (co-area factorization of the linear map
/// w -> w c), leaving an (m - n)-dimensional Gaussian integral evaluated by
/// substitution.  Uses only the assembled representative; independent of the
/// closed-form kernel and of the canonical reduction.  Errors: rank-deficient
/// in-coupling block -> NonGenericColligation; guards as oracle_T_lambda.
[[nodiscard]] cplx oracle_kernel(const Colligation& g, cplx lambda,
                                 const Row& x, const Row& u,
                                 const QuadratureRule& quad);

/// x |-> integral of K_lambda(x, u) f(u) du over R^n.  The integral is taken
/// by Gauss-Hermite after recentring and rescaling u along the kernel's own
/// Gaussian decay form (Cholesky substitution), so a plain fixed-weight rule
/// is never applied to a mismatched integrand.  The returned callable owns
/// copies of everything it needs and is safe to call concurrently.
/// Errors propagate from log_kernel_K.
[[nodiscard]] ScalarField apply_operator(const KernelEvaluator& ke,
                                         cplx lambda, ScalarField f,
                                         const QuadratureRule& quad);

/// max over the (x, v) grid of |integral K^a(x,u) K^b(u,v) du - K^{ab}(x,v)|,
/// divided by the largest |K^{ab}| on the grid, where ab is the colligation
/// block product.  This is the semigroup homomorphism residual.  Errors:
/// NonGenericColligation when a, b, or their product fails reduction;
/// InvalidParameter on an empty grid.
[[nodiscard]] real compose_check(const Colligation& a, const Colligation& b,
                                 cplx lambda,
                                 const std::vector<std::pair<Row, Row>>& grid,
                                 const QuadratureRule& quad);

/// A fiber point pair together with the measure on (0, infinity) whose
/// transform interpolates the kernel in lambda.
struct PolymorphismSample {
  Row x;
  Row u;
  RxMeasure measure;
};

/// Assemble the fiber measure at (x, u): the h-independent atom convolved
/// with the truncated infinite convolution of the unit-mass factor measures
/// Xi[h_j, |psi_j|], certified to tail tolerance tol (factors are convolved
/// in decreasing order of transform deviation; a trivial factor is appended
/// so that a fully non-trivial finite list certifies a zero tail).  Before
/// returning, the measure's numeric transform is checked against kernel_K at
/// lambda in {0, 1/2, 1} within max(1e-7, 10 tol).
/// Errors: ToleranceNotMet propagated; InternalInconsistency on transform
/// disagreement; tol <= 0 -> InvalidParameter.
[[nodiscard]] PolymorphismSample polymorphism_measure(const KernelEvaluator& ke,
                                                      const Row& x, const Row& u,
                                                      real tol);

/// The factored route to the same fiber measure, defined only when every h_j
/// is farther than 1e-6 from 1: the diagonal-corrected atom convolved with
/// one building-block factor Phi[h_j^2 - 1, h_j^2 psi_j^2 / (2 (h_j^2-1)^2)]
/// per diagonal entry.  Cross-checked against kernel_K like the primary
/// route.  Errors: SingularH when some h_j is within 1e-6 of 1.
[[nodiscard]] RxMeasure fiber_measure_factored(const KernelEvaluator& ke,
                                               const Row& x, const Row& u);

/// The two defining Markov residuals of the kernel family.
struct MarkovResiduals {
  real residual_a = 0.0;  ///< sup over a fixed x-grid of |T_0(1)(x) - 1|
  real residual_b = 0.0;  ///< worst Gaussian-invariance defect of the
                          ///< adjoint at lambda = 1 over a small test family
};

/// residual_a probes the unit u-integral of the lambda = 0 kernel on a
/// deterministic x-grid; residual_b probes, for g in {1} + {u_k^2} +
/// {cos u_k}, the identity
///   E_{x ~ Gaussian}[ integral K_1(x,u) g(u) du ] = integral g dmu_n,
/// both sides by quadrature.
[[nodiscard]] MarkovResiduals markov_conditions(const KernelEvaluator& ke,
                                                const QuadratureRule& quad);

/// Largest singular value of the operator's matrix in the Gaussian-weight
/// orthonormal polynomial basis (probabilists' Hermite, tensor total degree
/// at most min(order - 1, 20) — capped so every retained entry is converged
/// at every admissible rule order), with entries computed by the rule in x
/// and the kernel-adapted substituted rule in u.  This discretizes the operator norm
/// on the Gaussian L^2 space and is stable under node refinement — a raw
/// node-pair kernel matrix is not, because the rule's edge nodes carry
/// exponentially exaggerated plain-du weights.  The contraction bound says
/// the value stays <= 1 + 1e-6 on the critical line.
/// Errors: |Re lambda - 1/2| > 1e-12 -> InvalidParameter; more than 2048
/// tensor nodes -> TooLarge.
[[nodiscard]] real norm_estimate(const KernelEvaluator& ke, cplx lambda,
                                 const QuadratureRule& quad);

/// CSV rows "x,u,re_k,im_k" over the product of the two point lists, one row
/// per (x, u) pair; vector components are ';'-joined.
[[nodiscard]] std::string kernel_grid_csv(const KernelEvaluator& ke,
                                          cplx lambda,
                                          const std::vector<Row>& xs,
                                          const std::vector<Row>& us);

}  // namespace collig
