#include "collig/polymorphism.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace collig {
namespace {

constexpr real kPi = 3.141592653589793238462643383279502884;
constexpr real kBranchPointRadius = 1e-8;
constexpr std::size_t kTensorNodeBudget = 50'000'000;

using CRow = row_vector<cplx>;

void check_point(const Row& p, Eigen::Index n, const char* name) {
  if (p.size() != n)
    throw DimensionMismatch(std::string(name) +
                            " has length " + std::to_string(p.size()) +
                            ", the coordinate dimension is " + std::to_string(n));
  if (!p.allFinite())
    throw InvalidParameter(std::string(name) + " must have finite entries");
}

std::size_t tensor_node_count(int order, int axes) {
  std::size_t total = 1;
  for (int d = 0; d < axes; ++d) {
    total *= static_cast<std::size_t>(order);
    if (total > kTensorNodeBudget)
      throw TooLarge("tensor quadrature would need more than " +
                     std::to_string(kTensorNodeBudget) + " nodes (order " +
                     std::to_string(order) + "^" + std::to_string(axes) + ")");
  }
  return total;
}

/// Visit every node of the `axes`-fold tensor product of the rule, passing the
/// node row and its product weight.  Zero axes means one visit at the empty
/// row with weight 1 (the empty product).
template <class Cb>
void for_each_tensor_node(const QuadratureRule& rule, int axes, Cb&& cb) {
  if (axes == 0) {
    cb(Row(0), 1.0);
    return;
  }
  const int order = rule.order();
  std::vector<int> digit(static_cast<std::size_t>(axes), 0);
  Row y(axes);
  for (int d = 0; d < axes; ++d) y[d] = rule.nodes[0];
  while (true) {
    real weight = 1.0;
    for (int d = 0; d < axes; ++d) weight *= rule.weights[digit[static_cast<std::size_t>(d)]];
    cb(y, weight);
    int d = 0;
    while (d < axes) {
      auto& dig = digit[static_cast<std::size_t>(d)];
      if (++dig < order) {
        y[d] = rule.nodes[dig];
        break;
      }
      dig = 0;
      y[d] = rule.nodes[0];
      ++d;
    }
    if (d == axes) break;
  }
}

// ---------------------------------------------------------------------------
// Gaussian substitution: to integrate exp(phi(u)) du when Re phi(u) ~
// -(1/2) u D u^t + u l^t + c, recentre at the maximizer of the real part and
// rescale by sqrt(2) times the inverse Cholesky factor of D.  The standard
// Gaussian quadrature weight then matches half of the integrand's decay and
// the sampled factor exp(phi + |y|^2/2) stays bounded.
// ---------------------------------------------------------------------------
struct Substitution {
  Mat l_inv;          ///< inverse of the lower Cholesky factor of the decay form
  Row center;         ///< maximizer of the real exponent
  real log_pref = 0;  ///< ln of the Jacobian prefactor 2^{k/2} det(L)^-1 (2 pi)^{k/2}
};

Substitution make_substitution(Mat decay, const Row& lin) {
  const Eigen::Index k = decay.rows();
  Substitution sub;
  if (k == 0) {
    sub.l_inv = Mat(0, 0);
    sub.center = Row(0);
    return sub;
  }
  decay = 0.5 * (decay + decay.transpose().eval());
  Eigen::LLT<Mat> llt(decay);
  // The decay form is positive definite throughout the closed parameter
  // strip; a tiny escalating ridge guards against rounding at its edge.
  real ridge = 0.0;
  const real scale = std::max(decay.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  int tries = 0;
  while (llt.info() != Eigen::Success && tries < 8) {
    ridge = (ridge == 0.0) ? 1e-14 * scale : 100.0 * ridge;
    llt.compute(decay + ridge * Mat::Identity(k, k));
    ++tries;
  }
  if (llt.info() != Eigen::Success)
    throw InternalInconsistency("the integrand's decay form is not positive definite");
  const Mat l = llt.matrixL();
  sub.l_inv = l.triangularView<Eigen::Lower>().solve(Mat::Identity(k, k));
  sub.center = llt.solve(lin.transpose()).transpose();
  real log_det_l = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) log_det_l += std::log(l(i, i));
  sub.log_pref = 0.5 * static_cast<real>(k) * std::log(2.0) - log_det_l +
                 0.5 * static_cast<real>(k) * std::log(2.0 * kPi);
  return sub;
}

/// integral over R^k of exp(log_part(u)) * plain_part(u) du under the
/// substitution, with pairwise-summed terms so the value is independent of
/// any evaluation chunking.
template <class LogPart, class PlainPart>
cplx integrate_substituted(const Substitution& sub, const QuadratureRule& rule,
                           LogPart&& log_part, PlainPart&& plain_part) {
  const int k = static_cast<int>(sub.center.size());
  if (k == 0) return std::exp(log_part(sub.center)) * plain_part(sub.center);
  std::vector<cplx> terms;
  terms.reserve(tensor_node_count(rule.order(), k));
  const real sqrt2 = std::sqrt(2.0);
  for_each_tensor_node(rule, k, [&](const Row& y, real weight) {
    const Row u = sub.center + sqrt2 * (y * sub.l_inv);
    const cplx lg = log_part(u) + 0.5 * y.squaredNorm() + sub.log_pref;
    terms.push_back(weight * std::exp(lg) * plain_part(u));
  });
  return pairwise_sum(terms);
}

const auto kUnitFactor = [](const Row&) { return cplx(1.0, 0.0); };

// ---------------------------------------------------------------------------
// Quadratic structure of ln K in each argument.  With psi = x P2 + u R2 and
// d_j = h_j^2 - 1 (0 for flagged entries), each branch factor contributes
// lambda (lambda - 1) psi_j^2 / (2 (lambda d_j + 1)), so both arguments see
// rank-one corrections with coefficient lambda (1 - lambda) / (lambda d_j + 1).
// ---------------------------------------------------------------------------
std::vector<cplx> branch_coefficients(const KernelEvaluator& ke, cplx lambda) {
  const auto k = static_cast<std::size_t>(ke.h.size());
  std::vector<cplx> coef(k);
  for (std::size_t j = 0; j < k; ++j) {
    const real d = ke.h_near_one[j] ? 0.0 : ke.h[static_cast<Eigen::Index>(j)] *
                                                    ke.h[static_cast<Eigen::Index>(j)] -
                                                1.0;
    const cplx z = lambda * d + 1.0;
    if (!ke.h_near_one[j] && std::abs(z) < kBranchPointRadius)
      throw BranchPoint("lambda is within " + std::to_string(kBranchPointRadius) +
                        " of the branch point -1/(h^2-1) for h = " +
                        std::to_string(ke.h[static_cast<Eigen::Index>(j)]));
    coef[j] = lambda * (1.0 - lambda) / z;
  }
  return coef;
}

/// D in the u-quadratic -(1/2) u D u^t of ln K at fixed x.
CMat u_decay_form(const KernelEvaluator& ke, cplx lambda) {
  const auto n = ke.pc.t.rows();
  const std::vector<cplx> coef = branch_coefficients(ke, lambda);
  CMat d = (1.0 - lambda) * (ke.pc.t * ke.pc.t.transpose()).cast<cplx>() +
           lambda * (Mat::Identity(n, n) + ke.pc.r1 * ke.pc.r1.transpose()).cast<cplx>();
  for (std::size_t j = 0; j < coef.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    d += coef[j] * (ke.pc.r2.col(jj) * ke.pc.r2.col(jj).transpose()).cast<cplx>();
  }
  return d;
}

/// D in the x-quadratic -(1/2) x D x^t of ln K at fixed u.
CMat x_decay_form(const KernelEvaluator& ke, cplx lambda) {
  const auto n = ke.pc.q.rows();
  const std::vector<cplx> coef = branch_coefficients(ke, lambda);
  CMat d = (1.0 - lambda) * (ke.pc.q * ke.pc.q.transpose()).cast<cplx>() -
           lambda * (Mat::Identity(n, n) - ke.pc.p1 * ke.pc.p1.transpose()).cast<cplx>();
  for (std::size_t j = 0; j < coef.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    d += coef[j] * (ke.pc.p2.col(jj) * ke.pc.p2.col(jj).transpose()).cast<cplx>();
  }
  return d;
}

/// l in the u-linear term u l^t of ln K at fixed x.
CRow u_linear_coeff(const KernelEvaluator& ke, cplx lambda, const Row& x) {
  const std::vector<cplx> coef = branch_coefficients(ke, lambda);
  CRow l = (lambda - 1.0) * ((x * ke.pc.q) * ke.pc.t.transpose()).cast<cplx>() -
           lambda * ((x * ke.pc.p1) * ke.pc.r1.transpose()).cast<cplx>();
  if (!coef.empty()) {
    const Row xp2 = x * ke.pc.p2;
    for (std::size_t j = 0; j < coef.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      l -= coef[j] * xp2[jj] * ke.pc.r2.col(jj).transpose().cast<cplx>();
    }
  }
  return l;
}

/// C in the bilinear term x C u^t of ln K.
CMat cross_form(const KernelEvaluator& ke, cplx lambda) {
  const std::vector<cplx> coef = branch_coefficients(ke, lambda);
  CMat c = (lambda - 1.0) * (ke.pc.q * ke.pc.t.transpose()).cast<cplx>() -
           lambda * (ke.pc.p1 * ke.pc.r1.transpose()).cast<cplx>();
  for (std::size_t j = 0; j < coef.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    c -= coef[j] * (ke.pc.p2.col(jj) * ke.pc.r2.col(jj).transpose()).cast<cplx>();
  }
  return c;
}

/// l in the x-linear term x l^t of ln K at fixed u.
CRow x_linear_coeff(const KernelEvaluator& ke, cplx lambda, const Row& u) {
  const std::vector<cplx> coef = branch_coefficients(ke, lambda);
  CRow l = (lambda - 1.0) * ((u * ke.pc.t) * ke.pc.q.transpose()).cast<cplx>() -
           lambda * ((u * ke.pc.r1) * ke.pc.p1.transpose()).cast<cplx>();
  if (!coef.empty()) {
    const Row ur2 = u * ke.pc.r2;
    for (std::size_t j = 0; j < coef.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      l -= coef[j] * ur2[jj] * ke.pc.p2.col(jj).transpose().cast<cplx>();
    }
  }
  return l;
}

/// Numeric transform of an assembled fiber measure against the closed-form
/// kernel at the anchor points of the parameter strip.
void verify_measure_transform(const KernelEvaluator& ke, const Row& x, const Row& u,
                              const RxMeasure& mu, real tolerance, const char* what) {
  for (const real l : {0.0, 0.5, 1.0}) {
    const cplx numeric = mellin(mu, cplx(l, 0.0));
    const cplx exact = kernel_K(ke, cplx(l, 0.0), x, u);
    const real deviation = rel_err(numeric, exact);
    if (!(deviation <= tolerance))
      throw InternalInconsistency(
          std::string(what) + " transform deviates from the kernel by " +
          std::to_string(deviation) + " at lambda = " + std::to_string(l) +
          " (tolerance " + std::to_string(tolerance) + ")");
  }
}

/// |ln| of the unit-mass factor transform at real lambda; the same increment
/// the truncated-product certification uses.
real xi_log_deviation(const XiParams& p, real l) {
  const real h2 = p.h * p.h;
  const real delta = h2 - 1.0;
  const real psi2 = p.psi * p.psi;
  const real z = 1.0 + delta * l;
  if (!(z > 0.0)) return std::numeric_limits<real>::infinity();
  return std::abs(l * std::log(p.h) - 0.5 * std::log(z) + l * l * h2 * psi2 / (2.0 * z) -
                  l * psi2 / 2.0);
}

std::string join_components(const Row& p) {
  std::string out;
  char buf[40];
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (i > 0) out += ';';
    std::snprintf(buf, sizeof(buf), "%.17g", p[i]);
    out += buf;
  }
  return out;
}

}  // namespace

KernelEvaluator make_kernel_evaluator(const Colligation& g) {
  KernelEvaluator ke;
  ke.cf = canonical_form(g);
  ke.pc = potapov(ke.cf);
  ke.log_det_g = log_abs_det(ke.cf);
  ke.log_det_t = ke.pc.log_det_t;
  ke.h = ke.cf.h;
  ke.h_near_one.resize(static_cast<std::size_t>(ke.h.size()));
  for (Eigen::Index j = 0; j < ke.h.size(); ++j)
    ke.h_near_one[static_cast<std::size_t>(j)] = std::abs(ke.h[j] - 1.0) <= kKernelSeamWidth;

  const real coord_route = ke.pc.log_det_p1 + ke.pc.sum_log_h - ke.pc.log_det_t;
  const real det_dev = std::abs(ke.log_det_g - coord_route) /
                       std::max(1.0, std::abs(ke.log_det_g));
  if (!(det_dev <= 1e-9))
    throw InternalInconsistency("cached determinant routes disagree by " +
                                std::to_string(det_dev));

  // Fix the constant prefactor by the defining stochasticity condition: the
  // lambda = 0 kernel integrates to 1 over u.  At lambda = 0 the kernel is
  // exp(prefactor) exp(-|x Q + u T|^2 / 2), whose u-integral is independent
  // of x, so one substituted quadrature at x = 0 pins the constant; it must
  // land on the closed-form value -(n/2) ln(2 pi) + ln|det T| to quadrature
  // accuracy.
  const int n = ke.cf.n;
  const Mat tt = ke.pc.t * ke.pc.t.transpose();
  const Substitution sub = make_substitution(tt, Row::Zero(n));
  const QuadratureRule rule = gauss_hermite(48);
  const cplx raw = integrate_substituted(
      sub, rule,
      [&](const Row& u) { return cplx(-0.5 * (u * ke.pc.t).squaredNorm(), 0.0); },
      kUnitFactor);
  ke.log_normalization = -std::log(raw.real());
  const real closed_constant = -0.5 * static_cast<real>(n) * std::log(2.0 * kPi) +
                               ke.pc.log_det_t;
  ke.normalization_correction = ke.log_normalization - closed_constant;
  if (!(std::abs(ke.normalization_correction) <= 1e-9))
    throw InternalInconsistency("enforced kernel normalization drifts from the closed-form constant by " +
                                std::to_string(ke.normalization_correction));
  return ke;
}

cplx log_kernel_K(const KernelEvaluator& ke, cplx lambda, const Row& x, const Row& u) {
  const auto n = ke.pc.t.rows();
  check_point(x, n, "x");
  check_point(u, n, "u");
  const Row xq_ut = x * ke.pc.q + u * ke.pc.t;
  const Row xp_ur = x * ke.pc.p1 + u * ke.pc.r1;
  const real cross = xq_ut.squaredNorm();
  const real linear = ke.log_det_g + 0.5 * (cross + x.squaredNorm() - u.squaredNorm() -
                                            xp_ur.squaredNorm());
  cplx acc = cplx(ke.log_normalization - 0.5 * cross, 0.0) + lambda * linear;
  if (ke.h.size() > 0) {
    const Row psi = x * ke.pc.p2 + u * ke.pc.r2;
    for (Eigen::Index j = 0; j < ke.h.size(); ++j) {
      const bool flagged = ke.h_near_one[static_cast<std::size_t>(j)];
      const real d = flagged ? 0.0 : ke.h[j] * ke.h[j] - 1.0;
      const cplx z = lambda * d + 1.0;
      if (!flagged && std::abs(z) < kBranchPointRadius)
        throw BranchPoint("lambda is within " + std::to_string(kBranchPointRadius) +
                          " of the branch point -1/(h^2-1) for h = " +
                          std::to_string(ke.h[j]));
      acc += -0.5 * std::log(z) + lambda * (lambda - 1.0) * psi[j] * psi[j] / (2.0 * z);
    }
  }
  return acc;
}

cplx kernel_K(const KernelEvaluator& ke, cplx lambda, const Row& x, const Row& u) {
  return std::exp(log_kernel_K(ke, lambda, x, u));
}

cplx oracle_T_lambda(const Colligation& g, cplx lambda, const ScalarField& f,
                     const Row& x, const QuadratureRule& quad) {
  if (g.m > 6)
    throw TooLarge("the averaging oracle integrates over " + std::to_string(g.m) +
                   " Gaussian coordinates; the guard allows at most 6");
  if (!f) throw InvalidParameter("the test function must be callable");
  const int n = g.n;
  const int m = g.m;
  check_point(x, n, "x");
  const std::size_t total = tensor_node_count(quad.order(), m);

  const Mat shift = g.rep * g.rep.transpose() - Mat::Identity(n + m, n + m);
  const real q_xx = (x * shift.topLeftCorner(n, n)).dot(x);
  const Row cross2 = 2.0 * (x * shift.topRightCorner(n, m));
  const Mat s_ww = shift.bottomRightCorner(m, m);
  const Row xa = x * g.rep.topLeftCorner(n, n);
  const Mat c_in = g.rep.bottomLeftCorner(m, n);
  const real log_det = log_abs_det(g.rep).value;

  std::vector<cplx> terms;
  terms.reserve(total);
  for_each_tensor_node(quad, m, [&](const Row& w, real weight) {
    const real q = q_xx + cross2.dot(w) + (w * s_ww).dot(w);
    terms.push_back(weight * f(xa + w * c_in) * std::exp(-0.5 * lambda * q));
  });
  return std::exp(lambda * log_det) * pairwise_sum(terms);
}

cplx oracle_kernel(const Colligation& g, cplx lambda, const Row& x, const Row& u,
                   const QuadratureRule& quad) {
  if (g.m > 6)
    throw TooLarge("the pointwise oracle slices " + std::to_string(g.m) +
                   " Gaussian coordinates; the guard allows at most 6");
  const int n = g.n;
  const int m = g.m;
  const int k = m - n;
  check_point(x, n, "x");
  check_point(u, n, "u");
  tensor_node_count(quad.order(), k);

  const Mat c_in = g.rep.bottomLeftCorner(m, n);
  Eigen::JacobiSVD<Mat> svd_c(c_in, Eigen::ComputeFullU | Eigen::ComputeThinV);
  const Vec& sv = svd_c.singularValues();
  if (!(sv(n - 1) > 1e-12 * std::max(sv(0), 1.0)))
    throw NonGenericColligation("the in-coupling block is numerically rank deficient");
  real log_det_ctc = 0.0;
  for (int i = 0; i < n; ++i) log_det_ctc += 2.0 * std::log(sv(i));

  // Least-norm point of the slice {w : x a + w c = u} and an orthonormal
  // basis of its directions.
  const Row residual = u - x * g.rep.topLeftCorner(n, n);
  const Row w0 = residual * (svd_c.matrixV() * sv.cwiseInverse().asDiagonal() *
                             svd_c.matrixU().leftCols(n).transpose());
  const Mat slice_dirs = svd_c.matrixU().rightCols(k);

  const Mat shift = g.rep * g.rep.transpose() - Mat::Identity(n + m, n + m);
  const real q_xx = (x * shift.topLeftCorner(n, n)).dot(x);
  const Row cross2 = 2.0 * (x * shift.topRightCorner(n, m));
  const Mat s_ww = shift.bottomRightCorner(m, m);
  const real log_det = log_abs_det(g.rep).value;

  const auto slice_log = [&](const Row& z) -> cplx {
    const Row w = w0 + z * slice_dirs.transpose();
    const real q = q_xx + cross2.dot(w) + (w * s_ww).dot(w);
    return cplx(-0.5 * w.squaredNorm(), 0.0) - 0.5 * lambda * q;
  };
  // Decay form and linear coefficient of the slice exponent around z = 0.
  const Mat s_ww_slice = slice_dirs.transpose() * s_ww * slice_dirs;
  const CMat decay = Mat::Identity(k, k).cast<cplx>() + lambda * s_ww_slice.cast<cplx>();
  const CRow lin = -(w0 * slice_dirs).cast<cplx>() -
                   lambda * ((x * shift.topRightCorner(n, m)) * slice_dirs +
                             w0 * s_ww * slice_dirs)
                                .cast<cplx>();
  const Substitution sub = make_substitution(decay.real(), lin.real());
  const cplx integral = integrate_substituted(sub, quad, slice_log, kUnitFactor);
  return std::exp(lambda * log_det - 0.5 * static_cast<real>(m) * std::log(2.0 * kPi) -
                  0.5 * log_det_ctc) *
         integral;
}

ScalarField apply_operator(const KernelEvaluator& ke, cplx lambda, ScalarField f,
                           const QuadratureRule& quad) {
  if (!f) throw InvalidParameter("the integrand function must be callable");
  // The u-decay form is x-independent; freeze its real part once.  Building
  // it also surfaces branch-point trouble before the first evaluation.
  const Mat decay_re = u_decay_form(ke, lambda).real();
  const auto n = ke.pc.t.rows();
  return [ke, lambda, f = std::move(f), quad, decay_re, n](const Row& x) -> cplx {
    check_point(x, n, "x");
    const CRow lin = u_linear_coeff(ke, lambda, x);
    const Substitution sub = make_substitution(decay_re, lin.real());
    return integrate_substituted(
        sub, quad, [&](const Row& u) { return log_kernel_K(ke, lambda, x, u); },
        [&](const Row& u) { return f(u); });
  };
}

real compose_check(const Colligation& a, const Colligation& b, cplx lambda,
                   const std::vector<std::pair<Row, Row>>& grid,
                   const QuadratureRule& quad) {
  if (grid.empty()) throw InvalidParameter("the residual grid must be nonempty");
  const KernelEvaluator ke_a = make_kernel_evaluator(a);
  const KernelEvaluator ke_b = make_kernel_evaluator(b);
  const KernelEvaluator ke_ab = make_kernel_evaluator(product(a, b));
  // In the u-integral of K^a(x, u) K^b(u, v), u is the second argument of the
  // first kernel and the first argument of the second; the decay forms add.
  const Mat decay_re = (u_decay_form(ke_a, lambda) + x_decay_form(ke_b, lambda)).real();
  real worst = 0.0;
  real magnitude = 0.0;
  for (const auto& [x, v] : grid) {
    const CRow lin = u_linear_coeff(ke_a, lambda, x) + x_linear_coeff(ke_b, lambda, v);
    const Substitution sub = make_substitution(decay_re, lin.real());
    const cplx integral = integrate_substituted(
        sub, quad,
        [&](const Row& u) {
          return log_kernel_K(ke_a, lambda, x, u) + log_kernel_K(ke_b, lambda, u, v);
        },
        kUnitFactor);
    const cplx direct = kernel_K(ke_ab, lambda, x, v);
    worst = std::max(worst, std::abs(integral - direct));
    magnitude = std::max(magnitude, std::abs(direct));
  }
  return worst / std::max(magnitude, 1e-300);
}

PolymorphismSample polymorphism_measure(const KernelEvaluator& ke, const Row& x,
                                        const Row& u, real tol) {
  if (!(tol > 0.0) || !std::isfinite(tol))
    throw InvalidParameter("the tail tolerance must be positive");
  const auto n = ke.pc.t.rows();
  check_point(x, n, "x");
  check_point(u, n, "u");
  const auto k = ke.h.size();
  std::vector<XiParams> factors;
  factors.reserve(static_cast<std::size_t>(k) + 1);
  if (k > 0) {
    const Row psi = x * ke.pc.p2 + u * ke.pc.r2;
    for (Eigen::Index j = 0; j < k; ++j) factors.push_back({ke.h[j], std::abs(psi[j])});
  }
  // Convolve the strongest deviations first, so the certified tail can only
  // drop nearest-to-trivial factors; the appended trivial factor lets a list
  // with no droppable tail certify a zero tail after its last real entry.
  std::stable_sort(factors.begin(), factors.end(), [](const XiParams& a, const XiParams& b) {
    return std::max(xi_log_deviation(a, 0.5), xi_log_deviation(a, 1.0)) >
           std::max(xi_log_deviation(b, 0.5), xi_log_deviation(b, 1.0));
  });
  factors.push_back({1.0, 0.0});
  const InfiniteConvolutionResult conv = infinite_convolution(factors, tol);
  RxMeasure measure = convolve(delta_n_circ(ke.pc, x, u), conv.measure);
  verify_measure_transform(ke, x, u, measure, std::max(1e-7, 10.0 * tol),
                           "the assembled fiber measure");
  return PolymorphismSample{x, u, std::move(measure)};
}

RxMeasure fiber_measure_factored(const KernelEvaluator& ke, const Row& x, const Row& u) {
  const auto n = ke.pc.t.rows();
  check_point(x, n, "x");
  check_point(u, n, "u");
  RxMeasure acc = delta_n(ke.pc, ke.h, x, u);
  const auto k = ke.h.size();
  if (k > 0) {
    const Row psi = x * ke.pc.p2 + u * ke.pc.r2;
    for (Eigen::Index j = 0; j < k; ++j) {
      const real delta = ke.h[j] * ke.h[j] - 1.0;
      const real big_m = ke.h[j] * ke.h[j] * psi[j] * psi[j] / (2.0 * delta * delta);
      acc = convolve(acc, phi_measure({delta, big_m}));
    }
  }
  verify_measure_transform(ke, x, u, acc, 1e-7, "the factored fiber measure");
  return acc;
}

MarkovResiduals markov_conditions(const KernelEvaluator& ke, const QuadratureRule& quad) {
  const int n = ke.cf.n;
  MarkovResiduals out;

  // Unit u-integral of the lambda = 0 kernel, probed on a fixed grid.
  const ScalarField one = [](const Row&) { return cplx(1.0, 0.0); };
  const ScalarField unit_integral = apply_operator(ke, cplx(0.0, 0.0), one, quad);
  std::vector<Row> probes;
  if (n == 1) {
    for (const real v : {-1.8, -0.6, 0.0, 0.9, 1.5}) {
      Row p(1);
      p << v;
      probes.push_back(p);
    }
  } else {
    const real levels[3] = {-1.2, 0.0, 1.2};
    std::vector<int> digit(static_cast<std::size_t>(n), 0);
    while (true) {
      Row p(n);
      for (int d = 0; d < n; ++d) p[d] = levels[digit[static_cast<std::size_t>(d)]];
      probes.push_back(p);
      int d = 0;
      while (d < n && ++digit[static_cast<std::size_t>(d)] == 3) digit[static_cast<std::size_t>(d++)] = 0;
      if (d == n) break;
    }
  }
  for (const Row& p : probes)
    out.residual_a = std::max(out.residual_a, std::abs(unit_integral(p) - 1.0));

  // Gaussian invariance of the adjoint at lambda = 1, against test functions
  // with closed Gaussian means.  The lambda = 1 kernel grows in x almost as
  // fast as the Gaussian weight decays, so the x- and u-integrals are done
  // jointly under one substitution built from the combined quadratic form
  // (the integrand exp(-|x|^2/2 + ln K_1) is purely quadratic — no linear
  // term, center at the origin).
  std::vector<std::pair<ScalarField, real>> family;
  family.emplace_back(one, 1.0);
  for (int c = 0; c < n; ++c)
    family.emplace_back([c](const Row& u) { return cplx(u[c] * u[c], 0.0); }, 1.0);
  for (int c = 0; c < n; ++c)
    family.emplace_back([c](const Row& u) { return cplx(std::cos(u[c]), 0.0); },
                        std::exp(-0.5));
  const cplx lambda_one(1.0, 0.0);
  Mat joint(2 * n, 2 * n);
  joint.topLeftCorner(n, n) =
      Mat::Identity(n, n) + x_decay_form(ke, lambda_one).real();
  joint.bottomRightCorner(n, n) = u_decay_form(ke, lambda_one).real();
  joint.topRightCorner(n, n) = -cross_form(ke, lambda_one).real();
  joint.bottomLeftCorner(n, n) = joint.topRightCorner(n, n).transpose();
  const Substitution sub = make_substitution(joint, Row::Zero(2 * n));
  std::vector<std::vector<cplx>> terms(family.size());
  const std::size_t total = tensor_node_count(quad.order(), 2 * n);
  for (auto& t : terms) t.reserve(total);
  const real log_gauss_const = -0.5 * static_cast<real>(n) * std::log(2.0 * kPi);
  const real sqrt2 = std::sqrt(2.0);
  for_each_tensor_node(quad, 2 * n, [&](const Row& y, real weight) {
    const Row xu = sqrt2 * (y * sub.l_inv);
    const Row xx = xu.head(n);
    const Row uu = xu.tail(n);
    const cplx lg = log_kernel_K(ke, lambda_one, xx, uu) - 0.5 * xx.squaredNorm() +
                    log_gauss_const + 0.5 * y.squaredNorm() + sub.log_pref;
    const cplx coef = weight * std::exp(lg);
    for (std::size_t fi = 0; fi < family.size(); ++fi)
      terms[fi].push_back(coef * family[fi].first(uu));
  });
  for (std::size_t fi = 0; fi < family.size(); ++fi) {
    const cplx average = pairwise_sum(terms[fi]);
    out.residual_b =
        std::max(out.residual_b, std::abs(average / family[fi].second - 1.0));
  }
  return out;
}

real norm_estimate(const KernelEvaluator& ke, cplx lambda, const QuadratureRule& quad) {
  if (!(std::abs(lambda.real() - 0.5) <= 1e-12))
    throw InvalidParameter("the contraction certificate lives on the line Re lambda = 1/2");
  const int n = ke.cf.n;
  const int order = quad.order();
  const std::size_t count = tensor_node_count(order, n);
  if (count > 2048)
    throw TooLarge("the norm discretization would use " + std::to_string(count) +
                   " tensor nodes; the guard allows at most 2048");

  // Basis: probabilists' Hermite tensor products, orthonormal for the
  // Gaussian weight.  The total degree is capped independently of the rule's
  // order: matrix entries for modes far beyond the cap are quadrature junk
  // (the integrands grow almost as fast as the Gaussian weight decays, so
  // refining the rule makes those entries blow up instead of converge), while
  // capped entries are converged at every admissible order and the top
  // singular function of a contraction is captured to well below the
  // certificate's tolerance.
  const int degree_cap = std::min(order - 1, 20);
  std::vector<std::vector<int>> basis;
  {
    std::vector<int> idx(static_cast<std::size_t>(n), 0);
    while (true) {
      int total = 0;
      for (const int v : idx) total += v;
      if (total <= degree_cap) basis.push_back(idx);
      int d = 0;
      while (d < n && ++idx[static_cast<std::size_t>(d)] == order)
        idx[static_cast<std::size_t>(d++)] = 0;
      if (d == n) break;
    }
  }
  const std::size_t dim = basis.size();

  // Per-axis Hermite value tables by the three-term recurrence.
  std::vector<real> axis_tab(static_cast<std::size_t>(order));
  std::vector<std::vector<real>> tabs(static_cast<std::size_t>(n), axis_tab);
  const auto fill_axis = [order](std::vector<real>& tab, real v) {
    tab[0] = 1.0;
    if (order > 1) tab[1] = v;
    for (int d = 2; d < order; ++d)
      tab[static_cast<std::size_t>(d)] =
          (v * tab[static_cast<std::size_t>(d - 1)] -
           std::sqrt(static_cast<real>(d - 1)) * tab[static_cast<std::size_t>(d - 2)]) /
          std::sqrt(static_cast<real>(d));
  };
  const auto basis_row = [&](const Row& p, std::vector<real>& out) {
    for (int ax = 0; ax < n; ++ax) fill_axis(tabs[static_cast<std::size_t>(ax)], p[ax]);
    for (std::size_t b = 0; b < dim; ++b) {
      real prod = 1.0;
      for (int ax = 0; ax < n; ++ax)
        prod *= tabs[static_cast<std::size_t>(ax)]
                    [static_cast<std::size_t>(basis[b][static_cast<std::size_t>(ax)])];
      out[b] = prod;
    }
  };

  // M_{A,B} = E_{x ~ Gaussian}[ He_A(x) * integral K(x,u) He_B(u) du ], the
  // x-average by the rule, the u-integral by the kernel-adapted substitution.
  const Mat decay_re = u_decay_form(ke, lambda).real();
  CMat m = CMat::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  std::vector<real> he_x(dim), he_u(dim);
  std::vector<std::vector<cplx>> inner_terms(dim);
  const std::size_t inner_count = count;
  for (auto& t : inner_terms) t.reserve(inner_count);
  const real sqrt2 = std::sqrt(2.0);
  for_each_tensor_node(quad, n, [&](const Row& x, real wx) {
    const CRow lin = u_linear_coeff(ke, lambda, x);
    const Substitution sub = make_substitution(decay_re, lin.real());
    for (auto& t : inner_terms) t.clear();
    for_each_tensor_node(quad, n, [&](const Row& y, real wy) {
      const Row u = sub.center + sqrt2 * (y * sub.l_inv);
      const cplx coef = wy * std::exp(log_kernel_K(ke, lambda, x, u) +
                                      0.5 * y.squaredNorm() + sub.log_pref);
      basis_row(u, he_u);
      for (std::size_t b = 0; b < dim; ++b) inner_terms[b].push_back(coef * he_u[b]);
    });
    basis_row(x, he_x);
    for (std::size_t b = 0; b < dim; ++b) {
      const cplx column_value = pairwise_sum(inner_terms[b]);
      for (std::size_t a = 0; a < dim; ++a)
        m(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) +=
            wx * he_x[a] * column_value;
    }
  });
  Eigen::BDCSVD<CMat> svd(m);
  return svd.singularValues()(0);
}

std::string kernel_grid_csv(const KernelEvaluator& ke, cplx lambda,
                            const std::vector<Row>& xs, const std::vector<Row>& us) {
  std::string out = "x,u,re_k,im_k\n";
  char buf[80];
  for (const Row& x : xs)
    for (const Row& u : us) {
      const cplx value = kernel_K(ke, lambda, x, u);
      out += join_components(x);
      out += ',';
      out += join_components(u);
      std::snprintf(buf, sizeof(buf), ",%.17g,%.17g\n", value.real(), value.imag());
      out += buf;
    }
  return out;
}

}  // namespace collig
