// Measures on (0, infinity) carried as atoms plus a shared-lattice density in
// the log coordinate: the two building-block factor families, the fiber point
// masses, multiplicative convolution, Mellin queries with closed-form
// cross-checks, truncated infinite convolution, sampling, and serialization.
#include "collig/rx_measure.hpp"

#include <unsupported/Eigen/FFT>

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <utility>

namespace collig {

namespace {

constexpr real kPi = 3.14159265358979323846;
// Width of the quadrature window in units of the density's Gaussian scale
// sqrt(|b|): the omitted tail sits at the exp(-kSigmaWindow^2) level, deep
// enough that Mellin queries anywhere in the strip 0 <= Re lambda <= 1 keep
// eight-digit accuracy.
constexpr real kSigmaWindow = 8.0;
// Convolution results are trimmed under a budget, not at a relative value
// threshold: edge cells are removed only while their accumulated contribution
// to any strip Mellin query (weight max(1, e^s) per cell) stays below
// kTrimBudgetRel of the measure's scale, with the removed mass additionally
// capped at kTrimMassRel of the total so mass multiplicativity survives at
// the 1e-10 level.
constexpr real kTrimBudgetRel = 5e-12;
constexpr real kTrimMassRel = 3e-12;
// Half-width of the seam around h = 1 where the factor measure switches to
// its limiting Gaussian form.
constexpr real kEpsH = 1e-6;

// 8-point Gauss-Legendre rule on [-1, 1].
constexpr int kGlPoints = 8;
constexpr real kGlNode[kGlPoints] = {
    -0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
    -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
    0.7966664774136267,  0.9602898564975363};
constexpr real kGlWeight[kGlPoints] = {
    0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
    0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
    0.2223810344533745, 0.1012285362903763};

void apply_keep_range(LogGrid& grid, std::size_t first, std::size_t last) {
  if (first == 0 && last == grid.values.size()) return;
  std::vector<real> kept(grid.values.begin() + static_cast<std::ptrdiff_t>(first),
                         grid.values.begin() + static_cast<std::ptrdiff_t>(last));
  grid.i0 += static_cast<std::int64_t>(first);
  grid.values = std::move(kept);
}

// Remove exact zeros at the boundaries (quadrature underflow); every genuine
// tail value, however small, is kept so strip Mellin queries see the full
// window.
void strip_zero_edges(LogGrid& grid) {
  std::size_t first = 0;
  while (first < grid.values.size() && grid.values[first] == 0.0) ++first;
  std::size_t last = grid.values.size();
  while (last > first && grid.values[last - 1] == 0.0) --last;
  if (first == last) {
    grid.values.clear();
    return;
  }
  apply_keep_range(grid, first, last);
}

// Keep-range under the convolution trim budget: walking inward from each
// boundary, cells are dropped while the accumulated strip-query weight
// v * max(1, e^s) * step stays below kTrimBudgetRel of the measure's scale and
// the accumulated plain mass stays below kTrimMassRel of the total mass.
std::pair<std::size_t, std::size_t> budget_keep_range(const LogGrid& grid) {
  const std::size_t n = grid.values.size();
  if (n == 0) return {0, 0};
  real mass = 0.0;
  real weighted = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const real cell = grid.values[i] * grid.step;
    mass += cell;
    weighted += cell * std::max(1.0, std::exp(grid.node(i)));
  }
  if (!(mass > 0.0)) return {0, 0};
  const real budget_w = kTrimBudgetRel * std::max(mass, weighted);
  const real budget_m = kTrimMassRel * mass;
  const auto scan = [&](auto index_of) {
    real cum_w = 0.0;
    real cum_m = 0.0;
    std::size_t dropped = 0;
    while (dropped < n) {
      const std::size_t i = index_of(dropped);
      const real cell = grid.values[i] * grid.step;
      const real w = cell * std::max(1.0, std::exp(grid.node(i)));
      if (cum_w + w > budget_w || cum_m + cell > budget_m) break;
      cum_w += w;
      cum_m += cell;
      ++dropped;
    }
    return dropped;
  };
  const std::size_t from_left = scan([](std::size_t d) { return d; });
  const std::size_t from_right = scan([n](std::size_t d) { return n - 1 - d; });
  if (from_left + from_right >= n) return {0, 0};
  return {from_left, n - from_right};
}

void budget_trim(LogGrid& grid) {
  const auto [first, last] = budget_keep_range(grid);
  if (first == last) {
    grid.values.clear();
    return;
  }
  apply_keep_range(grid, first, last);
}

// Hat-projection of the building-block density onto the lattice, scaled by
// exp(log_scale).  The density in the log coordinate is
//   pi^(-1/2) e^(s/b) (-b s)^(-1/2) cosh(sqrt(-4 M s / b))   on b s < 0,
// integrated per cell in the coordinate sigma = sqrt(|s|), where the
// integrand becomes the entire function
//   (2 / sqrt(pi |b|)) e^(-sigma^2/|b|) cosh(2 sigma sqrt(M/|b|)),
// so both the endpoint singularity and the far tail are handled by plain
// Gauss-Legendre panels.  Writing sigma_c = sqrt(|b| M), the two cosh
// branches combine into
//   exp(-u^2) * (1 + e^(-2x)),  u = (sigma - sigma_c)/sqrt(|b|),
//   x = 2 sigma sigma_c / |b|,
// up to the prefactor exp(log_scale + M) / sqrt(pi |b|); u is formed from the
// small difference sigma - sigma_c directly, so the evaluation keeps full
// precision for arbitrarily large M (the near-unit factor measures push M
// beyond 1e10).  The integrand is a Gaussian bump of width sqrt(|b|) around
// sigma_c, so the quadrature window is the slice
// [sigma_c - 8 sqrt(|b|), sigma_c + 8 sqrt(|b|)] intersected with sigma >= 0.
// The lattice mass is pinned to exp(log_scale + M) exactly.
LogGrid phi_density_grid(real b, real big_m, real log_scale) {
  const real absb = std::abs(b);
  const real sqrtb = std::sqrt(absb);
  const real sigma_c = std::sqrt(absb * big_m);
  const real sigma_min = std::max(0.0, sigma_c - kSigmaWindow * sqrtb);
  real sigma_max = sigma_c + kSigmaWindow * sqrtb;
  if (b < 0.0 && absb < 1.0) {
    // The support lies at s > 0, where the transform weight e^{lambda s} grows
    // with s across the strip 0 <= Re lambda <= 1.  At the strip edge the
    // weighted integrand peaks at the shifted saddle sigma_c / (1 - |b|), so
    // the window must reach past that saddle until the weighted integrand has
    // decayed (by e^{-18} here), or strip-edge queries would miss tail mass.
    const real shrink = 1.0 - absb;
    const real weighted = sigma_c / shrink + std::sqrt(18.0 * absb / shrink);
    // Near the branch point |b| -> 1 the weighted saddle runs away; cap the
    // lattice length and let the transform guard refuse what the stored
    // window cannot support.
    const real cap = std::sqrt(std::max(250.0, sigma_max * sigma_max));
    sigma_max = std::clamp(weighted, sigma_max, cap);
  }
  const real sign_s = (b > 0.0) ? -1.0 : 1.0;
  const real s_min = (b > 0.0) ? -sigma_max * sigma_max : sigma_min * sigma_min;
  const real s_max = (b > 0.0) ? -sigma_min * sigma_min : sigma_max * sigma_max;
  const real step = kLatticeStep;
  const auto i_lo = static_cast<std::int64_t>(std::floor(s_min / step)) - 1;
  const auto i_hi = static_cast<std::int64_t>(std::ceil(s_max / step)) + 1;
  std::vector<real> values(static_cast<std::size_t>(i_hi - i_lo + 1), 0.0);

  const real log_front = log_scale + big_m - 0.5 * std::log(kPi * absb);
  for (std::int64_t cell = i_lo; cell < i_hi; ++cell) {
    const real cell_lo = static_cast<real>(cell) * step;
    const real cell_hi = cell_lo + step;
    const real s_a = std::max(cell_lo, s_min);
    const real s_b = std::min(cell_hi, s_max);
    if (s_b <= s_a) continue;
    const real edge_a = std::sqrt(std::max(0.0, sign_s * s_a));
    const real edge_b = std::sqrt(std::max(0.0, sign_s * s_b));
    const real sig_lo = std::min(edge_a, edge_b);
    const real sig_hi = std::max(edge_a, edge_b);
    if (!(sig_hi > sig_lo)) continue;
    const real mid = 0.5 * (sig_lo + sig_hi);
    const real half = 0.5 * (sig_hi - sig_lo);
    real m0 = 0.0;
    real m1 = 0.0;
    for (int qp = 0; qp < kGlPoints; ++qp) {
      const real sigma = mid + half * kGlNode[qp];
      const real weight = half * kGlWeight[qp];
      const real u = (sigma - sigma_c) / sqrtb;
      const real x = 2.0 * sigma * sigma_c / absb;
      const real value = std::exp(log_front - u * u + std::log1p(std::exp(-2.0 * x)));
      const real s = sign_s * sigma * sigma;
      m0 += weight * value;
      m1 += weight * value * ((s - cell_lo) / step);
    }
    const auto idx = static_cast<std::size_t>(cell - i_lo);
    values[idx] += (m0 - m1) / step;
    values[idx + 1] += m1 / step;
  }

  LogGrid grid{step, i_lo, 0.0, 0.0, std::move(values)};
  // Tail log-slope: |d ln rho / ds| = |u| / (sigma sqrt(|b|)) stays below
  // 1/|b| on the far tail and below kSigmaWindow/(sigma_min sqrt(|b|)) on a
  // sliced lower edge.
  grid.tail_rate = 1.0 / absb;
  if (sigma_min > 0.0)
    grid.tail_rate = std::max(grid.tail_rate, kSigmaWindow / (sigma_min * sqrtb));
  strip_zero_edges(grid);
  const real target = std::exp(log_scale + big_m);
  const real got = grid.mass();
  if (!(got > 0.0) || !std::isfinite(got))
    throw InternalInconsistency("lattice mass collapsed while building a factor density");
  const real fix = target / got;
  if (std::abs(fix - 1.0) > 1e-3)
    throw InternalInconsistency(
        "lattice mass deviates from its closed form by a factor " + std::to_string(fix));
  for (real& v : grid.values) v *= fix;
  return grid;
}

// Hat-projection of a Gaussian density in the log coordinate (mean mu, standard
// deviation sd > 0) with every cell moment evaluated in closed form via erf, so
// arbitrarily narrow seam densities stay exact.  Mass is pinned to 1.
LogGrid gaussian_density_grid(real mu, real sd) {
  const real step = kLatticeStep;
  const real reach_left = 9.0 * sd + 2.0 * step;
  // The transform weight e^{lambda s} with Re lambda up to 1 recentres the
  // integrand at mu + sd^2; the right reach must cover that shifted bell.
  const real reach_right = std::max(9.0 * sd, sd * (8.0 + sd)) + 2.0 * step;
  const auto i_lo = static_cast<std::int64_t>(std::floor((mu - reach_left) / step)) - 1;
  const auto i_hi = static_cast<std::int64_t>(std::ceil((mu + reach_right) / step)) + 1;
  std::vector<real> values(static_cast<std::size_t>(i_hi - i_lo + 1), 0.0);
  const real inv_sqrt2 = 0.70710678118654752440;
  // Cell masses as differences of the near tail: the lower cumulative left of
  // the mean, the survival function right of it.  Either way both operands are
  // small and fully accurate, so tail cells never degrade to the rounding
  // noise of a cumulative saturating at 1.
  const auto lower = [&](real s) { return 0.5 * std::erfc(-(s - mu) / sd * inv_sqrt2); };
  const auto upper = [&](real s) { return 0.5 * std::erfc((s - mu) / sd * inv_sqrt2); };
  const auto pdf = [&](real s) {
    const real z = (s - mu) / sd;
    return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * kPi));
  };
  for (std::int64_t cell = i_lo; cell < i_hi; ++cell) {
    const real cell_lo = static_cast<real>(cell) * step;
    const real cell_hi = cell_lo + step;
    const real m0 = (cell_lo + cell_hi >= 2.0 * mu) ? upper(cell_lo) - upper(cell_hi)
                                                    : lower(cell_hi) - lower(cell_lo);
    if (!(m0 > 0.0)) continue;
    real m1 = ((mu - cell_lo) * m0 + sd * sd * (pdf(cell_lo) - pdf(cell_hi))) / step;
    m1 = std::clamp(m1, 0.0, m0);
    const auto idx = static_cast<std::size_t>(cell - i_lo);
    values[idx] += (m0 - m1) / step;
    values[idx + 1] += m1 / step;
  }
  LogGrid grid{step, i_lo, 0.0, 0.0, std::move(values)};
  grid.tail_rate = 10.0 / sd;
  strip_zero_edges(grid);
  const real got = grid.mass();
  if (!(got > 0.0) || !std::isfinite(got))
    throw InternalInconsistency("lattice mass collapsed while building a seam density");
  const real fix = 1.0 / got;
  for (real& v : grid.values) v *= fix;
  return grid;
}

void validate_phi(const PhiParams& params) {
  if (!std::isfinite(params.b) || !std::isfinite(params.big_m))
    throw InvalidParameter("factor parameters must be finite");
  if (params.big_m < 0.0)
    throw InvalidParameter("the mass exponent M must be nonnegative");
}

void validate_xi(const XiParams& params) {
  if (!std::isfinite(params.h) || !std::isfinite(params.psi))
    throw InvalidParameter("factor parameters must be finite");
  if (!(params.h > 0.0)) throw InvalidParameter("the scale h must be positive");
}

cplx branch_power(real b, cplx lambda, real big_m) {
  const cplx z = cplx(1.0, 0.0) + b * lambda;
  if (std::abs(z) < 0.05 || (z.real() <= 0.0 && std::abs(z.imag()) < 0.05))
    throw BranchCut("1 + b*lambda is within 0.05 of the branch cut (b = " +
                    std::to_string(b) + ", Re lambda = " + std::to_string(lambda.real()) + ")");
  return std::exp(-0.5 * std::log(z) + big_m / z);
}

// Construction-time invariant: where the closed form is evaluable, the lattice
// evaluation must already agree with it on the anchor grid.
void check_closed_form(const RxMeasure& mu) {
  for (const real l : {0.0, 0.5, 1.0}) {
    try {
      (void)mellin(mu, cplx(l, 0.0));
    } catch (const BranchCut&) {
      // This anchor is outside the closed form's safe region; skip it.
    }
  }
}

RxMeasure atom_with_closed_form(real log_mass, real log_loc) {
  RxMeasure mu;
  mu.atoms.emplace_back(std::exp(log_loc), std::exp(log_mass));
  mu.mellin_closed_form = [log_mass, log_loc](cplx lambda) {
    return std::exp(cplx(log_mass, 0.0) + lambda * log_loc);
  };
  return mu;
}

struct FiberBase {
  real log_mass = 0.0;
  real log_loc = 0.0;
};

FiberBase fiber_base(const PotapovCoords& pc, const Row& x, const Row& u) {
  const auto n = pc.t.rows();
  if (pc.t.cols() != n || pc.q.rows() != n || pc.q.cols() != n || pc.p1.rows() != n ||
      pc.p1.cols() != n || pc.r1.rows() != n || pc.r1.cols() != n)
    throw DimensionMismatch("coordinate blocks must be square and of one size");
  if (x.size() != n || u.size() != n)
    throw DimensionMismatch("fiber point dimension does not match the coordinates");
  if (!x.allFinite() || !u.allFinite())
    throw InvalidParameter("fiber points must be finite");
  const Row xq_ut = x * pc.q + u * pc.t;
  const Row xp_ur = x * pc.p1 + u * pc.r1;
  const real cross = xq_ut.squaredNorm();
  FiberBase out;
  out.log_mass = -0.5 * static_cast<real>(n) * std::log(2.0 * kPi) + pc.log_det_t - 0.5 * cross;
  out.log_loc = (pc.log_det_p1 - pc.log_det_t) +
                0.5 * (cross + x.squaredNorm() - u.squaredNorm() - xp_ur.squaredNorm());
  return out;
}

// Discrete convolution by overlap-add of fixed blocks.  A single global FFT
// would spread rounding noise of order 1e-15 * (peak product) uniformly over
// the result, drowning the genuine far-tail values that strip Mellin queries
// at Re lambda near 1 still need.  Blocks short enough that each holds a
// bounded dynamic range (block span * tail rate <= ~6.5, so within-block
// ratios stay below ~700) keep that noise proportional to the local values
// instead, preserving relative accuracy down the tails.
LogGrid convolve_grids_blocked(const LogGrid& f, const LogGrid& g) {
  if (f.step != g.step)
    throw InternalInconsistency("lattice steps diverged between density operands");
  const real rate = std::max({f.tail_rate, g.tail_rate, 1.0});
  std::size_t block = 1;
  while (static_cast<real>(block * 2) * f.step * rate <= 6.5 && block < (1u << 14)) block <<= 1;
  block = std::max<std::size_t>(block, 512);
  const std::size_t pad = 2 * block;

  const auto to_spectra = [&](const std::vector<real>& v) {
    Eigen::FFT<real> fft;
    const std::size_t blocks = (v.size() + block - 1) / block;
    std::vector<std::vector<cplx>> spectra(blocks);
    std::vector<cplx> buf(pad);
    for (std::size_t bi = 0; bi < blocks; ++bi) {
      const std::size_t lo = bi * block;
      const std::size_t hi = std::min(v.size(), lo + block);
      bool all_zero = true;
      for (std::size_t i = lo; i < hi; ++i)
        if (v[i] != 0.0) {
          all_zero = false;
          break;
        }
      if (all_zero) continue;  // spectrum left empty; pair loop skips it
      std::fill(buf.begin(), buf.end(), cplx(0.0, 0.0));
      for (std::size_t i = lo; i < hi; ++i) buf[i - lo] = cplx(v[i], 0.0);
      spectra[bi].resize(pad);
      fft.fwd(spectra[bi], buf);
    }
    return spectra;
  };
  const auto f_spec = to_spectra(f.values);
  const auto g_spec = to_spectra(g.values);

  const std::size_t need = f.values.size() + g.values.size() - 1;
  std::vector<real> acc((f_spec.size() + g_spec.size()) * block, 0.0);
  Eigen::FFT<real> fft;
  std::vector<cplx> prod(pad);
  std::vector<cplx> back(pad);
  for (std::size_t bi = 0; bi < f_spec.size(); ++bi) {
    if (f_spec[bi].empty()) continue;
    for (std::size_t bj = 0; bj < g_spec.size(); ++bj) {
      if (g_spec[bj].empty()) continue;
      for (std::size_t i = 0; i < pad; ++i) prod[i] = f_spec[bi][i] * g_spec[bj][i];
      fft.inv(back, prod);
      const std::size_t base = (bi + bj) * block;
      for (std::size_t i = 0; i < pad; ++i) acc[base + i] += back[i].real();
    }
  }

  LogGrid out;
  out.step = f.step;
  out.i0 = f.i0 + g.i0;
  out.shift = f.shift + g.shift;
  out.tail_rate = std::min(f.tail_rate, g.tail_rate);
  out.values.resize(need);
  for (std::size_t i = 0; i < need; ++i) out.values[i] = std::max(0.0, acc[i] * f.step);
  return out;
}

// Accumulate `part` into `base`.  The two lattices share the step but their
// shift fields generally differ by a non-lattice amount; each part value is
// split mass-preservingly between the two base nodes that straddle it (the
// split is second-order in the step, matching the engine's error model).
void add_part(LogGrid& base, const LogGrid& part) {
  if (base.step != part.step)
    throw InternalInconsistency("lattice steps diverged between density parts");
  const real offset = (part.shift - base.shift) / base.step;
  real whole = std::floor(offset);
  real frac = offset - whole;
  if (frac < 1e-9) {
    frac = 0.0;
  } else if (frac > 1.0 - 1e-9) {
    whole += 1.0;
    frac = 0.0;
  }
  const auto q = static_cast<std::int64_t>(whole);
  const std::int64_t lo = part.i0 + q;
  const std::int64_t hi =
      lo + static_cast<std::int64_t>(part.values.size()) - 1 + (frac > 0.0 ? 1 : 0);
  std::int64_t base_lo = base.i0;
  std::int64_t base_hi = base.i0 + static_cast<std::int64_t>(base.values.size()) - 1;
  const std::int64_t new_lo = std::min(base_lo, lo);
  const std::int64_t new_hi = std::max(base_hi, hi);
  if (new_lo != base_lo || new_hi != base_hi) {
    std::vector<real> grown(static_cast<std::size_t>(new_hi - new_lo + 1), 0.0);
    std::copy(base.values.begin(), base.values.end(),
              grown.begin() + static_cast<std::ptrdiff_t>(base_lo - new_lo));
    base.values = std::move(grown);
    base.i0 = new_lo;
  }
  base.tail_rate = std::max(base.tail_rate, part.tail_rate);
  const auto start = static_cast<std::size_t>(lo - base.i0);
  for (std::size_t j = 0; j < part.values.size(); ++j) {
    base.values[start + j] += part.values[j] * (1.0 - frac);
    if (frac > 0.0) base.values[start + j + 1] += part.values[j] * frac;
  }
}

void validate_atoms(const RxMeasure& mu) {
  for (const auto& [t, w] : mu.atoms) {
    if (!(t > 0.0) || !std::isfinite(t))
      throw InvalidParameter("atom locations must be positive and finite");
    if (!(w >= 0.0) || !std::isfinite(w))
      throw InvalidParameter("atom masses must be nonnegative and finite");
  }
}

real density_at(const LogGrid& grid, real s) {
  if (grid.values.empty()) return 0.0;
  const real pos =
      (s - grid.shift) / grid.step - static_cast<real>(grid.i0);
  const auto count = static_cast<real>(grid.values.size());
  if (pos <= -1.0 || pos >= count) return 0.0;
  const real floor_pos = std::floor(pos);
  const auto i = static_cast<std::int64_t>(floor_pos);
  const real frac = pos - floor_pos;
  const auto size = static_cast<std::int64_t>(grid.values.size());
  const real left = (i >= 0 && i < size) ? grid.values[static_cast<std::size_t>(i)] : 0.0;
  const real right =
      (i + 1 >= 0 && i + 1 < size) ? grid.values[static_cast<std::size_t>(i + 1)] : 0.0;
  return left * (1.0 - frac) + right * frac;
}

int presentation_half_width(const RxMeasure& mu) {
  real extent = 1.0;
  if (mu.density && !mu.density->values.empty()) {
    // The stored lattice keeps tail values down to rounding depth; the
    // presentation window covers the part that is visible at plotting
    // precision (12 decades below the peak).
    const LogGrid& g = *mu.density;
    real vmax = 0.0;
    for (real v : g.values) vmax = std::max(vmax, v);
    const real cut = vmax * 1e-12;
    std::size_t first = 0;
    while (first + 1 < g.values.size() && g.values[first] < cut) ++first;
    std::size_t last = g.values.size() - 1;
    while (last > first && g.values[last] < cut) --last;
    extent = std::max(std::abs(g.node(first)), std::abs(g.node(last)));
  }
  return static_cast<int>(std::ceil(extent + 1e-9));
}

}  // namespace

real LogGrid::mass() const {
  if (values.empty()) return 0.0;
  return step * pairwise_sum(values);
}

real RxMeasure::mass() const {
  real total = density ? density->mass() : 0.0;
  std::vector<real> weights;
  weights.reserve(atoms.size());
  for (const auto& [t, w] : atoms) weights.push_back(w);
  return total + pairwise_sum(weights);
}

cplx phi_mellin_closed(const PhiParams& params, cplx lambda) {
  validate_phi(params);
  if (params.b == 0.0) return cplx(std::exp(params.big_m), 0.0);
  return branch_power(params.b, lambda, params.big_m);
}

cplx xi_mellin_closed(const XiParams& params, cplx lambda) {
  validate_xi(params);
  const real h2 = params.h * params.h;
  const real delta = h2 - 1.0;
  const real psi2 = params.psi * params.psi;
  const cplx z = cplx(1.0, 0.0) + delta * lambda;
  if (std::abs(z) < 0.05 || (z.real() <= 0.0 && std::abs(z.imag()) < 0.05))
    throw BranchCut("1 + (h^2-1)*lambda is within 0.05 of the branch cut (h = " +
                    std::to_string(params.h) + ", Re lambda = " +
                    std::to_string(lambda.real()) + ")");
  return std::exp(lambda * std::log(params.h) - 0.5 * std::log(z) +
                  lambda * lambda * h2 * psi2 / (2.0 * z) - lambda * psi2 / 2.0);
}

RxMeasure phi_measure(const PhiParams& params) {
  validate_phi(params);
  if (params.big_m > 690.0)
    throw InvalidParameter("the mass exponent M exceeds the binary64 range of exp(M)");
  RxMeasure mu;
  const PhiParams frozen = params;
  mu.mellin_closed_form = [frozen](cplx lambda) { return phi_mellin_closed(frozen, lambda); };
  if (params.b == 0.0) {
    mu.atoms.emplace_back(1.0, std::exp(params.big_m));
  } else {
    mu.density = phi_density_grid(params.b, params.big_m, 0.0);
  }
  check_closed_form(mu);
  return mu;
}

RxMeasure xi_measure(const XiParams& params) {
  validate_xi(params);
  const real h = params.h;
  const real psi = std::abs(params.psi);
  const real h2 = h * h;
  const real delta = h2 - 1.0;
  const real psi2 = psi * psi;
  RxMeasure mu;
  const XiParams frozen{h, psi};
  mu.mellin_closed_form = [frozen](cplx lambda) { return xi_mellin_closed(frozen, lambda); };
  if (std::abs(h - 1.0) <= kEpsH) {
    // Seam: the limiting Gaussian in the log coordinate, mean matched to the
    // transform's first derivative at lambda = 0 so the residual against the
    // exact closed form stays second order in the seam width.
    const real mean = std::log(h) - 0.5 * delta - 0.5 * psi2;
    if (psi < 1e-8) {
      mu.atoms.emplace_back(std::exp(mean), 1.0);
    } else {
      mu.density = gaussian_density_grid(mean, psi);
    }
  } else {
    // The factor is its own decomposition: the point mass exp(-M') at
    // t0 = h exp(psi^2 / (2 (h^2-1))) convolved with the building-block
    // density for (b, M) = (h^2-1, M'), realized as one shifted lattice.
    const real big_m = h2 * psi2 / (2.0 * delta * delta);
    const real log_t0 = std::log(h) + psi2 / (2.0 * delta);
    LogGrid grid = phi_density_grid(delta, big_m, -big_m);
    grid.shift += log_t0;
    mu.density = std::move(grid);
  }
  check_closed_form(mu);
  return mu;
}

RxMeasure delta_n(const PotapovCoords& pc, const Vec& h, const Row& x, const Row& u) {
  FiberBase base = fiber_base(pc, x, u);
  const auto n = pc.t.rows();
  const auto k = h.size();
  if (pc.p2.rows() != n || pc.r2.rows() != n || pc.p2.cols() != k || pc.r2.cols() != k)
    throw DimensionMismatch("diagonal length must match the extra-coordinate block width");
  Row psi(k);
  if (k > 0) psi = x * pc.p2 + u * pc.r2;
  for (Eigen::Index j = 0; j < k; ++j) {
    const real hj = h[j];
    if (!(hj > 0.0) || !std::isfinite(hj))
      throw InvalidParameter("diagonal entries must be positive and finite");
    if (std::abs(hj - 1.0) <= kEpsH)
      throw SingularH("the fiber atom is undefined when a diagonal entry is within 1e-6 of 1");
    const real delta = hj * hj - 1.0;
    const real p2 = psi[j] * psi[j];
    base.log_mass -= hj * hj * p2 / (2.0 * delta * delta);
    base.log_loc += std::log(hj) + p2 / (2.0 * delta);
  }
  return atom_with_closed_form(base.log_mass, base.log_loc);
}

RxMeasure delta_n_circ(const PotapovCoords& pc, const Row& x, const Row& u) {
  const FiberBase base = fiber_base(pc, x, u);
  return atom_with_closed_form(base.log_mass, base.log_loc);
}

RxMeasure convolve(const RxMeasure& lhs, const RxMeasure& rhs) {
  validate_atoms(lhs);
  validate_atoms(rhs);
  RxMeasure out;
  for (const auto& [ta, wa] : lhs.atoms)
    for (const auto& [tb, wb] : rhs.atoms) out.atoms.emplace_back(ta * tb, wa * wb);

  std::vector<LogGrid> parts;
  const bool lhs_dense = lhs.density && !lhs.density->values.empty();
  const bool rhs_dense = rhs.density && !rhs.density->values.empty();
  if (lhs_dense && rhs_dense) {
    // Cheap pre-check: the result's support, after its own budget trim, spans
    // roughly the sum of the budget-trimmed operand supports.  Refusing
    // blatant overflows here avoids the full block convolution.
    const LogGrid& fg = *lhs.density;
    const LogGrid& gg = *rhs.density;
    const auto [ff, fl] = budget_keep_range(fg);
    const auto [gf, gl] = budget_keep_range(gg);
    if (fl > ff && gl > gf) {
      const real lo_est = fg.node(ff) + gg.node(gf);
      const real hi_est = fg.node(fl - 1) + gg.node(gl - 1);
      if (std::max(std::abs(lo_est), std::abs(hi_est)) > kSupportLMax + 2.0)
        throw SupportOverflow("convolution support would reach |ln t| = " +
                              std::to_string(std::max(std::abs(lo_est), std::abs(hi_est))) +
                              ", beyond the half-width cap " + std::to_string(kSupportLMax));
    }
    parts.push_back(convolve_grids_blocked(fg, gg));
  }
  const auto shift_against_atoms = [&parts](const LogGrid& grid,
                                            const std::vector<std::pair<real, real>>& atoms) {
    for (const auto& [t, w] : atoms) {
      if (w == 0.0) continue;
      LogGrid copy = grid;
      copy.shift += std::log(t);
      for (real& v : copy.values) v *= w;
      parts.push_back(std::move(copy));
    }
  };
  if (lhs_dense) shift_against_atoms(*lhs.density, rhs.atoms);
  if (rhs_dense) shift_against_atoms(*rhs.density, lhs.atoms);

  if (!parts.empty()) {
    LogGrid merged = std::move(parts.front());
    for (std::size_t i = 1; i < parts.size(); ++i) add_part(merged, parts[i]);
    budget_trim(merged);
    if (!merged.values.empty()) {
      const real span = std::max(std::abs(merged.node(0)),
                                 std::abs(merged.node(merged.values.size() - 1)));
      if (span > kSupportLMax)
        throw SupportOverflow("convolution support reaches |ln t| = " + std::to_string(span) +
                              ", beyond the half-width cap " + std::to_string(kSupportLMax));
      out.density = std::move(merged);
    }
  }
  // No closed form: downstream transform checks on convolution results must
  // stand on the lattice evaluation alone.
  return out;
}

cplx mellin(const RxMeasure& mu, cplx lambda) {
  if (!std::isfinite(lambda.real()) || !std::isfinite(lambda.imag()))
    throw InvalidParameter("the transform argument must be finite");
  if (lambda.real() < -1e-12 || lambda.real() > 1.0 + 1e-12) {
    std::cerr << "note: Mellin transform queried outside the strip 0 <= Re lambda "
                 "<= 1 (Re lambda = "
              << lambda.real() << "); identities are only certified inside it\n";
  }
  validate_atoms(mu);
  std::vector<cplx> terms;
  terms.reserve(mu.atoms.size() + (mu.density ? mu.density->values.size() : 0));
  for (const auto& [t, w] : mu.atoms) terms.push_back(w * std::exp(lambda * std::log(t)));
  if (mu.density && !mu.density->values.empty()) {
    const LogGrid& grid = *mu.density;
    const std::size_t nv = grid.values.size();
    const std::size_t density_begin = terms.size();
    real max_term = 0.0;
    real abs_sum = 0.0;
    real vmax = 0.0;
    for (std::size_t i = 0; i < nv; ++i) {
      const cplx term = grid.values[i] * std::exp(lambda * grid.node(i)) * grid.step;
      terms.push_back(term);
      const real mag = std::abs(term);
      max_term = std::max(max_term, mag);
      abs_sum += mag;
      vmax = std::max(vmax, grid.values[i]);
    }
    // Window-adequacy guard: a boundary that was trimmed (tiny lattice value)
    // must also carry a negligible integrand term, otherwise the stored window
    // cannot support this lambda and the sum would silently miss tail mass.
    // Boundaries holding a large value are hard support edges (the density is
    // exactly zero beyond them) and need no check.
    const real edge_values[2] = {grid.values.front(), grid.values.back()};
    const real edge_terms[2] = {std::abs(terms[density_begin]), std::abs(terms.back())};
    for (int side = 0; side < 2; ++side) {
      if (edge_values[side] >= 1e-6 * vmax) continue;
      if (edge_terms[side] / grid.step > 1e-6 * abs_sum)
        throw BranchCut(
            "the stored lattice window cannot support this lambda: the integrand "
            "has not decayed at the trimmed boundary");
    }
  }
  const cplx numeric = pairwise_sum(terms);
  if (mu.mellin_closed_form) {
    const cplx closed = mu.mellin_closed_form(lambda);
    const real deviation = rel_err(numeric, closed);
    if (deviation > 1e-6)
      throw InternalInconsistency(
          "lattice Mellin evaluation deviates from the attached closed form by relative " +
          std::to_string(deviation) + " at Re lambda = " + std::to_string(lambda.real()));
    return closed;
  }
  return numeric;
}

InfiniteConvolutionResult infinite_convolution(const std::vector<XiParams>& factors, real tol) {
  if (!(tol > 0.0) || !std::isfinite(tol))
    throw InvalidParameter("the tail tolerance must be positive");
  for (const XiParams& p : factors) validate_xi(p);
  const std::size_t len = factors.size();
  const auto log_increment = [](const XiParams& p, real l) {
    const real h2 = p.h * p.h;
    const real delta = h2 - 1.0;
    const real psi2 = p.psi * p.psi;
    const real z = 1.0 + delta * l;
    if (!(z > 0.0)) return std::numeric_limits<real>::infinity();
    return std::abs(l * std::log(p.h) - 0.5 * std::log(z) + l * l * h2 * psi2 / (2.0 * z) -
                    l * psi2 / 2.0);
  };
  std::vector<real> suffix_half(len + 1, 0.0);
  std::vector<real> suffix_one(len + 1, 0.0);
  for (std::size_t i = len; i-- > 0;) {
    suffix_half[i] = suffix_half[i + 1] + log_increment(factors[i], 0.5);
    suffix_one[i] = suffix_one[i + 1] + log_increment(factors[i], 1.0);
  }
  const auto bound_at = [&](std::size_t k) { return std::max(suffix_half[k], suffix_one[k]); };

  std::size_t used = 0;
  bool certified = len == 0;
  for (std::size_t k = 0; k < len; ++k) {
    if (bound_at(k) < tol) {
      used = k;
      certified = true;
      break;
    }
  }
  if (!certified)
    throw ToleranceNotMet("the factor list ends before the tail bound falls below " +
                          std::to_string(tol) + " (best certified bound " +
                          std::to_string(bound_at(len - 1)) + ")");

  RxMeasure acc;
  acc.atoms.emplace_back(1.0, 1.0);
  for (std::size_t k = 0; k < used; ++k) acc = convolve(acc, xi_measure(factors[k]));
  return InfiniteConvolutionResult{std::move(acc), bound_at(used), static_cast<int>(used)};
}

std::vector<real> sample_measure(const RxMeasure& mu, int count, RngStream& rng) {
  if (count < 0) throw InvalidParameter("the sample count must be nonnegative");
  validate_atoms(mu);
  const real total = mu.mass();
  if (!(std::abs(total - 1.0) <= 1e-8))
    throw NotProbability("total mass " + std::to_string(total) + " is not 1 within 1e-8");

  // Segment table: atoms first, then the piecewise-linear lattice cells
  // (including the half-hat boundary cells, so segment masses add up to the
  // exact lattice mass).
  struct Segment {
    real mass;
    bool is_atom;
    real s_lo;    // cell start (log coordinate) or atom location log
    real v_lo;    // density at cell start
    real v_hi;    // density at cell end
  };
  std::vector<Segment> segments;
  for (const auto& [t, w] : mu.atoms)
    segments.push_back(Segment{w, true, std::log(t), 0.0, 0.0});
  if (mu.density && !mu.density->values.empty()) {
    const LogGrid& grid = *mu.density;
    const auto nv = static_cast<std::int64_t>(grid.values.size());
    for (std::int64_t cell = -1; cell < nv; ++cell) {
      const real v_lo = (cell >= 0) ? grid.values[static_cast<std::size_t>(cell)] : 0.0;
      const real v_hi = (cell + 1 < nv) ? grid.values[static_cast<std::size_t>(cell + 1)] : 0.0;
      const real mass = grid.step * 0.5 * (v_lo + v_hi);
      if (!(mass > 0.0)) continue;
      const real s_lo = (static_cast<real>(grid.i0) + static_cast<real>(cell)) * grid.step +
                        grid.shift;
      segments.push_back(Segment{mass, false, s_lo, v_lo, v_hi});
    }
  }
  std::vector<real> cumulative(segments.size());
  real running = 0.0;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    running += segments[i].mass;
    cumulative[i] = running;
  }
  if (segments.empty() || !(running > 0.0))
    throw NotProbability("the measure carries no positive mass to sample");

  std::vector<real> draws;
  draws.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const real u = rng.uniform() * running;
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
    const std::size_t idx = static_cast<std::size_t>(
        std::min<std::ptrdiff_t>(it - cumulative.begin(),
                                 static_cast<std::ptrdiff_t>(segments.size()) - 1));
    const Segment& seg = segments[idx];
    if (seg.is_atom) {
      draws.push_back(std::exp(seg.s_lo));
      continue;
    }
    const real prev = (idx == 0) ? 0.0 : cumulative[idx - 1];
    const real target = std::clamp(u - prev, 0.0, seg.mass);
    const real step = mu.density->step;
    // Invert the piecewise-linear cell density: v_lo * x + slope * x^2 / 2.
    const real slope = (seg.v_hi - seg.v_lo) / step;
    real x;
    if (std::abs(slope) * step <= 1e-12 * std::max(seg.v_lo, seg.v_hi)) {
      x = target / std::max(seg.v_lo, 1e-300);
    } else {
      const real disc = std::max(0.0, seg.v_lo * seg.v_lo + 2.0 * slope * target);
      x = (-seg.v_lo + std::sqrt(disc)) / slope;
    }
    x = std::clamp(x, 0.0, step);
    draws.push_back(std::exp(seg.s_lo + x));
  }
  return draws;
}

std::string to_json(const RxMeasure& mu, int k) {
  if (k < 1 || k > 24) throw InvalidParameter("the presentation exponent k must lie in [1, 24]");
  nlohmann::json doc;
  doc["atoms"] = nlohmann::json::array();
  for (const auto& [t, w] : mu.atoms) doc["atoms"].push_back({t, w});
  if (mu.density && !mu.density->values.empty()) {
    const int half_width = presentation_half_width(mu);
    const std::size_t points = std::size_t{1} << k;
    const real span = 2.0 * static_cast<real>(half_width);
    std::vector<real> resampled(points);
    for (std::size_t j = 0; j < points; ++j) {
      const real s = -static_cast<real>(half_width) +
                     span * static_cast<real>(j) / static_cast<real>(points - 1);
      resampled[j] = density_at(*mu.density, s);
    }
    doc["grid"] = {{"L", half_width}, {"k", k}, {"values", resampled}};
  }
  return doc.dump();
}

std::string to_csv(const RxMeasure& mu, int k) {
  if (k < 1 || k > 24) throw InvalidParameter("the presentation exponent k must lie in [1, 24]");
  std::string out = "s,density\n";
  if (mu.density && !mu.density->values.empty()) {
    const int half_width = presentation_half_width(mu);
    const std::size_t points = std::size_t{1} << k;
    const real span = 2.0 * static_cast<real>(half_width);
    char line[80];
    for (std::size_t j = 0; j < points; ++j) {
      const real s = -static_cast<real>(half_width) +
                     span * static_cast<real>(j) / static_cast<real>(points - 1);
      std::snprintf(line, sizeof(line), "%.17g,%.17g\n", s, density_at(*mu.density, s));
      out += line;
    }
  }
  return out;
}

}  // namespace collig
