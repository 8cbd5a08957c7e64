#include "collig/colligation.hpp"

#include <Eigen/Dense>

#include "json.hpp"

#include <cmath>
#include <utility>

namespace collig {

namespace {

// Relative threshold declaring a representative invertible.
constexpr real kInvertibleTol = 1e-12;
// Relative threshold for the rank conditions of the reduction.
constexpr real kGenericTol = 1e-10;
// Orthogonality residual allowed in coset factors.
constexpr real kOrthoTol = 1e-8;

real spectral_norm(const Mat& m) { return svd(m).sigma[0]; }

void require_orthogonal(const Mat& u, int dim, const char* which) {
  if (u.rows() != dim || u.cols() != dim) {
    throw DimensionMismatch(std::string("coset_act: ") + which +
                            " has wrong size");
  }
  if (dim == 0) return;
  const real residual =
      (u.transpose() * u - Mat::Identity(dim, dim)).cwiseAbs().maxCoeff();
  if (residual > kOrthoTol) {
    throw NotOrthogonal(std::string("coset_act: ") + which +
                        " fails u^T u = I, residual " +
                        std::to_string(residual));
  }
}

}  // namespace

Colligation make_colligation(int n, int m, Mat rep) {
  if (n < 1) throw InvalidDimension("colligation: rank must be >= 1");
  if (m < 0) throw InvalidDimension("colligation: auxiliary size must be >= 0");
  const int size = n + m;
  if (rep.rows() != size || rep.cols() != size) {
    throw InvalidMatrix("colligation: rep must be square of size n+m");
  }
  if (!is_finite(rep)) throw InvalidMatrix("colligation: non-finite entries");
  const SvdResult f = svd(rep);
  if (f.sigma[size - 1] <= kInvertibleTol * f.sigma[0]) {
    throw SingularMatrix("colligation: rep is numerically singular");
  }
  return Colligation{n, m, std::move(rep)};
}

Colligation identity_colligation(int n) {
  if (n < 1) throw InvalidDimension("colligation: rank must be >= 1");
  return Colligation{n, 0, Mat::Identity(n, n)};
}

Colligation product(const Colligation& a, const Colligation& b) {
  if (a.n != b.n) {
    throw DimensionMismatch("product: ranks differ (" + std::to_string(a.n) +
                            " vs " + std::to_string(b.n) + ")");
  }
  const int n = a.n, ma = a.m, mb = b.m;
  const auto alpha = a.rep.topLeftCorner(n, n);
  const auto beta = a.rep.topRightCorner(n, ma);
  const auto gamma = a.rep.bottomLeftCorner(ma, n);
  const auto delta = a.rep.bottomRightCorner(ma, ma);
  const auto phi = b.rep.topLeftCorner(n, n);
  const auto psi = b.rep.topRightCorner(n, mb);
  const auto theta = b.rep.bottomLeftCorner(mb, n);
  const auto kappa = b.rep.bottomRightCorner(mb, mb);

  // The result equals diag-embed(a) * diag-embed(b), so invertibility is
  // inherited and |det| multiplies.
  Mat rep = Mat::Zero(n + ma + mb, n + ma + mb);
  rep.block(0, 0, n, n) = alpha * phi;
  rep.block(0, n, n, ma) = beta;
  rep.block(0, n + ma, n, mb) = alpha * psi;
  rep.block(n, 0, ma, n) = gamma * phi;
  rep.block(n, n, ma, ma) = delta;
  rep.block(n, n + ma, ma, mb) = gamma * psi;
  rep.block(n + ma, 0, mb, n) = theta;
  rep.block(n + ma, n + ma, mb, mb) = kappa;
  return make_colligation(n, ma + mb, std::move(rep));
}

Colligation coset_act(const Colligation& g, const Mat& u, const Mat& v) {
  require_orthogonal(u, g.m, "u");
  require_orthogonal(v, g.m, "v");
  Mat rep = g.rep;
  rep.bottomRows(g.m) = u * rep.bottomRows(g.m);
  rep.rightCols(g.m) = rep.rightCols(g.m) * v;
  return make_colligation(g.n, g.m, std::move(rep));
}

Mat CanonicalForm::assemble() const {
  const int k = m - n;
  Mat g = Mat::Zero(n + m, n + m);
  g.block(0, 0, n, n) = a;
  g.block(0, n, n, n) = b1;
  g.block(0, 2 * n, n, k) = b2;
  g.block(n, 0, n, n) = c;
  g.block(n, n, n, n) = d1;
  g.block(n, 2 * n, n, k) = d2;
  g.block(2 * n, 2 * n, k, k).diagonal() = h;
  return g;
}

Colligation CanonicalForm::as_colligation() const {
  return make_colligation(n, m, assemble());
}

CanonicalForm canonical_form(const Colligation& g) {
  const int n = g.n, m = g.m, k = m - n;
  if (m < n) {
    throw NonGenericColligation(
        "canonical_form: auxiliary size below rank (m < n)");
  }
  const real scale = spectral_norm(g.rep);

  // Stage 1: compress the m x n in-coupling onto its top n rows.  With
  // coupling_in = U diag(sigma) V^T, left-multiplying the bottom m rows by
  // U^T turns the coupling into (diag(sigma) V^T; 0); the top n x n piece is
  // the invertible c.
  const Mat coupling_in = g.rep.block(n, 0, m, n);
  const SvdResult f1 = svd(coupling_in);
  if (f1.sigma[n - 1] <= kGenericTol * scale) {
    throw NonGenericColligation(
        "canonical_form: in-coupling block is rank deficient");
  }
  Mat g1 = g.rep;
  g1.bottomRows(m) = f1.u.transpose() * g1.bottomRows(m);

  Mat g2 = std::move(g1);
  Vec h(k);
  if (k > 0) {
    // Stage 2: the strip below c, restricted to the last m columns, is
    // reduced to (0 | diag h) by its own SVD.  The right factor needs all m
    // columns: singular vectors fill the last k, and a deterministic
    // orthonormal completion of their span (Householder QR against the
    // identity) fills the first n, which land in the strip's null space.
    const Mat strip = g2.block(2 * n, n, k, m);
    const SvdResult f2 = svd(strip);
    h = f2.sigma;
    if (h[k - 1] <= kGenericTol * scale) {
      throw NonGenericColligation(
          "canonical_form: inner strip is rank deficient");
    }
    const Mat w = f2.v.leftCols(k);
    Mat basis_seed(m, m + k);
    basis_seed.leftCols(k) = w;
    basis_seed.rightCols(m) = Mat::Identity(m, m);
    Eigen::HouseholderQR<Mat> qr(basis_seed);
    Mat qfull = qr.householderQ() * Mat::Identity(m, m);
    const Mat r = qr.matrixQR().topRows(m).triangularView<Eigen::Upper>();
    for (int j = 0; j < m; ++j) {
      if (r(j, j) < 0.0) qfull.col(j) = -qfull.col(j);
    }
    Mat v2(m, m);
    v2.leftCols(n) = qfull.middleCols(k, n);  // null-space completion
    v2.rightCols(k) = w;

    g2.bottomRows(k) = f2.u.transpose() * g2.bottomRows(k);
    g2.rightCols(m) = g2.rightCols(m) * v2;
  }

  // The zero pattern must now hold to roundoff; anything larger flags a bug
  // in the reduction itself.
  real pattern_residual = 0.0;
  if (k > 0) {
    pattern_residual = g2.block(2 * n, 0, k, 2 * n).cwiseAbs().maxCoeff();
    Mat bottom_right = g2.block(2 * n, 2 * n, k, k);
    bottom_right.diagonal().setZero();
    pattern_residual =
        std::max(pattern_residual, bottom_right.cwiseAbs().maxCoeff());
  }
  if (pattern_residual > 1e-10 * scale) {
    throw InternalInconsistency(
        "canonical_form: reduction left residual " +
        std::to_string(pattern_residual) + " outside the zero pattern");
  }

  CanonicalForm cf;
  cf.n = n;
  cf.m = m;
  cf.a = g2.block(0, 0, n, n);
  cf.b1 = g2.block(0, n, n, n);
  cf.b2 = g2.block(0, 2 * n, n, k);
  cf.c = g2.block(n, 0, n, n);
  cf.d1 = g2.block(n, n, n, n);
  cf.d2 = g2.block(n, 2 * n, n, k);
  cf.h = h;
  return cf;
}

PotapovCoords potapov(const CanonicalForm& cf) {
  const real scale = spectral_norm(cf.assemble());
  const SvdResult fc = svd(cf.c);
  if (fc.sigma[cf.n - 1] <= kGenericTol * scale) {
    throw NonGenericColligation("potapov: c block is numerically singular");
  }
  const Mat c_inv = cf.c.partialPivLu().inverse();

  PotapovCoords pc;
  pc.t = c_inv;
  pc.r1 = c_inv * cf.d1;
  pc.r2 = c_inv * cf.d2;
  pc.q = -cf.a * c_inv;
  pc.p1 = cf.b1 + pc.q * cf.d1;
  pc.p2 = cf.b2 + pc.q * cf.d2;

  const LogAbsDet ldc = log_abs_det(cf.c);
  pc.log_det_t = -ldc.value;
  const LogAbsDet ldp = log_abs_det(pc.p1);
  if (ldp.singular) {
    throw NonGenericColligation("potapov: P1 block is numerically singular");
  }
  pc.log_det_p1 = ldp.value;
  pc.sum_log_h = cf.h.array().log().sum();
  return pc;
}

CanonicalForm canonical_from_potapov(const PotapovCoords& pc, const Vec& h) {
  const int n = static_cast<int>(pc.t.rows());
  const int k = static_cast<int>(h.size());
  const LogAbsDet ldt = log_abs_det(pc.t);
  if (ldt.singular) {
    throw NonGenericColligation("canonical_from_potapov: T is singular");
  }
  CanonicalForm cf;
  cf.n = n;
  cf.m = n + k;
  cf.c = pc.t.partialPivLu().inverse();
  cf.a = -pc.q * cf.c;
  cf.d1 = cf.c * pc.r1;
  cf.d2 = cf.c * pc.r2;
  cf.b1 = pc.p1 - pc.q * cf.d1;
  cf.b2 = pc.p2 - pc.q * cf.d2;
  cf.h = h;
  return cf;
}

real log_abs_det(const CanonicalForm& cf) {
  const LogAbsDet direct = log_abs_det(cf.assemble());
  const PotapovCoords pc = potapov(cf);
  const real factored = pc.log_det_p1 + pc.sum_log_h - pc.log_det_t;
  if (direct.singular || std::abs(direct.value - factored) > 1e-6) {
    throw InternalInconsistency(
        "log_abs_det: direct and factored determinants disagree (" +
        std::to_string(direct.value) + " vs " + std::to_string(factored) +
        ")");
  }
  return direct.value;
}

Colligation truncate(const Colligation& g, int k) {
  if (k < 0 || k > g.m) {
    throw InvalidTruncation("truncate: corner size must lie in [0, m]");
  }
  return make_colligation(g.n, k, g.rep.topLeftCorner(g.n + k, g.n + k));
}

Colligation random_colligation(int n, int m, real decay, RngStream& rng) {
  if (n < 1 || m < n) {
    throw InvalidDimension("random_colligation: need m >= n >= 1");
  }
  if (!(decay > 0.0 && decay < 1.0)) {
    throw InvalidParameter("random_colligation: decay must lie in (0,1)");
  }
  const int size = n + m;
  for (int attempt = 0; attempt < 100; ++attempt) {
    // Symmetric perturbation with |E_ij| <= decay^(i+j) (1-based), so
    // ||rep - diag(I, Q)||_HS stays summably small as sizes grow.
    Mat e(size, size);
    for (int i = 0; i < size; ++i) {
      for (int j = i; j < size; ++j) {
        const real amplitude = std::pow(decay, i + j + 2);
        const real value = amplitude * (2.0 * rng.uniform() - 1.0);
        e(i, j) = value;
        e(j, i) = value;
      }
    }
    Mat rep = Mat::Identity(size, size) + e;
    rep.rightCols(m) = rep.rightCols(m) * haar_orthogonal(m, rng);
    try {
      Colligation g = make_colligation(n, m, std::move(rep));
      canonical_form(g);
      return g;
    } catch (const Error&) {
      // non-generic draw; try again with fresh randomness
    }
  }
  throw GenerationFailed("random_colligation: no generic draw in 100 tries");
}

Colligation perturbed_generic(const Colligation& g, RngStream& rng,
                              real magnitude) {
  Mat rep = g.rep;
  for (int attempt = 0; attempt < 100; ++attempt) {
    try {
      Colligation candidate = make_colligation(g.n, g.m, rep);
      canonical_form(candidate);
      return candidate;
    } catch (const Error&) {
      for (int i = 0; i < rep.rows(); ++i) {
        for (int j = 0; j < rep.cols(); ++j) {
          rep(i, j) = g.rep(i, j) + magnitude * rng.normal();
        }
      }
    }
  }
  throw GenerationFailed("perturbed_generic: no generic draw in 100 tries");
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

json mat_to_json(const Mat& m) {
  json arr = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) arr.push_back(m(i, j));
  }
  return arr;
}

Mat mat_from_json(const json& arr, int rows, int cols, const char* field) {
  if (!arr.is_array() ||
      static_cast<int>(arr.size()) != rows * cols) {
    throw InvalidConfig(std::string("json field '") + field +
                        "' must be a row-major array of " +
                        std::to_string(rows * cols) + " numbers");
  }
  Mat m(rows, cols);
  int idx = 0;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const json& v = arr[idx++];
      if (!v.is_number()) {
        throw InvalidConfig(std::string("json field '") + field +
                            "' has a non-numeric entry");
      }
      m(i, j) = v.get<real>();
    }
  }
  return m;
}

json parse_document(const std::string& text) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw InvalidConfig("malformed JSON document");
  }
  return doc;
}

int get_count(const json& doc, const char* field) {
  if (!doc.contains(field) || !doc[field].is_number_integer()) {
    throw InvalidConfig(std::string("json field '") + field +
                        "' must be an integer");
  }
  return doc[field].get<int>();
}

}  // namespace

std::string to_json(const Colligation& g) {
  json doc;
  doc["n"] = g.n;
  doc["m"] = g.m;
  doc["rep"] = mat_to_json(g.rep);
  return doc.dump();
}

Colligation colligation_from_json(const std::string& text) {
  const json doc = parse_document(text);
  const int n = get_count(doc, "n");
  const int m = get_count(doc, "m");
  if (n < 1 || m < 0) throw InvalidConfig("colligation json: bad dimensions");
  if (!doc.contains("rep")) throw InvalidConfig("colligation json: no rep");
  return make_colligation(n, m, mat_from_json(doc["rep"], n + m, n + m,
                                              "rep"));
}

std::string to_json(const CanonicalForm& cf) {
  json doc;
  doc["n"] = cf.n;
  doc["m"] = cf.m;
  doc["a"] = mat_to_json(cf.a);
  doc["b1"] = mat_to_json(cf.b1);
  doc["b2"] = mat_to_json(cf.b2);
  doc["c"] = mat_to_json(cf.c);
  doc["d1"] = mat_to_json(cf.d1);
  doc["d2"] = mat_to_json(cf.d2);
  doc["h"] = json::array();
  for (int j = 0; j < cf.h.size(); ++j) doc["h"].push_back(cf.h[j]);
  return doc.dump();
}

CanonicalForm canonical_form_from_json(const std::string& text) {
  const json doc = parse_document(text);
  const int n = get_count(doc, "n");
  const int m = get_count(doc, "m");
  if (n < 1 || m < n) {
    throw InvalidConfig("canonical form json: need m >= n >= 1");
  }
  const int k = m - n;
  for (const char* field : {"a", "b1", "b2", "c", "d1", "d2", "h"}) {
    if (!doc.contains(field)) {
      throw InvalidConfig(std::string("canonical form json: missing '") +
                          field + "'");
    }
  }
  CanonicalForm cf;
  cf.n = n;
  cf.m = m;
  cf.a = mat_from_json(doc["a"], n, n, "a");
  cf.b1 = mat_from_json(doc["b1"], n, n, "b1");
  cf.b2 = mat_from_json(doc["b2"], n, k, "b2");
  cf.c = mat_from_json(doc["c"], n, n, "c");
  cf.d1 = mat_from_json(doc["d1"], n, n, "d1");
  cf.d2 = mat_from_json(doc["d2"], n, k, "d2");
  const Mat h_row = mat_from_json(doc["h"], 1, k, "h");
  cf.h = h_row.transpose();
  for (int j = 0; j < k; ++j) {
    if (!(cf.h[j] > 0.0)) {
      throw InvalidConfig("canonical form json: h entries must be positive");
    }
  }
  return cf;
}

}  // namespace collig
