#include "collig/linalg.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace collig {

SvdResult svd(const Mat& a) {
  if (a.size() == 0) throw InvalidMatrix("svd: empty matrix");
  if (!is_finite(a)) throw InvalidMatrix("svd: non-finite entries");

  Eigen::JacobiSVD<Mat> solver(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  SvdResult result;
  result.u = solver.matrixU();
  result.sigma = solver.singularValues();
  result.v = solver.matrixV();

  // Deterministic sign choice per singular pair: anchor on v's largest-
  // magnitude entry (first index on ties) and make it non-negative.
  const int pairs = static_cast<int>(result.sigma.size());
  for (int k = 0; k < pairs; ++k) {
    int anchor = 0;
    result.v.col(k).cwiseAbs().maxCoeff(&anchor);
    if (result.v(anchor, k) < 0.0) {
      result.v.col(k) = -result.v.col(k);
      result.u.col(k) = -result.u.col(k);
    }
  }
  return result;
}

PolarResult polar_decompose(const Mat& a) {
  if (a.rows() != a.cols()) {
    throw InvalidMatrix("polar_decompose: matrix must be square");
  }
  const SvdResult f = svd(a);
  const real sigma_max = f.sigma.size() > 0 ? f.sigma[0] : 0.0;
  const real sigma_min = f.sigma.size() > 0 ? f.sigma[f.sigma.size() - 1] : 0.0;
  if (sigma_min <= 1e-12 * sigma_max || sigma_max == 0.0) {
    throw SingularMatrix("polar_decompose: orthogonal factor ill determined");
  }
  PolarResult result;
  result.q = f.u * f.v.transpose();
  result.p = f.v * f.sigma.asDiagonal() * f.v.transpose();
  return result;
}

Mat haar_orthogonal(int dim, RngStream& rng) {
  if (dim < 1) throw InvalidDimension("haar_orthogonal: dim must be >= 1");
  Mat gaussian(dim, dim);
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < dim; ++j) gaussian(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Mat> qr(gaussian);
  Mat q = qr.householderQ();
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Fix the column signs so Q comes from the unique QR with positive
  // R-diagonal; without this the distribution is not Haar.
  for (int j = 0; j < dim; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

LogAbsDet log_abs_det(const Mat& a) {
  if (a.rows() != a.cols()) {
    throw InvalidMatrix("log_abs_det: matrix must be square");
  }
  if (a.size() == 0) throw InvalidMatrix("log_abs_det: empty matrix");
  if (!is_finite(a)) throw InvalidMatrix("log_abs_det: non-finite entries");

  Eigen::FullPivLU<Mat> lu(a);
  LogAbsDet result;
  if (!lu.isInvertible()) {
    result.value = -std::numeric_limits<real>::infinity();
    result.singular = true;
    return result;
  }
  const auto& factors = lu.matrixLU();
  real acc = 0.0;
  for (int i = 0; i < a.rows(); ++i) acc += std::log(std::abs(factors(i, i)));
  result.value = acc;
  return result;
}

}  // namespace collig
