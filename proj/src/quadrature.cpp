#include "collig/quadrature.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace collig {

QuadratureRule gauss_hermite(int order) {
  if (order < 1 || order > 200) {
    throw InvalidOrder("gauss_hermite: order must be in [1, 200], got " +
                       std::to_string(order));
  }

  // Jacobi matrix of the probabilists' Hermite polynomials He_k (weight
  // e^{-x^2/2}): zero diagonal, off-diagonal sqrt(k).  Its eigenvalues are the
  // nodes; the squared first eigenvector components are the weights of the
  // unit-mass measure.
  Mat jacobi = Mat::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    const real off = std::sqrt(static_cast<real>(k));
    jacobi(k, k - 1) = off;
    jacobi(k - 1, k) = off;
  }

  Eigen::SelfAdjointEigenSolver<Mat> solver(jacobi);
  if (solver.info() != Eigen::Success) {
    throw InternalInconsistency("gauss_hermite: eigen decomposition failed");
  }

  QuadratureRule rule;
  rule.nodes = solver.eigenvalues();  // ascending, hence strictly increasing
  rule.weights = solver.eigenvectors().row(0).transpose().array().square();
  // The components already sum to 1 up to roundoff; renormalize so the
  // weight-sum invariant holds exactly.
  rule.weights /= rule.weights.sum();

  // Symmetrize: the rule is mathematically even in x; averaging mirrored
  // nodes removes the O(1e-15) asymmetry of the eigensolver.
  for (int i = 0, j = order - 1; i < j; ++i, --j) {
    const real node = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    rule.nodes[i] = -node;
    rule.nodes[j] = node;
    const real weight = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.weights[i] = weight;
    rule.weights[j] = weight;
  }
  if (order % 2 == 1) rule.nodes[order / 2] = 0.0;

  return rule;
}

}  // namespace collig
