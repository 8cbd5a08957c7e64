// Gauss-Hermite quadrature against the standard Gaussian weight.
#pragma once

#include "collig/types.hpp"

namespace collig {

// Nodes are strictly increasing; weights are positive and sum to 1, so
// sum_i w_i f(x_i) approximates E[f(X)] for X ~ N(0,1) (exact for
// polynomials of degree <= 2*order - 1).
struct QuadratureRule {
  Vec nodes;
  Vec weights;
  int order() const { return static_cast<int>(nodes.size()); }
};

// Golub-Welsch on the probabilists' Hermite recurrence.  order must lie in
// [1, 200]; anything else raises InvalidOrder.
QuadratureRule gauss_hermite(int order);

}  // namespace collig
