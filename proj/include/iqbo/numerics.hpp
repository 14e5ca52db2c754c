#ifndef IQBO_NUMERICS_HPP
#define IQBO_NUMERICS_HPP

#include "iqbo/common.hpp"

namespace iqbo::numerics {

double normal_pdf(double x);
double normal_cdf(double x);

/// log Phi(x). Below x = -8 the complementary-error-function asymptotic series
/// is used so the result stays finite far into the lower tail.
double log_normal_cdf(double x);

/// phi(x) / Phi(x), stable for very negative x.
double inverse_mills(double x);

struct QuadratureRule {
    Vector nodes;
    Vector weights;
};

/// Gauss-Legendre rule on [lo, hi].
QuadratureRule gauss_legendre(int order, double lo = -1.0, double hi = 1.0);

/// Gauss-Hermite rule for expectations under N(0, 1): E[f(Z)] ~= sum w_i f(x_i).
QuadratureRule gauss_hermite(int order);

} // namespace iqbo::numerics

#endif
