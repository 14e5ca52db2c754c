#include "iqbo/numerics.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace iqbo::numerics {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;
constexpr double kTailSwitch = -8.0;

// Mills ratio R(t) = Phi(-t) / phi(t) for t >= 8, from the continued fraction
// 1/(t + 1/(t + 2/(t + 3/(t + ...)))) evaluated bottom-up.
double mills_ratio_upper(double t)
{
    double tail = t;
    for (int k = 60; k >= 1; --k)
        tail = t + k / tail;
    return 1.0 / tail;
}

} // namespace

double normal_pdf(double x)
{
    return std::exp(-0.5 * x * x - kLogSqrt2Pi);
}

double normal_cdf(double x)
{
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

double log_normal_cdf(double x)
{
    if (x > 0.0)
        return std::log1p(-normal_cdf(-x));
    if (x >= kTailSwitch)
        return std::log(normal_cdf(x));
    return -0.5 * x * x - kLogSqrt2Pi + std::log(mills_ratio_upper(-x));
}

double inverse_mills(double x)
{
    if (x >= kTailSwitch)
        return normal_pdf(x) / normal_cdf(x);
    return 1.0 / mills_ratio_upper(-x);
}

QuadratureRule gauss_legendre(int order, double lo, double hi)
{
    if (order < 1)
        throw std::invalid_argument("gauss_legendre: order must be >= 1");
    QuadratureRule rule{Vector(order), Vector(order)};
    const double mid = 0.5 * (hi + lo);
    const double half = 0.5 * (hi - lo);
    const int m = (order + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p1 = 1.0;
            double p2 = 0.0;
            for (int j = 0; j < order; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1);
            }
            dp = order * (z * p1 - p2) / (z * z - 1.0);
            const double step = p1 / dp;
            z -= step;
            if (std::abs(step) < 1e-15)
                break;
        }
        rule.nodes(i) = mid - half * z;
        rule.nodes(order - 1 - i) = mid + half * z;
        rule.weights(i) = 2.0 * half / ((1.0 - z * z) * dp * dp);
        rule.weights(order - 1 - i) = rule.weights(i);
    }
    return rule;
}

QuadratureRule gauss_hermite(int order)
{
    if (order < 1)
        throw std::invalid_argument("gauss_hermite: order must be >= 1");
    // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite polynomials.
    Matrix jacobi = Matrix::Zero(order, order);
    for (int k = 1; k < order; ++k) {
        jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
        jacobi(k - 1, k) = jacobi(k, k - 1);
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
    QuadratureRule rule{eig.eigenvalues(), Vector(order)};
    for (int i = 0; i < order; ++i) {
        const double v0 = eig.eigenvectors()(0, i);
        rule.weights(i) = v0 * v0;
    }
    return rule;
}

} // namespace iqbo::numerics
