#ifndef IQBO_KERNEL_GP_HPP
#define IQBO_KERNEL_GP_HPP

#include "iqbo/common.hpp"

#include <Eigen/Cholesky>

namespace iqbo::gp {

/// Squared-exponential kernel with one lengthscale per input dimension:
///
///   k(x, x') = variance * exp(-0.5 * sum_i (x_i - x'_i)^2 / l_i^2)
struct KernelSpec {
    Vector lengthscales;
    double variance = 1.0;

    static KernelSpec squared_exponential(Vector lengthscales, double variance);
    /// Isotropic shorthand.
    static KernelSpec squared_exponential(std::size_t dim, double lengthscale, double variance);

    std::size_t dim() const { return static_cast<std::size_t>(lengthscales.size()); }

    /// Throws std::invalid_argument unless all lengthscales and the variance are positive.
    void validate() const;

    double operator()(const Vector& a, const Vector& b) const;

    /// Cross-covariance matrix between the rows of `a` and the rows of `b`.
    Matrix cross(const PointSet& a, const PointSet& b) const;
};

struct GramMatrix {
    PointSet points;
    Matrix values;
    double jitter = 0.0;
};

/// Gram matrix on `points`. Symmetric by construction; the diagonal equals the kernel variance.
GramMatrix gram(const KernelSpec& kernel, const PointSet& points);

/// Jitter escalation for symmetric factorizations. Values are relative to the mean diagonal.
struct JitterPolicy {
    double initial = 1e-10;
    double growth = 10.0;
    double maximum = 1e-4;
};

/// Cholesky factor of (A + jitter I). The first attempt uses `base_jitter`; on failure the
/// jitter escalates per the policy and NumericalError is thrown once it is exhausted.
class CholeskyFactor {
public:
    CholeskyFactor() = default;
    explicit CholeskyFactor(const Matrix& a, double base_jitter = 0.0, JitterPolicy policy = {});

    Eigen::Index size() const { return llt_.rows(); }
    double jitter() const { return jitter_; }

    /// (A + jitter I)^{-1} B
    Matrix solve(const Matrix& b) const;
    Vector solve(const Vector& b) const;
    /// L^{-1} B with L the lower factor.
    Matrix solve_lower(const Matrix& b) const;
    double log_det() const;
    Matrix lower() const;

private:
    Eigen::LLT<Matrix> llt_;
    double jitter_ = 0.0;
};

/// Solve (G.values + jitter I) X = B with jitter escalation starting from G.jitter.
Matrix chol_solve(const GramMatrix& g, const Matrix& b, JitterPolicy policy = {});

/// Pointwise predictive moments.
struct Prediction {
    Vector mean;
    Vector variance;

    Vector sd() const { return variance.cwiseMax(kVarianceFloor).cwiseSqrt(); }
};

/// Exact GP posterior with a constant prior mean.
class GpPosterior {
public:
    GpPosterior(KernelSpec kernel, PointSet train, const Vector& targets, double noise_var,
                double prior_mean = 0.0);

    const KernelSpec& kernel() const { return kernel_; }
    double noise_var() const { return noise_var_; }
    double prior_mean() const { return prior_mean_; }
    Eigen::Index num_observations() const { return train_.rows(); }

    double mean(const Vector& x) const;
    double covariance(const Vector& x, const Vector& y) const;
    /// Variance clamped at the floor.
    double variance(const Vector& x) const;

    Prediction predict(const PointSet& points) const;
    Matrix covariance_matrix(const PointSet& points) const;

private:
    KernelSpec kernel_;
    PointSet train_;
    double noise_var_;
    double prior_mean_;
    CholeskyFactor factor_;
    Vector alpha_;
};

/// Condition GP(prior_mean, kernel) on observations y_i = f(X_i) + N(0, noise_var).
/// noise_var = 0 is accepted; the factorization then relies on jitter.
GpPosterior gp_regress(const KernelSpec& kernel, const PointSet& x, const Vector& y, double noise_var,
                       double prior_mean = 0.0);

} // namespace iqbo::gp

#endif
