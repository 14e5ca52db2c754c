#ifndef IQBO_CMP_HPP
#define IQBO_CMP_HPP

#include "iqbo/kernel_gp.hpp"

#include <memory>
#include <optional>

namespace iqbo::cmp {

/// Paired samples (x_j, a_j) from the joint p(x, a); defines the unknown conditional p(x | a).
struct MatchedDataset {
    PointSet x_points;
    PointSet a_points;
    double ridge_lambda = 1e-3;

    Eigen::Index size() const { return x_points.rows(); }
    void validate() const;
};

/// Sequential indirect queries a_t with aggregate feedback z_t and per-observation noise variance.
struct QueryLog {
    std::vector<Vector> a_queries;
    std::vector<double> z_obs;
    std::vector<double> noise_vars;

    std::size_t size() const { return z_obs.size(); }
    bool empty() const { return z_obs.empty(); }
    void append(Vector a, double z, double noise_var);
    void validate() const;
    PointSet queries() const;
};

/// Precomputed quantities for a fixed point set in the query space. Building these once per
/// candidate grid turns every posterior evaluation into matrix products.
struct QueryFeatures {
    Matrix weights;        // N x m: (L_aa + N lambda I)^{-1} L_{a, points}
    Matrix kernel_weights; // N x m: K_xx * weights
    Vector prior_variance; // m: diag of weights^T K_xx weights
};

/// Fitted conditional mean operator: the ridge factor of (L_aa + N lambda I) together with the
/// kernels and D1 it was built from.
class CmoCache {
public:
    CmoCache(MatchedDataset d1, gp::KernelSpec kernel_x, gp::KernelSpec kernel_a);

    const MatchedDataset& data() const { return d1_; }
    const gp::KernelSpec& kernel_x() const { return kernel_x_; }
    const gp::KernelSpec& kernel_a() const { return kernel_a_; }
    const Matrix& k_xx() const { return k_xx_; }

    /// W = (L_aa + N lambda I)^{-1} L_{a, points}; one column per row of `points`.
    Matrix weights(const PointSet& points) const;
    QueryFeatures features(const PointSet& points) const;
    /// k(points, x_1..x_N), one row per point.
    Matrix x_cross(const PointSet& points) const;

private:
    MatchedDataset d1_;
    gp::KernelSpec kernel_x_;
    gp::KernelSpec kernel_a_;
    Matrix k_xx_;
    gp::CholeskyFactor ridge_;
};

std::shared_ptr<const CmoCache> fit_cmo(const MatchedDataset& d1, const gp::KernelSpec& kernel_x,
                                        const gp::KernelSpec& kernel_a);

/// State shared by both posteriors after conditioning on a QueryLog:
/// W_t, the factor of Q_t + diag(noise), and alpha = (Q_t + diag(noise))^{-1}(z - nu(a_t)).
struct Conditioning {
    Matrix w;        // N x t
    Matrix kw;       // K_xx W_t
    gp::CholeskyFactor factor;
    Vector alpha;
    Eigen::Index size() const { return w.cols(); }
};

/// Posterior of g(a) = E[f(X) | A = a] over the query space.
class AggregatePosterior {
public:
    AggregatePosterior(std::shared_ptr<const CmoCache> cache, double prior_mean,
                       std::shared_ptr<const Conditioning> cond = nullptr);

    double mean(const Vector& a) const;
    double covariance(const Vector& a, const Vector& b) const;
    /// Clamped at the variance floor.
    double variance(const Vector& a) const;
    /// Unclamped posterior variance, for invariant checks.
    double raw_variance(const Vector& a) const;

    gp::Prediction predict(const PointSet& points) const;
    gp::Prediction predict(const QueryFeatures& features) const;
    Matrix covariance_matrix(const PointSet& points) const;

    Eigen::Index num_observations() const { return cond_ ? cond_->size() : 0; }
    const CmoCache& cache() const { return *cache_; }

private:
    std::shared_ptr<const CmoCache> cache_;
    double prior_mean_;
    std::shared_ptr<const Conditioning> cond_;
};

/// Deconditional posterior of f over the target space.
class DeconditionalPosterior {
public:
    DeconditionalPosterior(std::shared_ptr<const CmoCache> cache, double prior_mean,
                           std::shared_ptr<const Conditioning> cond = nullptr);

    double mean(const Vector& x) const;
    double covariance(const Vector& x, const Vector& y) const;
    double variance(const Vector& x) const;
    double raw_variance(const Vector& x) const;

    gp::Prediction predict(const PointSet& points) const;
    /// `x_cross` is CmoCache::x_cross(points), precomputed for a fixed grid.
    gp::Prediction predict(const PointSet& points, const Matrix& x_cross) const;
    Matrix covariance_matrix(const PointSet& points) const;
    Matrix covariance_matrix(const PointSet& points, const Matrix& x_cross) const;

    Eigen::Index num_observations() const { return cond_ ? cond_->size() : 0; }
    const CmoCache& cache() const { return *cache_; }

private:
    std::shared_ptr<const CmoCache> cache_;
    double prior_mean_;
    std::shared_ptr<const Conditioning> cond_;
};

/// Prior CMP on g: nu(a) = prior_mean and q(a, a') = w(a)^T K_xx w(a').
AggregatePosterior aggregate_prior(std::shared_ptr<const CmoCache> cache, double prior_mean = 0.0);

/// Condition on the log. Returns nullptr for an empty log.
std::shared_ptr<const Conditioning> condition(const CmoCache& cache, const QueryLog& log, double prior_mean);

DeconditionalPosterior decondition(std::shared_ptr<const CmoCache> cache, const QueryLog& log,
                                   double prior_mean = 0.0);
AggregatePosterior aggregate_posterior(std::shared_ptr<const CmoCache> cache, const QueryLog& log,
                                       double prior_mean = 0.0);

} // namespace iqbo::cmp

#endif
