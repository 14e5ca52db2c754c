#include "iqbo/cmp.hpp"

#include <cmath>
#include <utility>

namespace iqbo::cmp {

void MatchedDataset::validate() const
{
    if (x_points.rows() < 1)
        throw std::invalid_argument("MatchedDataset: need at least one pair");
    if (x_points.rows() != a_points.rows())
        throw std::invalid_argument("MatchedDataset: x and a point counts differ");
    if (!(ridge_lambda > 0.0))
        throw std::invalid_argument("MatchedDataset: ridge_lambda must be positive");
}

void QueryLog::append(Vector a, double z, double noise_var)
{
    if (!(noise_var > 0.0))
        throw std::invalid_argument("QueryLog: noise variance must be positive");
    a_queries.push_back(std::move(a));
    z_obs.push_back(z);
    noise_vars.push_back(noise_var);
}

void QueryLog::validate() const
{
    if (a_queries.size() != z_obs.size() || z_obs.size() != noise_vars.size())
        throw std::invalid_argument("QueryLog: list lengths differ");
    for (double v : noise_vars)
        if (!(v > 0.0))
            throw std::invalid_argument("QueryLog: noise variance must be positive");
}

PointSet QueryLog::queries() const
{
    if (a_queries.empty())
        return {};
    PointSet out(static_cast<Eigen::Index>(a_queries.size()), a_queries.front().size());
    for (std::size_t i = 0; i < a_queries.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = a_queries[i].transpose();
    return out;
}

CmoCache::CmoCache(MatchedDataset d1, gp::KernelSpec kernel_x, gp::KernelSpec kernel_a)
    : d1_(std::move(d1)), kernel_x_(std::move(kernel_x)), kernel_a_(std::move(kernel_a))
{
    d1_.validate();
    kernel_x_.validate();
    kernel_a_.validate();
    if (static_cast<std::size_t>(d1_.x_points.cols()) != kernel_x_.dim())
        throw std::invalid_argument("fit_cmo: x dimension does not match kernel_x");
    if (static_cast<std::size_t>(d1_.a_points.cols()) != kernel_a_.dim())
        throw std::invalid_argument("fit_cmo: a dimension does not match kernel_a");
    k_xx_ = gp::gram(kernel_x_, d1_.x_points).values;
    Matrix reg = gp::gram(kernel_a_, d1_.a_points).values;
    reg.diagonal().array() += static_cast<double>(d1_.size()) * d1_.ridge_lambda;
    ridge_ = gp::CholeskyFactor(reg);
}

Matrix CmoCache::weights(const PointSet& points) const
{
    return ridge_.solve(kernel_a_.cross(d1_.a_points, points));
}

QueryFeatures CmoCache::features(const PointSet& points) const
{
    QueryFeatures f;
    f.weights = weights(points);
    f.kernel_weights = k_xx_ * f.weights;
    f.prior_variance = f.weights.cwiseProduct(f.kernel_weights).colwise().sum().transpose();
    return f;
}

Matrix CmoCache::x_cross(const PointSet& points) const
{
    return kernel_x_.cross(points, d1_.x_points);
}

std::shared_ptr<const CmoCache> fit_cmo(const MatchedDataset& d1, const gp::KernelSpec& kernel_x,
                                        const gp::KernelSpec& kernel_a)
{
    return std::make_shared<const CmoCache>(d1, kernel_x, kernel_a);
}

std::shared_ptr<const Conditioning> condition(const CmoCache& cache, const QueryLog& log, double prior_mean)
{
    log.validate();
    if (log.empty())
        return nullptr;
    auto cond = std::make_shared<Conditioning>();
    cond->w = cache.weights(log.queries());
    cond->kw = cache.k_xx() * cond->w;
    Matrix q = cond->w.transpose() * cond->kw;
    q = 0.5 * (q + q.transpose());
    for (std::size_t i = 0; i < log.size(); ++i)
        q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += log.noise_vars[i];
    cond->factor = gp::CholeskyFactor(q);
    Vector resid(static_cast<Eigen::Index>(log.size()));
    for (std::size_t i = 0; i < log.size(); ++i)
        resid(static_cast<Eigen::Index>(i)) = log.z_obs[i] - prior_mean;
    cond->alpha = cond->factor.solve(resid);
    return cond;
}

// --- AggregatePosterior ---------------------------------------------------------------

AggregatePosterior::AggregatePosterior(std::shared_ptr<const CmoCache> cache, double prior_mean,
                                       std::shared_ptr<const Conditioning> cond)
    : cache_(std::move(cache)), prior_mean_(prior_mean), cond_(std::move(cond))
{
}

gp::Prediction AggregatePosterior::predict(const QueryFeatures& f) const
{
    gp::Prediction out{Vector::Constant(f.weights.cols(), prior_mean_), f.prior_variance};
    if (cond_) {
        const Matrix cross = cond_->w.transpose() * f.kernel_weights; // t x m
        out.mean += cross.transpose() * cond_->alpha;
        out.variance -= cond_->factor.solve_lower(cross).colwise().squaredNorm().transpose();
    }
    return out;
}

gp::Prediction AggregatePosterior::predict(const PointSet& points) const
{
    auto out = predict(cache_->features(points));
    out.variance = out.variance.cwiseMax(kVarianceFloor);
    return out;
}

Matrix AggregatePosterior::covariance_matrix(const PointSet& points) const
{
    const QueryFeatures f = cache_->features(points);
    Matrix cov = f.weights.transpose() * f.kernel_weights;
    if (cond_) {
        const Matrix v = cond_->factor.solve_lower(cond_->w.transpose() * f.kernel_weights);
        cov.noalias() -= v.transpose() * v;
    }
    return 0.5 * (cov + cov.transpose());
}

double AggregatePosterior::mean(const Vector& a) const
{
    return predict(PointSet(a.transpose())).mean(0);
}

double AggregatePosterior::covariance(const Vector& a, const Vector& b) const
{
    PointSet pts(2, a.size());
    pts.row(0) = a.transpose();
    pts.row(1) = b.transpose();
    return covariance_matrix(pts)(0, 1);
}

double AggregatePosterior::raw_variance(const Vector& a) const
{
    return predict(cache_->features(PointSet(a.transpose()))).variance(0);
}

double AggregatePosterior::variance(const Vector& a) const
{
    return std::max(raw_variance(a), kVarianceFloor);
}

// --- DeconditionalPosterior ------------------------------------------------------------

DeconditionalPosterior::DeconditionalPosterior(std::shared_ptr<const CmoCache> cache, double prior_mean,
                                               std::shared_ptr<const Conditioning> cond)
    : cache_(std::move(cache)), prior_mean_(prior_mean), cond_(std::move(cond))
{
}

gp::Prediction DeconditionalPosterior::predict(const PointSet& points, const Matrix& x_cross) const
{
    const auto m = points.rows();
    gp::Prediction out{Vector::Constant(m, prior_mean_), Vector::Constant(m, cache_->kernel_x().variance)};
    if (cond_) {
        const Matrix b = x_cross * cond_->w; // m x t
        out.mean += b * cond_->alpha;
        out.variance -= cond_->factor.solve_lower(b.transpose()).colwise().squaredNorm().transpose();
    }
    return out;
}

gp::Prediction DeconditionalPosterior::predict(const PointSet& points) const
{
    auto out = predict(points, cache_->x_cross(points));
    out.variance = out.variance.cwiseMax(kVarianceFloor);
    return out;
}

Matrix DeconditionalPosterior::covariance_matrix(const PointSet& points, const Matrix& x_cross) const
{
    Matrix cov = cache_->kernel_x().cross(points, points);
    if (cond_) {
        const Matrix v = cond_->factor.solve_lower((x_cross * cond_->w).transpose());
        cov.noalias() -= v.transpose() * v;
    }
    return 0.5 * (cov + cov.transpose());
}

Matrix DeconditionalPosterior::covariance_matrix(const PointSet& points) const
{
    return covariance_matrix(points, cache_->x_cross(points));
}

double DeconditionalPosterior::mean(const Vector& x) const
{
    const PointSet p = x.transpose();
    return predict(p, cache_->x_cross(p)).mean(0);
}

double DeconditionalPosterior::covariance(const Vector& x, const Vector& y) const
{
    PointSet pts(2, x.size());
    pts.row(0) = x.transpose();
    pts.row(1) = y.transpose();
    return covariance_matrix(pts)(0, 1);
}

double DeconditionalPosterior::raw_variance(const Vector& x) const
{
    const PointSet p = x.transpose();
    return predict(p, cache_->x_cross(p)).variance(0);
}

double DeconditionalPosterior::variance(const Vector& x) const
{
    return std::max(raw_variance(x), kVarianceFloor);
}

// --- free functions --------------------------------------------------------------------

AggregatePosterior aggregate_prior(std::shared_ptr<const CmoCache> cache, double prior_mean)
{
    return AggregatePosterior(std::move(cache), prior_mean);
}

DeconditionalPosterior decondition(std::shared_ptr<const CmoCache> cache, const QueryLog& log, double prior_mean)
{
    auto cond = condition(*cache, log, prior_mean);
    return DeconditionalPosterior(std::move(cache), prior_mean, std::move(cond));
}

AggregatePosterior aggregate_posterior(std::shared_ptr<const CmoCache> cache, const QueryLog& log,
                                       double prior_mean)
{
    auto cond = condition(*cache, log, prior_mean);
    return AggregatePosterior(std::move(cache), prior_mean, std::move(cond));
}

} // namespace iqbo::cmp
