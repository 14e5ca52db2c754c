#include "iqbo/kernel_gp.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace iqbo::gp {

namespace {

void check_points(const KernelSpec& kernel, const PointSet& points, const char* what)
{
    if (points.rows() > 0 && static_cast<std::size_t>(points.cols()) != kernel.dim()) {
        std::ostringstream msg;
        msg << what << ": point dimension " << points.cols() << " does not match kernel dimension "
            << kernel.dim();
        throw std::invalid_argument(msg.str());
    }
    if (!points.allFinite())
        throw std::invalid_argument(std::string(what) + ": non-finite coordinates");
}

} // namespace

KernelSpec KernelSpec::squared_exponential(Vector lengthscales, double variance)
{
    KernelSpec spec{std::move(lengthscales), variance};
    spec.validate();
    return spec;
}

KernelSpec KernelSpec::squared_exponential(std::size_t dim, double lengthscale, double variance)
{
    return squared_exponential(Vector::Constant(static_cast<Eigen::Index>(dim), lengthscale), variance);
}

void KernelSpec::validate() const
{
    if (lengthscales.size() == 0)
        throw std::invalid_argument("KernelSpec: no lengthscales");
    if (!(lengthscales.array() > 0.0).all() || !lengthscales.allFinite())
        throw std::invalid_argument("KernelSpec: lengthscales must be positive");
    if (!(variance > 0.0) || !std::isfinite(variance))
        throw std::invalid_argument("KernelSpec: variance must be positive");
}

double KernelSpec::operator()(const Vector& a, const Vector& b) const
{
    const double r2 = ((a - b).array() / lengthscales.array()).square().sum();
    return variance * std::exp(-0.5 * r2);
}

Matrix KernelSpec::cross(const PointSet& a, const PointSet& b) const
{
    check_points(*this, a, "KernelSpec::cross");
    check_points(*this, b, "KernelSpec::cross");
    const Vector inv = lengthscales.cwiseInverse();
    const Matrix sa = a * inv.asDiagonal();
    const Matrix sb = b * inv.asDiagonal();
    const Vector na = sa.rowwise().squaredNorm();
    const Vector nb = sb.rowwise().squaredNorm();
    Matrix r2 = -2.0 * sa * sb.transpose();
    r2.colwise() += na;
    r2.rowwise() += nb.transpose();
    return variance * (-0.5 * r2.cwiseMax(0.0)).array().exp().matrix();
}

GramMatrix gram(const KernelSpec& kernel, const PointSet& points)
{
    kernel.validate();
    check_points(kernel, points, "gram");
    const auto n = points.rows();
    Matrix values(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        values(i, i) = kernel.variance;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double v = kernel(points.row(i).transpose(), points.row(j).transpose());
            values(i, j) = v;
            values(j, i) = v;
        }
    }
    return {points, std::move(values), 0.0};
}

CholeskyFactor::CholeskyFactor(const Matrix& a, double base_jitter, JitterPolicy policy)
{
    if (a.rows() != a.cols())
        throw std::invalid_argument("CholeskyFactor: matrix is not square");
    const auto n = a.rows();
    if (n == 0)
        return;
    const double scale = std::max(a.diagonal().cwiseAbs().mean(), 1e-300);
    double jitter = base_jitter;
    double relative = policy.initial;
    for (;;) {
        Matrix shifted = a;
        shifted.diagonal().array() += jitter;
        llt_.compute(shifted);
        if (llt_.info() == Eigen::Success && llt_.matrixLLT().diagonal().allFinite()) {
            jitter_ = jitter;
            return;
        }
        if (relative > policy.maximum * (1.0 + 1e-9)) {
            std::ostringstream msg;
            msg << "Cholesky factorization failed after jitter " << jitter << " on a " << n << "x" << n
                << " matrix";
            throw NumericalError(msg.str());
        }
        jitter = base_jitter + relative * scale;
        relative *= policy.growth;
    }
}

Matrix CholeskyFactor::solve(const Matrix& b) const
{
    if (size() == 0)
        return Matrix(0, b.cols());
    return llt_.solve(b);
}

Vector CholeskyFactor::solve(const Vector& b) const
{
    if (size() == 0)
        return Vector(0);
    return llt_.solve(b);
}

Matrix CholeskyFactor::solve_lower(const Matrix& b) const
{
    if (size() == 0)
        return Matrix(0, b.cols());
    return llt_.matrixL().solve(b);
}

Matrix CholeskyFactor::lower() const
{
    if (size() == 0)
        return Matrix(0, 0);
    return llt_.matrixL();
}

double CholeskyFactor::log_det() const
{
    if (size() == 0)
        return 0.0;
    return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

Matrix chol_solve(const GramMatrix& g, const Matrix& b, JitterPolicy policy)
{
    if (b.rows() != g.values.rows())
        throw std::invalid_argument("chol_solve: right-hand side has the wrong number of rows");
    return CholeskyFactor(g.values, g.jitter, policy).solve(b);
}

GpPosterior::GpPosterior(KernelSpec kernel, PointSet train, const Vector& targets, double noise_var,
                         double prior_mean)
    : kernel_(std::move(kernel)), train_(std::move(train)), noise_var_(noise_var), prior_mean_(prior_mean)
{
    kernel_.validate();
    if (train_.rows() != targets.size())
        throw std::invalid_argument("gp_regress: |X| != |y|");
    if (!(noise_var_ >= 0.0))
        throw std::invalid_argument("gp_regress: noise variance must be nonnegative");
    if (train_.rows() == 0)
        return;
    check_points(kernel_, train_, "gp_regress");
    Matrix k = gram(kernel_, train_).values;
    k.diagonal().array() += noise_var_;
    factor_ = CholeskyFactor(k);
    alpha_ = factor_.solve(Vector(targets.array() - prior_mean_));
}

double GpPosterior::mean(const Vector& x) const
{
    PointSet p = x.transpose();
    return predict(p).mean(0);
}

double GpPosterior::covariance(const Vector& x, const Vector& y) const
{
    double prior = kernel_(x, y);
    if (train_.rows() == 0)
        return prior;
    PointSet px = x.transpose();
    PointSet py = y.transpose();
    const Matrix vx = factor_.solve_lower(kernel_.cross(train_, px));
    const Matrix vy = factor_.solve_lower(kernel_.cross(train_, py));
    return prior - (vx.transpose() * vy)(0, 0);
}

double GpPosterior::variance(const Vector& x) const
{
    return std::max(covariance(x, x), kVarianceFloor);
}

Prediction GpPosterior::predict(const PointSet& points) const
{
    check_points(kernel_, points, "GpPosterior::predict");
    const auto m = points.rows();
    Prediction out{Vector::Constant(m, prior_mean_), Vector::Constant(m, kernel_.variance)};
    if (train_.rows() == 0)
        return out;
    const Matrix kx = kernel_.cross(train_, points);
    out.mean += kx.transpose() * alpha_;
    const Matrix v = factor_.solve_lower(kx);
    out.variance -= v.colwise().squaredNorm().transpose();
    out.variance = out.variance.cwiseMax(kVarianceFloor);
    return out;
}

Matrix GpPosterior::covariance_matrix(const PointSet& points) const
{
    Matrix cov = kernel_.cross(points, points);
    if (train_.rows() > 0) {
        const Matrix v = factor_.solve_lower(kernel_.cross(train_, points));
        cov.noalias() -= v.transpose() * v;
    }
    return 0.5 * (cov + cov.transpose());
}

GpPosterior gp_regress(const KernelSpec& kernel, const PointSet& x, const Vector& y, double noise_var,
                       double prior_mean)
{
    return GpPosterior(kernel, x, y, noise_var, prior_mean);
}

} // namespace iqbo::gp
