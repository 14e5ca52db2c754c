#include "iqbo/acquisition.hpp"
#include "iqbo/numerics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace iqbo::acquisition {

namespace {

using numerics::log_normal_cdf;
using numerics::normal_cdf;
using numerics::normal_pdf;

constexpr double kLog2PiE = 2.8378770664093454836; // log(2 pi e)

// Square-root factor of a covariance for joint sampling. Falls back to a clipped
// eigendecomposition when the jitter budget is exhausted.
Matrix sampling_factor(const Matrix& cov)
{
    try {
        return gp::CholeskyFactor(cov, 0.0).lower();
    } catch (const NumericalError&) {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
        return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    }
}

double log_prob_max_below(double y, const Vector& mean, const Vector& sd)
{
    double acc = 0.0;
    for (Eigen::Index i = 0; i < mean.size(); ++i)
        acc += log_normal_cdf((y - mean(i)) / sd(i));
    return acc;
}

double max_quantile(double q, const Vector& mean, const Vector& sd)
{
    const double spread = sd.maxCoeff();
    double lo = mean.maxCoeff() - 10.0 * spread;
    double hi = mean.maxCoeff() + 10.0 * spread;
    const double target = std::log(q);
    const double tol = 1e-6 * std::max(1.0, spread);
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        if (log_prob_max_below(mid, mean, sd) < target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace

MaxValueSamples sample_max_values(const Vector& mean, const Matrix& cov, int count, MaxValueMethod method, Rng& rng)
{
    if (mean.size() == 0)
        throw std::invalid_argument("sample_max_values: empty grid");
    if (count < 1)
        throw std::invalid_argument("sample_max_values: count must be >= 1");
    if (cov.rows() != mean.size() || cov.cols() != mean.size())
        throw std::invalid_argument("sample_max_values: covariance shape mismatch");

    MaxValueSamples out;
    out.method = method;
    out.values.reserve(static_cast<std::size_t>(count));

    const Vector var = cov.diagonal();
    if ((var.array() <= kVarianceFloor).all()) {
        out.degenerate = true;
        out.values.assign(static_cast<std::size_t>(count), mean.maxCoeff());
        return out;
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    if (method == MaxValueMethod::ThompsonGrid) {
        const Matrix factor = sampling_factor(cov);
        Vector xi(mean.size());
        for (int s = 0; s < count; ++s) {
            for (Eigen::Index i = 0; i < xi.size(); ++i)
                xi(i) = normal(rng);
            out.values.push_back((mean + factor * xi).maxCoeff());
        }
        return out;
    }

    const Vector sd = var.cwiseMax(kVarianceFloor).cwiseSqrt();
    const double y25 = max_quantile(0.25, mean, sd);
    const double y50 = max_quantile(0.50, mean, sd);
    const double y75 = max_quantile(0.75, mean, sd);
    // Gumbel quantiles: y_q = mu - beta log(-log q).
    const double denom = std::log(-std::log(0.25)) - std::log(-std::log(0.75));
    const double beta = (y75 - y25) / denom;
    if (!(beta > 0.0)) {
        out.degenerate = true;
        out.values.assign(static_cast<std::size_t>(count), y50);
        return out;
    }
    const double mu = y50 + beta * std::log(std::log(2.0));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int s = 0; s < count; ++s) {
        double u = unif(rng);
        while (u <= 0.0)
            u = unif(rng);
        out.values.push_back(mu - beta * std::log(-std::log(u)));
    }
    return out;
}

MaxValueSamples sample_max_values(const cmp::DeconditionalPosterior& post_f, const PointSet& grid, int count,
                                  MaxValueMethod method, std::uint64_t seed)
{
    if (grid.rows() == 0)
        throw std::invalid_argument("sample_max_values: empty grid");
    Rng rng(seed);
    const Matrix cross = post_f.cache().x_cross(grid);
    const auto pred = post_f.predict(grid, cross);
    if (method == MaxValueMethod::Gumbel) {
        Matrix diag = Matrix::Zero(grid.rows(), grid.rows());
        diag.diagonal() = pred.variance.cwiseMax(0.0);
        return sample_max_values(pred.mean, diag, count, method, rng);
    }
    return sample_max_values(pred.mean, post_f.covariance_matrix(grid, cross), count, method, rng);
}

double truncation_entropy_gain(double gamma)
{
    return 0.5 * gamma * numerics::inverse_mills(gamma) - log_normal_cdf(gamma);
}

double log_truncation_entropy_gain(double gamma)
{
    if (gamma < 8.0)
        return std::log(truncation_entropy_gain(gamma));
    // gain = phi(gamma) (R(gamma) + gamma / 2) (1 + O(Phi(-gamma))), R the upper Mills ratio.
    const double mills = 1.0 / numerics::inverse_mills(-gamma);
    return -0.5 * gamma * gamma - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(mills + 0.5 * gamma);
}

double cmes_log_score(double mean, double sd, const std::vector<double>& maxes)
{
    if (maxes.empty())
        throw std::invalid_argument("cmes_log_score: no max-value samples");
    const double s = std::max(sd, std::sqrt(kVarianceFloor));
    std::vector<double> logs;
    logs.reserve(maxes.size());
    double top = -std::numeric_limits<double>::infinity();
    for (double f_star : maxes) {
        logs.push_back(log_truncation_entropy_gain((f_star - mean) / s));
        top = std::max(top, logs.back());
    }
    if (!std::isfinite(top))
        return top;
    double acc = 0.0;
    for (double l : logs)
        acc += std::exp(l - top);
    return top + std::log(acc / static_cast<double>(maxes.size()));
}

AcquisitionScore cmes_score(double mean, double sd, const std::vector<double>& maxes)
{
    if (maxes.empty())
        throw std::invalid_argument("cmes_score: no max-value samples");
    const double s = std::max(sd, std::sqrt(kVarianceFloor));
    AcquisitionScore out;
    out.gammas.reserve(maxes.size());
    double acc = 0.0;
    for (double f_star : maxes) {
        const double gamma = (f_star - mean) / s;
        out.gammas.push_back(gamma);
        acc += truncation_entropy_gain(gamma);
    }
    out.score = std::max(acc / static_cast<double>(maxes.size()), 0.0);
    return out;
}

AcquisitionScore cmes_score(const Vector& a, const cmp::AggregatePosterior& post_g, const MaxValueSamples& maxes)
{
    const auto pred = post_g.predict(PointSet(a.transpose()));
    return cmes_score(pred.mean(0), pred.sd()(0), maxes.values);
}

// --- noise-aware variant -----------------------------------------------------------------

double noisy_truncated_log_density(double z, double mean, double sd, double noise_var, double f_star)
{
    const double sg2 = sd * sd;
    const double s2 = sg2 + noise_var;
    const double s = std::sqrt(s2);
    const double gamma = (f_star - mean) / sd;
    const double rho = (z - mean) / s;
    const double u_noise = sg2 * (z - mean) / s2 + mean;
    const double s_noise = std::sqrt(std::max(sg2 - sg2 * sg2 / s2, 0.0));
    double log_gate;
    if (s_noise > 0.0)
        log_gate = log_normal_cdf((f_star - u_noise) / s_noise);
    else
        log_gate = u_noise <= f_star ? 0.0 : -std::numeric_limits<double>::infinity();
    return -log_normal_cdf(gamma) + log_gate - 0.5 * rho * rho - 0.5 * std::log(2.0 * std::numbers::pi) -
           std::log(s);
}

double noisy_truncated_entropy(double mean, double sd, double noise_var, double f_star, int quad_points)
{
    const double sg2 = sd * sd;
    const double s2 = sg2 + noise_var;
    const double s = std::sqrt(s2);
    const double gamma = (f_star - mean) / sd;

    // z = g + eps with g ~ N(mean, sd^2) truncated above at f*: moments of z.
    const double lam = numerics::inverse_mills(gamma);
    const double mz = mean - sd * lam;
    const double sz = std::sqrt(std::max(sg2 * (1.0 - gamma * lam - lam * lam), 0.0) + noise_var);
    // Edge where the gate Phi(gamma') crosses 1/2, and its width in z.
    const double z_edge = mean + (f_star - mean) * s2 / sg2;
    const double s_noise = std::sqrt(std::max(sg2 * noise_var / s2, 0.0));
    const double wz = std::max(s_noise * s2 / sg2, 1e-12 * s);

    const double lo = std::min(mean - 10.0 * s, mz - 40.0 * sz);
    double hi = std::min(mean + 10.0 * s, z_edge + 12.0 * wz);
    hi = std::max(hi, mz + 12.0 * sz);

    std::vector<double> cuts{lo, hi};
    for (double k : {-6.0, -2.0, 0.0, 2.0, 6.0})
        cuts.push_back(z_edge + k * wz);
    for (double k : {-6.0, -2.0, 2.0, 6.0})
        cuts.push_back(mz + k * sz);
    std::erase_if(cuts, [&](double c) { return !(c >= lo && c <= hi); });
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end(),
                           [&](double x, double y) { return y - x <= 1e-14 * (hi - lo); }),
               cuts.end());

    const auto base = numerics::gauss_legendre(quad_points);
    double entropy = 0.0;
    for (std::size_t p = 0; p + 1 < cuts.size(); ++p) {
        const double mid = 0.5 * (cuts[p] + cuts[p + 1]);
        const double half = 0.5 * (cuts[p + 1] - cuts[p]);
        for (int i = 0; i < quad_points; ++i) {
            const double z = mid + half * base.nodes(i);
            const double logp = noisy_truncated_log_density(z, mean, sd, noise_var, f_star);
            if (std::isfinite(logp))
                entropy -= half * base.weights(i) * std::exp(logp) * logp;
        }
    }
    return entropy;
}

AcquisitionScore cmes_noisy_score(double mean, double sd, double noise_var, const std::vector<double>& maxes,
                                  int quad_points, bool check_convergence)
{
    if (maxes.empty())
        throw std::invalid_argument("cmes_noisy_score: no max-value samples");
    if (quad_points < 64)
        throw std::invalid_argument("cmes_noisy_score: quad_points must be >= 64");
    if (!(noise_var > 0.0))
        throw std::invalid_argument("cmes_noisy_score: noise variance must be positive");
    const double s = std::max(sd, std::sqrt(kVarianceFloor));
    const double h_marginal = 0.5 * (kLog2PiE + std::log(s * s + noise_var));

    AcquisitionScore out;
    double acc = 0.0;
    double acc_fine = 0.0;
    for (double f_star : maxes) {
        const double gamma = (f_star - mean) / s;
        out.gammas.push_back(gamma);
        acc += h_marginal - noisy_truncated_entropy(mean, s, noise_var, f_star, quad_points);
        if (check_convergence)
            acc_fine += h_marginal - noisy_truncated_entropy(mean, s, noise_var, f_star, 2 * quad_points);
    }
    const double n = static_cast<double>(maxes.size());
    out.score = std::max(acc / n, 0.0);
    if (check_convergence) {
        const double fine = std::max(acc_fine / n, 0.0);
        out.quadrature_flagged = std::abs(fine - out.score) > 1e-4 * std::max(std::abs(fine), 1e-12);
    }
    return out;
}

AcquisitionScore cmes_noisy_score(const Vector& a, const cmp::AggregatePosterior& post_g,
                                  const MaxValueSamples& maxes, double noise_var, int quad_points,
                                  bool check_convergence)
{
    const auto pred = post_g.predict(PointSet(a.transpose()));
    return cmes_noisy_score(pred.mean(0), pred.sd()(0), noise_var, maxes.values, quad_points, check_convergence);
}

// --- baselines ---------------------------------------------------------------------------

double ucb_score(double mean, double sd, double beta)
{
    return mean + std::sqrt(beta) * sd;
}

double ei_score(double mean, double sd, double incumbent)
{
    if (!std::isfinite(incumbent))
        return std::numeric_limits<double>::infinity();
    const double s = std::max(sd, std::sqrt(kVarianceFloor));
    const double diff = mean - incumbent;
    const double u = diff / s;
    return std::max(diff * normal_cdf(u) + s * normal_pdf(u), 0.0);
}

std::string_view to_string(PolicyKind kind)
{
    switch (kind) {
    case PolicyKind::Cmes: return "CMES";
    case PolicyKind::CmesNoisy: return "CMES-noisy";
    case PolicyKind::MesOnG: return "MES";
    case PolicyKind::UcbOnG: return "UCB";
    case PolicyKind::EiOnG: return "EI";
    case PolicyKind::EstEquivalent: return "EST";
    case PolicyKind::Random: return "random";
    }
    return "unknown";
}

PolicyKind policy_from_string(std::string_view name)
{
    for (auto k : {PolicyKind::Cmes, PolicyKind::CmesNoisy, PolicyKind::MesOnG, PolicyKind::UcbOnG,
                   PolicyKind::EiOnG, PolicyKind::EstEquivalent, PolicyKind::Random})
        if (name == to_string(k))
            return k;
    throw std::invalid_argument("unknown policy: " + std::string(name));
}

Vector score_candidates(PolicyKind policy, const PolicyState& state)
{
    const auto n = state.mean.size();
    if (state.sd.size() != n)
        throw std::invalid_argument("score_candidates: mean/sd size mismatch");
    Vector scores = Vector::Zero(n);
    switch (policy) {
    case PolicyKind::Cmes:
    case PolicyKind::MesOnG: {
        for (Eigen::Index i = 0; i < n; ++i)
            scores(i) = cmes_log_score(state.mean(i), state.sd(i), state.maxes.values);
        const double top = n > 0 ? scores.maxCoeff() : 0.0;
        if (std::isfinite(top))
            scores = (scores.array() - top).exp().matrix();
        else
            scores.setZero();
        break;
    }
    case PolicyKind::CmesNoisy:
        if (state.noise_var.size() != n)
            throw std::invalid_argument("score_candidates: noise_var size mismatch");
        for (Eigen::Index i = 0; i < n; ++i)
            scores(i) = cmes_noisy_score(state.mean(i), state.sd(i), state.noise_var(i), state.maxes.values,
                                         state.quad_points)
                            .score;
        break;
    case PolicyKind::UcbOnG:
        for (Eigen::Index i = 0; i < n; ++i)
            scores(i) = ucb_score(state.mean(i), state.sd(i), state.beta);
        break;
    case PolicyKind::EiOnG:
        for (Eigen::Index i = 0; i < n; ++i)
            scores(i) = ei_score(state.mean(i), state.sd(i), state.incumbent);
        break;
    case PolicyKind::EstEquivalent: {
        if (state.maxes.values.empty())
            throw std::invalid_argument("score_candidates: EST needs a max-value estimate");
        double m = 0.0;
        for (double v : state.maxes.values)
            m += v;
        m /= static_cast<double>(state.maxes.values.size());
        for (Eigen::Index i = 0; i < n; ++i)
            scores(i) = -(m - state.mean(i)) / std::max(state.sd(i), std::sqrt(kVarianceFloor));
        break;
    }
    case PolicyKind::Random:
        break;
    }
    return scores;
}

std::size_t select_query(PolicyKind policy, const PolicyState& state)
{
    if (state.mean.size() == 0)
        throw std::invalid_argument("select_query: no candidates");
    if (policy == PolicyKind::Random) {
        Rng rng(state.seed);
        std::uniform_int_distribution<std::size_t> pick(0, static_cast<std::size_t>(state.mean.size()) - 1);
        return pick(rng);
    }
    return argmax_lowest(score_candidates(policy, state));
}

std::size_t recommend_x(const Vector& grid_means)
{
    return argmax_lowest(grid_means);
}

std::size_t recommend_x(const cmp::DeconditionalPosterior& post_f, const PointSet& grid)
{
    if (grid.rows() == 0)
        throw std::invalid_argument("recommend_x: empty grid");
    return argmax_lowest(post_f.predict(grid).mean);
}

} // namespace iqbo::acquisition
