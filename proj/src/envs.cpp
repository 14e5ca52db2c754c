#include "iqbo/envs.hpp"
#include "iqbo/numerics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace iqbo::envs {

namespace {

constexpr double kPi = std::numbers::pi;

Box branin_box()
{
    Box b{Vector(2), Vector(2)};
    b.lower << -5.0, 0.0;
    b.upper << 10.0, 15.0;
    return b;
}

template <typename E>
E parse_enum(std::string_view name, std::initializer_list<E> values, const char* what)
{
    for (E v : values)
        if (to_string(v) == name)
            return v;
    throw std::invalid_argument(std::string("unknown ") + what + ": " + std::string(name));
}

// Visit every node of a product of per-axis rules: fn(point, weight).
template <typename Fn>
void tensor_rule(const std::vector<numerics::QuadratureRule>& axes, Fn&& fn)
{
    const std::size_t dim = axes.size();
    std::vector<Eigen::Index> idx(dim, 0);
    Vector point(static_cast<Eigen::Index>(dim));
    for (;;) {
        double w = 1.0;
        for (std::size_t i = 0; i < dim; ++i) {
            point(static_cast<Eigen::Index>(i)) = axes[i].nodes(idx[i]);
            w *= axes[i].weights(idx[i]);
        }
        fn(point, w);
        std::size_t axis = 0;
        while (axis < dim && ++idx[axis] == axes[axis].nodes.size())
            idx[axis++] = 0;
        if (axis == dim)
            return;
    }
}

// One axis of a conditional law clamped to [lo, hi]: the mass pushed past each bound becomes
// an atom on the bound and the interior is integrated by Gauss-Legendre, so the rule never
// straddles the kink the clamp introduces.
numerics::QuadratureRule clamped_axis_rule(double center, double scale, double lo, double hi, ConditionalShape shape,
                                           int order)
{
    std::vector<double> nodes, weights;
    auto push = [&](double x, double w) {
        if (w > 0.0) {
            nodes.push_back(x);
            weights.push_back(w);
        }
    };
    if (!(scale > 0.0)) {
        push(std::clamp(center, lo, hi), 1.0);
    } else {
        const bool gaussian = shape == ConditionalShape::Gaussian;
        const double reach = gaussian ? 8.0 * scale : scale;
        const double left = gaussian ? numerics::normal_cdf((lo - center) / scale)
                                     : std::clamp((lo - (center - scale)) / (2.0 * scale), 0.0, 1.0);
        const double right = gaussian ? numerics::normal_cdf((center - hi) / scale)
                                      : std::clamp(((center + scale) - hi) / (2.0 * scale), 0.0, 1.0);
        push(lo, left);
        push(hi, right);
        const double a = std::max(lo, center - reach);
        const double b = std::min(hi, center + reach);
        if (b > a) {
            const auto gl = numerics::gauss_legendre(order, a, b);
            for (Eigen::Index i = 0; i < gl.nodes.size(); ++i) {
                const double x = gl.nodes(i);
                const double density =
                    gaussian ? numerics::normal_pdf((x - center) / scale) / scale : 0.5 / scale;
                push(x, gl.weights(i) * density);
            }
        }
    }
    numerics::QuadratureRule rule;
    rule.nodes = Eigen::Map<const Vector>(nodes.data(), static_cast<Eigen::Index>(nodes.size()));
    rule.weights = Eigen::Map<const Vector>(weights.data(), static_cast<Eigen::Index>(weights.size()));
    return rule;
}

} // namespace

std::string_view to_string(EnvKind kind)
{
    switch (kind) {
    case EnvKind::BraninLt: return "branin-lt";
    case EnvKind::BraninNlt: return "branin-nlt";
    case EnvKind::MultiresTree: return "multires-tree";
    case EnvKind::Bandit: return "bandit";
    case EnvKind::Custom1d: return "custom-1d";
    }
    return "unknown";
}

EnvKind env_kind_from_string(std::string_view name)
{
    return parse_enum(name,
                      {EnvKind::BraninLt, EnvKind::BraninNlt, EnvKind::MultiresTree, EnvKind::Bandit,
                       EnvKind::Custom1d},
                      "environment");
}

std::string_view to_string(Transform t)
{
    switch (t) {
    case Transform::Linear: return "lt";
    case Transform::NonLinear: return "nlt";
    case Transform::Identity: return "identity";
    }
    return "unknown";
}

Transform transform_from_string(std::string_view name)
{
    return parse_enum(name, {Transform::Linear, Transform::NonLinear, Transform::Identity}, "transform");
}

std::string_view to_string(ObservationMode m)
{
    return m == ObservationMode::Sample ? "sample" : "quadrature";
}

ObservationMode observation_mode_from_string(std::string_view name)
{
    return parse_enum(name, {ObservationMode::Sample, ObservationMode::Quadrature}, "observation mode");
}

std::string_view to_string(ConditionalShape s)
{
    return s == ConditionalShape::Gaussian ? "gaussian" : "uniform-cell";
}

ConditionalShape conditional_shape_from_string(std::string_view name)
{
    return parse_enum(name, {ConditionalShape::Gaussian, ConditionalShape::UniformCell}, "conditional shape");
}

std::string_view to_string(TestFunction f)
{
    switch (f) {
    case TestFunction::NegQuadratic: return "neg-quadratic";
    case TestFunction::Linear: return "linear";
    case TestFunction::Square: return "square";
    case TestFunction::Sine: return "sine";
    }
    return "unknown";
}

TestFunction test_function_from_string(std::string_view name)
{
    return parse_enum(name,
                      {TestFunction::NegQuadratic, TestFunction::Linear, TestFunction::Square, TestFunction::Sine},
                      "test function");
}

double branin(const Vector& x)
{
    if (x.size() != 2 || !branin_box().contains(x, 1e-9))
        throw std::domain_error("branin: input outside [-5, 10] x [0, 15]");
    const double b = 5.1 / (4.0 * kPi * kPi);
    const double c = 5.0 / kPi;
    const double t = 1.0 / (8.0 * kPi);
    const double u = x(1) - b * x(0) * x(0) + c * x(0) - 6.0;
    return -(u * u + 10.0 * (1.0 - t) * std::cos(x(0)) + 10.0);
}

Vector transform_lt(const Vector& a, const Vector& eps)
{
    Vector x(2);
    x << 15.0 * a(0) - 5.0 + eps(0), 15.0 * a(1) + eps(1);
    return branin_box().clamp(x);
}

Vector transform_nlt(const Vector& a, const Vector& eps)
{
    Vector x(2);
    x << 15.0 * std::cos(kPi * a(0) / 2.0) - 5.0 + eps(0), 15.0 * std::cos(kPi * a(1) / 2.0) + eps(1);
    return branin_box().clamp(x);
}

BanditSpec BanditSpec::softmax(Vector rewards, Matrix logits, Vector bias, double noise_sd)
{
    if (logits.rows() != rewards.size() || bias.size() != rewards.size())
        throw std::invalid_argument("BanditSpec::softmax: one logit row and bias per arm required");
    BanditSpec spec;
    spec.rewards = std::move(rewards);
    spec.noise_sd = noise_sd;
    spec.policy = [logits = std::move(logits), bias = std::move(bias)](const Vector& a) {
        Vector s = logits * a + bias;
        s.array() -= s.maxCoeff();
        Vector p = s.array().exp().matrix();
        return Vector(p / p.sum());
    };
    return spec;
}

// --- EnvSpec ------------------------------------------------------------------------------

EnvSpec EnvSpec::branin_lt()
{
    EnvSpec s;
    s.kind = EnvKind::BraninLt;
    s.x_domain = branin_box();
    s.a_domain = Box::unit(2);
    s.transform = Transform::Linear;
    return s;
}

EnvSpec EnvSpec::branin_nlt()
{
    EnvSpec s = branin_lt();
    s.kind = EnvKind::BraninNlt;
    s.transform = Transform::NonLinear;
    return s;
}

EnvSpec EnvSpec::multires_tree(Transform transform)
{
    EnvSpec s = branin_lt();
    s.kind = EnvKind::MultiresTree;
    s.transform = transform;
    s.mode = ObservationMode::Quadrature;
    s.shape = ConditionalShape::UniformCell;
    s.multires_queries = true;
    s.quad_order = 8;
    s.schedule = cmets::CostSchedule::log_radius(s.max_depth);
    return s;
}

EnvSpec EnvSpec::custom_1d(TestFunction fn)
{
    EnvSpec s;
    s.kind = EnvKind::Custom1d;
    s.x_domain = Box::unit(1);
    s.a_domain = Box::unit(1);
    s.transform = Transform::Identity;
    s.function = fn;
    s.tau2 = 0.01;
    s.schedule = cmets::CostSchedule::log_radius(s.max_depth);
    return s;
}

EnvSpec EnvSpec::bandit_env(BanditSpec spec, std::size_t query_dim)
{
    EnvSpec s;
    s.kind = EnvKind::Bandit;
    const auto k = static_cast<std::size_t>(spec.arms());
    s.x_domain = Box::unit(k);
    s.a_domain = Box::unit(query_dim);
    s.obs_noise_sd = spec.noise_sd;
    s.bandit = std::move(spec);
    s.transform = Transform::Identity;
    return s;
}

void EnvSpec::validate() const
{
    if (x_domain.dim() == 0 || a_domain.dim() == 0)
        throw std::invalid_argument("EnvSpec: domains must be non-empty");
    if (!(tau2 >= 0.0))
        throw std::invalid_argument("EnvSpec: tau2 must be nonnegative");
    if (!(obs_noise_sd >= 0.0))
        throw std::invalid_argument("EnvSpec: observation noise sd must be nonnegative");
    if (quad_order < 2)
        throw std::invalid_argument("EnvSpec: quadrature order must be >= 2");
    if ((kind == EnvKind::BraninLt || kind == EnvKind::BraninNlt || kind == EnvKind::MultiresTree) &&
        (x_domain.dim() != 2 || a_domain.dim() != 2))
        throw std::invalid_argument("EnvSpec: Branin environments are two-dimensional");
    if (kind == EnvKind::Custom1d && (x_domain.dim() != 1 || a_domain.dim() != 1))
        throw std::invalid_argument("EnvSpec: custom-1d environments are one-dimensional");
    if (kind == EnvKind::Bandit) {
        if (bandit.arms() < 1 || !bandit.policy)
            throw std::invalid_argument("EnvSpec: bandit needs rewards and a policy map");
    }
    if (multires_queries) {
        schedule.validate();
        if (schedule.levels() < max_depth + 1)
            throw std::invalid_argument("EnvSpec: schedule must cover every depth");
    }
}

// --- Environment --------------------------------------------------------------------------

Environment::Environment(EnvSpec spec) : spec_(std::move(spec))
{
    spec_.validate();
}

std::size_t Environment::x_dim() const
{
    return spec_.x_domain.dim();
}

std::size_t Environment::feature_dim() const
{
    return spec_.a_domain.dim() + (is_multires() ? 1 : 0);
}

double Environment::f(const Vector& x) const
{
    switch (spec_.kind) {
    case EnvKind::BraninLt:
    case EnvKind::BraninNlt:
    case EnvKind::MultiresTree:
        return branin(x);
    case EnvKind::Bandit:
        return spec_.bandit.rewards.dot(x);
    case EnvKind::Custom1d: {
        const double v = x(0);
        switch (spec_.function) {
        case TestFunction::NegQuadratic: return -(v - 0.7) * (v - 0.7);
        case TestFunction::Linear: return 3.0 * v;
        case TestFunction::Square: return v * v;
        case TestFunction::Sine: return std::sin(5.0 * v);
        }
    }
    }
    throw std::logic_error("Environment::f: unhandled environment");
}

Vector Environment::transform(const Vector& a) const
{
    switch (spec_.transform) {
    case Transform::Linear: return transform_lt(a, Vector::Zero(2));
    case Transform::NonLinear: return transform_nlt(a, Vector::Zero(2));
    case Transform::Identity: return spec_.x_domain.clamp(a);
    }
    throw std::logic_error("Environment::transform: unhandled transform");
}

ConditionalLaw Environment::law(std::optional<int> level) const
{
    const auto d = static_cast<Eigen::Index>(spec_.a_domain.dim());
    if (is_multires() && level) {
        if (*level < 0 || *level > spec_.max_depth)
            throw std::invalid_argument("Environment::law: level out of range");
        const double r = spec_.schedule.resolution.at(static_cast<std::size_t>(*level));
        return {spec_.shape, true, Vector(r * spec_.a_domain.width())};
    }
    const auto dx = static_cast<Eigen::Index>(spec_.x_domain.dim());
    const double sd = std::sqrt(spec_.tau2);
    if (spec_.shape == ConditionalShape::UniformCell)
        return {ConditionalShape::UniformCell, false, Vector::Constant(dx, std::sqrt(3.0) * sd)};
    (void)d;
    return {ConditionalShape::Gaussian, false, Vector::Constant(dx, sd)};
}

double Environment::noise_sd(std::optional<int> level) const
{
    if (is_multires() && level)
        return spec_.schedule.noise_sd.at(static_cast<std::size_t>(*level));
    return spec_.obs_noise_sd;
}

Vector Environment::features(const Vector& a, std::optional<int> level) const
{
    if (!is_multires())
        return a;
    Vector out(a.size() + 1);
    out.head(a.size()) = a;
    out(a.size()) = static_cast<double>(level.value_or(spec_.max_depth)) / spec_.max_depth;
    return out;
}

Vector Environment::draw_x(const Vector& a, const ConditionalLaw& law, Rng& rng) const
{
    if (spec_.kind == EnvKind::Bandit) {
        const Vector p = spec_.bandit.policy(a);
        std::discrete_distribution<int> pick(p.data(), p.data() + p.size());
        Vector x = Vector::Zero(p.size());
        x(pick(rng)) = 1.0;
        return x;
    }
    Vector eps(law.scale.size());
    if (law.shape == ConditionalShape::Gaussian) {
        std::normal_distribution<double> n(0.0, 1.0);
        for (Eigen::Index i = 0; i < eps.size(); ++i)
            eps(i) = law.scale(i) * n(rng);
    } else {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (Eigen::Index i = 0; i < eps.size(); ++i)
            eps(i) = law.scale(i) * u(rng);
    }
    if (law.in_query_space)
        return transform(spec_.a_domain.clamp(a + eps));
    return spec_.x_domain.clamp(transform(a) + eps);
}

double Environment::observe(const Vector& a, std::optional<int> level, Rng& rng) const
{
    const double sd = noise_sd(level);
    std::normal_distribution<double> noise(0.0, 1.0);
    double g;
    if (spec_.mode == ObservationMode::Quadrature) {
        g = true_g(a, level);
    } else {
        g = f(draw_x(a, law(level), rng));
    }
    return g + sd * noise(rng);
}

double Environment::true_g(const Vector& a, const ConditionalLaw& law, int order) const
{
    if (spec_.kind == EnvKind::Bandit)
        return spec_.bandit.rewards.dot(spec_.bandit.policy(a));
    const auto dim = static_cast<std::size_t>(law.scale.size());
    const Vector base = law.in_query_space ? a : transform(a);
    const Box& box = law.in_query_space ? spec_.a_domain : spec_.x_domain;
    std::vector<numerics::QuadratureRule> axes;
    for (std::size_t i = 0; i < dim; ++i) {
        const auto j = static_cast<Eigen::Index>(i);
        axes.push_back(clamped_axis_rule(base(j), law.scale(j), box.lower(j), box.upper(j), law.shape, order));
    }
    double acc = 0.0;
    tensor_rule(axes, [&](const Vector& point, double w) {
        acc += w * f(law.in_query_space ? transform(point) : point);
    });
    return acc;
}

double Environment::true_g(const Vector& a, std::optional<int> level) const
{
    return true_g(a, law(level), spec_.quad_order);
}

bool Environment::quadrature_flagged(const Vector& a, std::optional<int> level) const
{
    const auto l = law(level);
    const double coarse = true_g(a, l, spec_.quad_order);
    const double fine = true_g(a, l, 2 * spec_.quad_order);
    return std::abs(fine - coarse) > 1e-5;
}

cmp::MatchedDataset Environment::generate_d1(int n, std::uint64_t seed, double ridge_lambda) const
{
    if (n < 1)
        throw std::invalid_argument("generate_d1: N must be >= 1");
    Rng rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const auto da = static_cast<Eigen::Index>(spec_.a_domain.dim());
    cmp::MatchedDataset d1;
    d1.ridge_lambda = ridge_lambda;
    d1.x_points.resize(n, static_cast<Eigen::Index>(x_dim()));
    d1.a_points.resize(n, static_cast<Eigen::Index>(feature_dim()));
    std::uniform_int_distribution<int> pick_level(0, spec_.max_depth);
    for (int j = 0; j < n; ++j) {
        Vector a(da);
        std::optional<int> level;
        if (is_multires()) {
            // Centre of a uniformly chosen cell at a uniformly chosen depth.
            level = pick_level(rng);
            const double cells = std::ldexp(1.0, *level);
            for (Eigen::Index i = 0; i < da; ++i) {
                const double k = std::min(std::floor(unif(rng) * cells), cells - 1.0);
                a(i) = spec_.a_domain.lower(i) + (k + 0.5) / cells * spec_.a_domain.width()(i);
            }
        } else {
            for (Eigen::Index i = 0; i < da; ++i)
                a(i) = spec_.a_domain.lower(i) + unif(rng) * spec_.a_domain.width()(i);
        }
        d1.a_points.row(j) = features(a, level).transpose();
        d1.x_points.row(j) = draw_x(a, law(level), rng).transpose();
    }
    return d1;
}

OptimumRecord Environment::optimum() const
{
    if (spec_.kind == EnvKind::Bandit) {
        Eigen::Index best = 0;
        spec_.bandit.rewards.maxCoeff(&best);
        OptimumRecord r{Vector::Zero(spec_.bandit.rewards.size()), spec_.bandit.rewards(best)};
        r.x_star(best) = 1.0;
        return r;
    }
    const Box& box = spec_.x_domain;
    const int per_axis = 400;
    PointSet grid = regular_grid(box, per_axis);
    OptimumRecord best{grid.row(0).transpose(), f(grid.row(0).transpose())};
    for (Eigen::Index i = 1; i < grid.rows(); ++i) {
        const double v = f(grid.row(i).transpose());
        if (v > best.f_star)
            best = {grid.row(i).transpose(), v};
    }
    Vector spacing = box.width() / (per_axis - 1);
    for (int round = 0; round < 3; ++round) {
        Box local{box.clamp(best.x_star - 2.0 * spacing), box.clamp(best.x_star + 2.0 * spacing)};
        const int local_axis = 41;
        const PointSet pts = regular_grid(local, local_axis);
        for (Eigen::Index i = 0; i < pts.rows(); ++i) {
            const double v = f(pts.row(i).transpose());
            if (v > best.f_star)
                best = {pts.row(i).transpose(), v};
        }
        spacing = local.width() / (local_axis - 1);
    }
    return best;
}

PointSet Environment::x_grid(int per_axis) const
{
    if (spec_.kind == EnvKind::Bandit)
        return Matrix::Identity(spec_.bandit.arms(), spec_.bandit.arms());
    return regular_grid(spec_.x_domain, per_axis);
}

PointSet Environment::a_grid(int per_axis) const
{
    return regular_grid(spec_.a_domain, per_axis);
}

// --- regret bookkeeping ---------------------------------------------------------------------

void regret_update(RegretTrace& trace, const Environment& env, const Vector& x_t, const Vector& a_t,
                   std::optional<int> level, double z_t, double cost)
{
    trace.best_f = std::max(trace.best_f, env.f(x_t));
    trace.best_g = std::max(trace.best_g, env.true_g(a_t, level));
    RegretRecord r;
    r.iteration = static_cast<int>(trace.records.size()) + 1;
    r.cumulative_cost = (trace.records.empty() ? 0.0 : trace.records.back().cumulative_cost) + cost;
    r.a_query = a_t;
    r.z_obs = z_t;
    r.x_recommend = x_t;
    r.simple_regret = trace.f_opt - trace.best_f;
    r.instant_regret = trace.f_opt - trace.best_g;
    r.level = level.value_or(-1);
    trace.records.push_back(std::move(r));
}

double tau2_schedule(int t, int dim, double scale)
{
    if (t < 2)
        throw std::invalid_argument("tau2_schedule: t must be >= 2");
    if (!(scale > 0.0) || dim < 1)
        throw std::invalid_argument("tau2_schedule: scale and dim must be positive");
    const double tt = static_cast<double>(t);
    return scale * std::pow(tt, -0.5) * std::pow(std::log(tt), 0.5 * dim);
}

// --- bandit posterior -------------------------------------------------------------------------

BanditPosterior::BanditPosterior(Vector mu, Matrix sigma, std::function<Vector(const Vector&)> policy)
    : mu_(std::move(mu)), sigma_(std::move(sigma)), policy_(std::move(policy))
{
    if (sigma_.rows() != mu_.size() || sigma_.cols() != mu_.size())
        throw std::invalid_argument("bandit_posterior: Sigma must be K x K");
    if (!sigma_.isApprox(sigma_.transpose(), 1e-12))
        throw std::invalid_argument("bandit_posterior: Sigma must be symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma_, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, sigma_.diagonal().maxCoeff()))
        throw std::invalid_argument("bandit_posterior: Sigma must be positive semi-definite");
}

double BanditPosterior::mean(const Vector& a) const
{
    return mu_.dot(policy_(a));
}

double BanditPosterior::covariance(const Vector& a, const Vector& b) const
{
    return policy_(a).dot(sigma_ * policy_(b));
}

BanditPosterior BanditPosterior::condition(const cmp::QueryLog& log) const
{
    log.validate();
    if (log.empty())
        return *this;
    const auto t = static_cast<Eigen::Index>(log.size());
    Matrix p(t, mu_.size());
    Vector z(t);
    Matrix s = Matrix::Zero(t, t);
    for (Eigen::Index i = 0; i < t; ++i) {
        p.row(i) = policy_(log.a_queries[static_cast<std::size_t>(i)]).transpose();
        z(i) = log.z_obs[static_cast<std::size_t>(i)];
        s(i, i) = log.noise_vars[static_cast<std::size_t>(i)];
    }
    const Matrix cross = sigma_ * p.transpose(); // K x t
    s += p * cross;
    const gp::CholeskyFactor factor(s);
    Vector mu = mu_ + cross * factor.solve(Vector(z - p * mu_));
    Matrix sigma = sigma_ - cross * factor.solve(Matrix(cross.transpose()));
    sigma = 0.5 * (sigma + sigma.transpose());
    BanditPosterior out(*this);
    out.mu_ = std::move(mu);
    out.sigma_ = std::move(sigma);
    return out;
}

BanditPosterior bandit_posterior(const Vector& mu, const Matrix& sigma, std::function<Vector(const Vector&)> policy)
{
    return BanditPosterior(mu, sigma, std::move(policy));
}

} // namespace iqbo::envs
