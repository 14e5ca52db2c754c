#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "iqbo/envs.hpp"

#include <Eigen/QR>

#include <cmath>
#include <numbers>
#include <random>

using namespace iqbo;
using namespace iqbo::envs;

namespace {

Vector v2(double a, double b)
{
    return Eigen::Vector2d(a, b);
}

Vector v1(double a)
{
    return Vector::Constant(1, a);
}

// Custom 1-D env with a wide target box so Gaussian draws never clamp.
EnvSpec wide_1d(TestFunction fn, double tau2)
{
    auto s = EnvSpec::custom_1d(fn);
    s.x_domain = Box{v1(-20.0), v1(20.0)};
    s.tau2 = tau2;
    return s;
}

struct MeanSe {
    double mean;
    double se;
};

MeanSe observe_many(const Environment& env, const Vector& a, std::optional<int> level, int n, std::uint64_t seed)
{
    Rng rng(seed);
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = env.observe(a, level, rng);
        sum += z;
        sum2 += z * z;
    }
    const double m = sum / n;
    return {m, std::sqrt(std::max(sum2 / n - m * m, 0.0) / n)};
}

} // namespace

TEST_CASE("branin values")
{
    CHECK(branin(v2(-std::numbers::pi, 12.275)) == doctest::Approx(-0.397887).epsilon(1e-5));
    CHECK(std::abs(branin(v2(std::numbers::pi, 2.275)) - branin(v2(-std::numbers::pi, 12.275))) < 1e-6);
    CHECK(std::abs(branin(v2(9.42478, 2.475)) - branin(v2(-std::numbers::pi, 12.275))) < 1e-5);
    CHECK_THROWS_AS(branin(v2(-6.0, 1.0)), std::domain_error);
    CHECK_THROWS_AS(branin(v2(0.0, 15.5)), std::domain_error);
}

TEST_CASE("oracle optimum beats a dense grid")
{
    const Environment env(EnvSpec::branin_lt());
    const auto opt = env.optimum();
    CHECK(opt.f_star == doctest::Approx(-0.397887).epsilon(1e-5));
    const PointSet grid = regular_grid(env.spec().x_domain, 200);
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < grid.rows(); ++i)
        best = std::max(best, branin(grid.row(i).transpose()));
    CHECK(opt.f_star >= best);
    CHECK(opt.f_star - best <= 1e-3);
}

TEST_CASE("transforms")
{
    const Vector zero = Vector::Zero(2);
    CHECK(transform_lt(v2(0, 0), zero) == v2(-5, 0));
    CHECK(transform_lt(v2(1, 1), zero) == v2(10, 15));
    CHECK(transform_nlt(v2(0, 0), zero) == v2(10, 15));
    // Clamping keeps results in the Branin box.
    const Vector far = transform_lt(v2(1, 0), v2(5, -5));
    CHECK(far == v2(10, 0));
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 3.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const Vector a = v2(u(rng), u(rng));
        const Vector e = v2(n(rng), n(rng));
        for (const Vector& x : {transform_lt(a, e), transform_nlt(a, e)}) {
            CHECK(x(0) >= -5.0);
            CHECK(x(0) <= 10.0);
            CHECK(x(1) >= 0.0);
            CHECK(x(1) <= 15.0);
        }
    }
}

TEST_CASE("enum names round-trip")
{
    for (auto k : {EnvKind::BraninLt, EnvKind::BraninNlt, EnvKind::MultiresTree, EnvKind::Bandit, EnvKind::Custom1d})
        CHECK(env_kind_from_string(to_string(k)) == k);
    for (auto t : {Transform::Linear, Transform::NonLinear, Transform::Identity})
        CHECK(transform_from_string(to_string(t)) == t);
    for (auto f : {TestFunction::NegQuadratic, TestFunction::Linear, TestFunction::Square, TestFunction::Sine})
        CHECK(test_function_from_string(to_string(f)) == f);
    CHECK_THROWS(env_kind_from_string("hartmann"));
}

TEST_CASE("degenerate conditional observes f at the transform")
{
    auto s = EnvSpec::branin_lt();
    s.tau2 = 0.0;
    s.obs_noise_sd = 0.0;
    const Environment env(s);
    Rng rng(2);
    const Vector a = v2(0.3, 0.8);
    CHECK(env.observe(a, std::nullopt, rng) == branin(transform_lt(a, Vector::Zero(2))));
}

TEST_CASE("bandit observation is the policy-weighted reward")
{
    BanditSpec b;
    b.rewards = v2(1.0, 0.0);
    b.policy = [](const Vector&) { return v2(1.0, 0.0); };
    b.noise_sd = 0.0;
    const Environment env(EnvSpec::bandit_env(b, 1));
    Rng rng(3);
    CHECK(env.observe(v1(0.4), std::nullopt, rng) == 1.0);
    CHECK(env.true_g(v1(0.4), std::nullopt) == 1.0);
}

TEST_CASE("softmax bandit policies lie in the simplex")
{
    Matrix logits(3, 2);
    logits << 1.0, -2.0, 0.5, 0.5, -3.0, 4.0;
    const auto b = BanditSpec::softmax(Eigen::Vector3d(1.0, 0.2, -0.5), logits, Eigen::Vector3d(0.1, 0.0, -0.1), 0.1);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        const Vector p = b.policy(v2(u(rng), u(rng)));
        CHECK(std::abs(p.sum() - 1.0) < 1e-12);
        CHECK(p.minCoeff() >= 0.0);
    }
}

TEST_CASE("linear f has conditional mean at the transform")
{
    const Environment env(wide_1d(TestFunction::Linear, 0.3));
    const Vector a = v1(0.4);
    const auto est = observe_many(env, a, std::nullopt, 100000, 5);
    CHECK(std::abs(est.mean - 3.0 * 0.4) < 3.0 * est.se);
}

TEST_CASE("true_g identities")
{
    const Vector a = v1(0.35);
    CHECK(std::abs(Environment(wide_1d(TestFunction::Linear, 0.2)).true_g(a, std::nullopt) - 3.0 * 0.35) < 1e-10);
    const double tau2 = 0.2;
    const Environment sq(wide_1d(TestFunction::Square, tau2));
    CHECK(std::abs(sq.true_g(a, std::nullopt) - (0.35 * 0.35 + tau2)) < 1e-8);
    const auto mc = observe_many(sq, a, std::nullopt, 100000, 6);
    CHECK(std::abs(mc.mean - (0.35 * 0.35 + tau2)) < 4.0 * mc.se);

    // Constant f: a bandit with equal rewards.
    BanditSpec b;
    b.rewards = v2(2.5, 2.5);
    b.policy = [](const Vector& q) { return v2(q(0), 1.0 - q(0)); };
    CHECK(Environment(EnvSpec::bandit_env(b, 1)).true_g(v1(0.3), std::nullopt) == doctest::Approx(2.5));
}

TEST_CASE("observations are unbiased for g in every environment")
{
    SUBCASE("branin-lt")
    {
        const Environment env(EnvSpec::branin_lt());
        const Vector a = v2(0.2, 0.6);
        const auto est = observe_many(env, a, std::nullopt, 100000, 7);
        CHECK(std::abs(est.mean - env.true_g(a, std::nullopt)) < 4.0 * est.se);
        CHECK_FALSE(env.quadrature_flagged(a, std::nullopt));
    }
    SUBCASE("branin-nlt")
    {
        const Environment env(EnvSpec::branin_nlt());
        const Vector a = v2(0.9, 0.1);
        const auto est = observe_many(env, a, std::nullopt, 100000, 8);
        CHECK(std::abs(est.mean - env.true_g(a, std::nullopt)) < 4.0 * est.se);
    }
    SUBCASE("multires-tree at two depths")
    {
        const Environment env(EnvSpec::multires_tree());
        for (int level : {0, 3}) {
            const Vector a = v2(0.5, 0.5);
            const auto est = observe_many(env, a, level, 100000, 9 + level);
            CHECK(std::abs(est.mean - env.true_g(a, level)) < 4.0 * est.se);
        }
    }
    SUBCASE("multires-tree in sample mode")
    {
        auto s = EnvSpec::multires_tree();
        s.mode = ObservationMode::Sample;
        const Environment env(s);
        const Vector a = v2(0.375, 0.625);
        const auto est = observe_many(env, a, 2, 100000, 12);
        CHECK(std::abs(est.mean - env.true_g(a, 2)) < 4.0 * est.se);
    }
    SUBCASE("bandit")
    {
        Matrix logits(3, 1);
        logits << 2.0, 0.0, -2.0;
        auto b = BanditSpec::softmax(Eigen::Vector3d(1.0, 0.0, 0.5), logits, Vector::Zero(3), 0.2);
        const Environment env(EnvSpec::bandit_env(b, 1));
        const auto est = observe_many(env, v1(0.7), std::nullopt, 100000, 13);
        CHECK(std::abs(est.mean - env.true_g(v1(0.7), std::nullopt)) < 4.0 * est.se);
    }
    SUBCASE("custom-1d")
    {
        const Environment env(EnvSpec::custom_1d(TestFunction::Sine));
        const auto est = observe_many(env, v1(0.05), std::nullopt, 100000, 14);
        CHECK(std::abs(est.mean - env.true_g(v1(0.05), std::nullopt)) < 4.0 * est.se);
    }
}

TEST_CASE("multires schedule: deeper levels are less noisy and narrower")
{
    const Environment env(EnvSpec::multires_tree());
    for (int l = 0; l < env.spec().max_depth; ++l) {
        CHECK(env.noise_sd(l + 1) <= env.noise_sd(l));
        CHECK((env.law(l + 1).scale.array() <= env.law(l).scale.array()).all());
    }
    CHECK(env.feature_dim() == 3);
    const Vector f = env.features(v2(0.25, 0.75), 3);
    CHECK(f(2) == doctest::Approx(3.0 / env.spec().max_depth));
}

TEST_CASE("generate_d1")
{
    SUBCASE("degenerate conditional puts x at the transform")
    {
        auto s = EnvSpec::branin_lt();
        s.tau2 = 0.0;
        const Environment env(s);
        const auto d1 = env.generate_d1(50, 3, 1e-3);
        for (Eigen::Index j = 0; j < 50; ++j)
            CHECK(d1.x_points.row(j).transpose() == transform_lt(d1.a_points.row(j).transpose(), Vector::Zero(2)));
    }
    SUBCASE("singleton dataset fits")
    {
        const Environment env(EnvSpec::branin_lt());
        const auto d1 = env.generate_d1(1, 3, 1e-3);
        CHECK(d1.x_points.rows() == 1);
        const auto k = gp::KernelSpec::squared_exponential(2, 3.0, 1.0);
        CHECK_NOTHROW(cmp::fit_cmo(d1, k, gp::KernelSpec::squared_exponential(2, 0.2, 1.0)));
    }
    SUBCASE("reproducible per seed")
    {
        const Environment env(EnvSpec::branin_nlt());
        CHECK(env.generate_d1(20, 11, 1e-3).x_points == env.generate_d1(20, 11, 1e-3).x_points);
        CHECK(env.generate_d1(20, 11, 1e-3).x_points != env.generate_d1(20, 12, 1e-3).x_points);
        CHECK_THROWS(env.generate_d1(0, 1, 1e-3));
    }
    SUBCASE("least squares recovers the linear transform")
    {
        const Environment env(EnvSpec::branin_lt());
        const auto d1 = env.generate_d1(10000, 4, 1e-3);
        Matrix design(10000, 2);
        for (int axis = 0; axis < 2; ++axis) {
            design.col(0) = d1.a_points.col(axis);
            design.col(1).setOnes();
            const Vector coef = design.colPivHouseholderQr().solve(Vector(d1.x_points.col(axis)));
            CHECK(std::abs(coef(0) - 15.0) < 0.3);
            CHECK(std::abs(coef(1) - (axis == 0 ? -5.0 : 0.0)) < 0.3);
        }
    }
}

TEST_CASE("regret bookkeeping")
{
    const Environment env(EnvSpec::branin_lt());
    const auto opt = env.optimum();
    RegretTrace trace;
    trace.f_opt = opt.f_star;
    const Vector x1 = v2(0.0, 0.0);
    regret_update(trace, env, x1, v2(0.5, 0.5), std::nullopt, 0.0, 1.0);
    CHECK(trace.records[0].simple_regret == opt.f_star - branin(x1));
    CHECK(trace.records[0].iteration == 1);
    CHECK(trace.records[0].level == -1);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 30; ++t) {
        const Vector a = v2(u(rng), u(rng));
        regret_update(trace, env, transform_lt(a, Vector::Zero(2)), a, std::nullopt, 0.0, 1.0);
    }
    regret_update(trace, env, opt.x_star, v2(0.5, 0.5), std::nullopt, 0.0, 1.0);
    regret_update(trace, env, x1, v2(0.1, 0.1), std::nullopt, 0.0, 1.0);
    for (std::size_t i = 1; i < trace.records.size(); ++i) {
        CHECK(trace.records[i].simple_regret <= trace.records[i - 1].simple_regret);
        CHECK(trace.records[i].instant_regret <= trace.records[i - 1].instant_regret);
        CHECK(trace.records[i].cumulative_cost == static_cast<double>(i + 1));
    }
    for (const auto& r : trace.records) {
        CHECK(r.simple_regret >= -1e-9);
        CHECK(r.instant_regret >= -1e-9);
    }
    CHECK(trace.records.back().simple_regret == 0.0);
}

TEST_CASE("conditional variance schedule")
{
    CHECK(tau2_schedule(2, 2, 1.0) == doctest::Approx(std::log(2.0) / std::sqrt(2.0)));
    CHECK(tau2_schedule(100, 1, 2.0) == doctest::Approx(2.0 * 0.1 * std::sqrt(std::log(100.0))));
    CHECK_THROWS(tau2_schedule(1, 1, 1.0));
}

TEST_CASE("bandit posterior")
{
    auto point_mass = [](int i) {
        return [i](const Vector&) {
            Vector p = Vector::Zero(3);
            p(i) = 1.0;
            return p;
        };
    };
    Matrix sigma(3, 3);
    sigma << 2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 1.5;
    const Vector mu = Eigen::Vector3d(0.5, -1.0, 2.0);

    SUBCASE("point masses read off the arm moments")
    {
        for (int i = 0; i < 3; ++i) {
            const auto post = bandit_posterior(mu, sigma, point_mass(i));
            CHECK(post.mean(v1(0.0)) == mu(i));
            CHECK(post.covariance(v1(0.0), v1(0.0)) == sigma(i, i));
        }
    }
    SUBCASE("identity covariance gives dot products of policies")
    {
        auto policy = [](const Vector& a) { return Vector(Eigen::Vector3d(a(0), 1.0 - a(0), 0.0)); };
        const auto post = bandit_posterior(mu, Matrix::Identity(3, 3), policy);
        CHECK(post.covariance(v1(1.0), v1(0.0)) == 0.0);
        CHECK(post.covariance(v1(0.3), v1(0.6)) == doctest::Approx(0.3 * 0.6 + 0.7 * 0.4).epsilon(1e-12));
    }
    SUBCASE("random instance matches the quadratic form")
    {
        Matrix logits(3, 2);
        logits << 1.0, 0.0, 0.0, 1.0, -1.0, -1.0;
        const auto b = BanditSpec::softmax(mu, logits, Vector::Zero(3), 0.1);
        const auto post = bandit_posterior(mu, sigma, b.policy);
        const Vector a = v2(0.2, 0.9), c = v2(0.7, 0.4);
        CHECK(std::abs(post.mean(a) - mu.dot(b.policy(a))) < 1e-12);
        CHECK(std::abs(post.covariance(a, c) - b.policy(a).dot(sigma * b.policy(c))) < 1e-12);
    }
    SUBCASE("conditioning agrees with regression on the q Gram matrix")
    {
        Matrix logits(3, 1);
        logits << 3.0, 0.0, -3.0;
        const auto b = BanditSpec::softmax(mu, logits, Vector::Zero(3), 0.1);
        const auto prior = bandit_posterior(mu, sigma, b.policy);
        cmp::QueryLog log;
        const std::vector<double> qs{0.1, 0.5, 0.9, 0.3};
        for (std::size_t i = 0; i < qs.size(); ++i)
            log.append(v1(qs[i]), 0.2 * static_cast<double>(i) - 0.3, 0.05);
        const auto post = prior.condition(log);

        const auto n = static_cast<Eigen::Index>(qs.size());
        Matrix qaa(n, n);
        Vector resid(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            resid(i) = log.z_obs[i] - prior.mean(v1(qs[i]));
            for (Eigen::Index j = 0; j < n; ++j)
                qaa(i, j) = prior.covariance(v1(qs[i]), v1(qs[j]));
            qaa(i, i) += 0.05;
        }
        const Eigen::LDLT<Matrix> ldlt(qaa);
        for (double t : {0.0, 0.25, 0.6, 1.0}) {
            Vector kt(n);
            for (Eigen::Index i = 0; i < n; ++i)
                kt(i) = prior.covariance(v1(t), v1(qs[i]));
            const double m = prior.mean(v1(t)) + kt.dot(ldlt.solve(resid));
            const double v = prior.covariance(v1(t), v1(t)) - kt.dot(ldlt.solve(kt));
            CHECK(std::abs(post.mean(v1(t)) - m) < 1e-10);
            CHECK(std::abs(post.covariance(v1(t), v1(t)) - v) < 1e-10);
        }
    }
    SUBCASE("non-PSD covariance is rejected")
    {
        Matrix bad = Matrix::Identity(3, 3);
        bad(2, 2) = -1.0;
        CHECK_THROWS(bandit_posterior(mu, bad, point_mass(0)));
        Matrix asym = Matrix::Identity(3, 3);
        asym(0, 1) = 0.5;
        CHECK_THROWS(bandit_posterior(mu, asym, point_mass(0)));
    }
}

TEST_CASE("spec validation")
{
    auto s = EnvSpec::branin_lt();
    s.tau2 = -1.0;
    CHECK_THROWS(Environment{s});
    auto c = EnvSpec::custom_1d();
    c.x_domain = Box::unit(2);
    CHECK_THROWS(Environment{c});
}
