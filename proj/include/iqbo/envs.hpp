#ifndef IQBO_ENVS_HPP
#define IQBO_ENVS_HPP

#include "iqbo/cmets_tree.hpp"
#include "iqbo/cmp.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string_view>

namespace iqbo::envs {

using Rng = std::mt19937_64;

enum class EnvKind { BraninLt, BraninNlt, MultiresTree, Bandit, Custom1d };
enum class Transform { Linear, NonLinear, Identity };
enum class ObservationMode { Sample, Quadrature };
enum class ConditionalShape { Gaussian, UniformCell };
enum class TestFunction { NegQuadratic, Linear, Square, Sine };

std::string_view to_string(EnvKind kind);
EnvKind env_kind_from_string(std::string_view name);
std::string_view to_string(Transform t);
Transform transform_from_string(std::string_view name);
std::string_view to_string(ObservationMode m);
ObservationMode observation_mode_from_string(std::string_view name);
std::string_view to_string(ConditionalShape s);
ConditionalShape conditional_shape_from_string(std::string_view name);
std::string_view to_string(TestFunction f);
TestFunction test_function_from_string(std::string_view name);

/// Negated Branin on [-5, 10] x [0, 15] (maximization framing). Throws std::domain_error
/// outside the box.
double branin(const Vector& x);

/// Linear transform (15 a0 - 5 + e0, 15 a1 + e1), clamped to the Branin box.
Vector transform_lt(const Vector& a, const Vector& eps);
/// Non-linear transform (15 cos(pi a0 / 2) - 5 + e0, 15 cos(pi a1 / 2) + e1), clamped.
Vector transform_nlt(const Vector& a, const Vector& eps);

struct BanditSpec {
    Vector rewards;
    /// Maps a query a to a probability vector over the K arms.
    std::function<Vector(const Vector&)> policy;
    double noise_sd = 0.0;

    int arms() const { return static_cast<int>(rewards.size()); }
    /// Policy p(a) = softmax(logits * a + bias).
    static BanditSpec softmax(Vector rewards, Matrix logits, Vector bias, double noise_sd);
};

/// Where the conditional noise lives and how it is shaped. Gaussian scale is a standard
/// deviation per axis; uniform scale is a half-width per axis.
struct ConditionalLaw {
    ConditionalShape shape = ConditionalShape::Gaussian;
    /// Noise is added to the query before the transform (true) or to h(a) after it (false).
    bool in_query_space = false;
    Vector scale;
};

struct EnvSpec {
    EnvKind kind = EnvKind::BraninLt;
    Box x_domain;
    Box a_domain;
    double tau2 = 0.5;
    double obs_noise_sd = 0.1;
    ObservationMode mode = ObservationMode::Sample;
    ConditionalShape shape = ConditionalShape::Gaussian;
    Transform transform = Transform::Linear;
    TestFunction function = TestFunction::NegQuadratic;
    int quad_order = 32;
    int max_depth = 6;
    /// Queries carry a tree depth: the conditional and noise follow `schedule` and the
    /// CMP sees depth / max_depth as an extra query coordinate.
    bool multires_queries = false;
    cmets::CostSchedule schedule;
    BanditSpec bandit;
    std::uint64_t seed = 0;

    static EnvSpec branin_lt();
    static EnvSpec branin_nlt();
    static EnvSpec multires_tree(Transform transform = Transform::Linear);
    static EnvSpec custom_1d(TestFunction fn = TestFunction::NegQuadratic);
    static EnvSpec bandit_env(BanditSpec spec, std::size_t query_dim);

    void validate() const;
};

struct OptimumRecord {
    Vector x_star;
    double f_star = 0.0;
};

/// A synthetic ground truth: f over the target space, the conditional p(x | a), and the
/// observation model. Immutable; randomness comes from caller-owned streams.
class Environment {
public:
    explicit Environment(EnvSpec spec);

    const EnvSpec& spec() const { return spec_; }
    std::size_t x_dim() const;
    /// Dimension of the query features fed to the CMP (multires appends the depth).
    std::size_t feature_dim() const;
    bool is_multires() const { return spec_.multires_queries; }

    double f(const Vector& x) const;
    /// Noise-free map h(a) into the target space (clamped).
    Vector transform(const Vector& a) const;
    /// Conditional law at a level (ignored except for multires and scheduled envs).
    ConditionalLaw law(std::optional<int> level) const;
    double noise_sd(std::optional<int> level) const;

    /// Query features: the query itself, plus depth / max_depth for multires.
    Vector features(const Vector& a, std::optional<int> level) const;

    /// One draw from p(x | a) under `law`, clamped to the target domain.
    Vector draw_x(const Vector& a, const ConditionalLaw& law, Rng& rng) const;

    /// z = g(a) + noise. Sample mode folds a single conditional draw into the randomness;
    /// quadrature mode evaluates g exactly.
    double observe(const Vector& a, std::optional<int> level, Rng& rng) const;

    /// Conditional expectation by tensor quadrature. Mass the clamp pushes past a bound sits on
    /// the bound; the interior uses Gauss-Legendre against the conditional density.
    double true_g(const Vector& a, std::optional<int> level) const;
    double true_g(const Vector& a, const ConditionalLaw& law, int order) const;
    /// True when doubling the quadrature order moves the value by more than 1e-5.
    bool quadrature_flagged(const Vector& a, std::optional<int> level) const;

    cmp::MatchedDataset generate_d1(int n, std::uint64_t seed, double ridge_lambda) const;

    /// Max of f over the target domain: dense grid plus local refinement.
    OptimumRecord optimum() const;

    PointSet x_grid(int per_axis) const;
    PointSet a_grid(int per_axis) const;

private:
    EnvSpec spec_;
};

struct RegretRecord {
    int iteration = 0;
    double cumulative_cost = 0.0;
    Vector a_query;
    double z_obs = 0.0;
    Vector x_recommend;
    double simple_regret = 0.0;
    double instant_regret = 0.0;
    int level = -1;
};

struct RegretTrace {
    double f_opt = 0.0;
    double best_f = -std::numeric_limits<double>::infinity();
    double best_g = -std::numeric_limits<double>::infinity();
    std::vector<RegretRecord> records;
};

/// Append r_T = f* - max_s f(x_s) and r^g_T = f* - max_s g(a_s) for this iteration.
void regret_update(RegretTrace& trace, const Environment& env, const Vector& x_t, const Vector& a_t,
                   std::optional<int> level, double z_t, double cost);

/// Conditional variance schedule tau_t^2 = scale * t^{-1/2} (log t)^{dim/2}, t >= 2.
double tau2_schedule(int t, int dim, double scale = 1.0);

/// Exact aggregate posterior for bandits with a known policy map: nu(a) = mu^T p(a),
/// q(a, a') = p(a)^T Sigma p(a').
class BanditPosterior {
public:
    BanditPosterior(Vector mu, Matrix sigma, std::function<Vector(const Vector&)> policy);

    double mean(const Vector& a) const;
    double covariance(const Vector& a, const Vector& b) const;
    const Vector& arm_mean() const { return mu_; }
    const Matrix& arm_covariance() const { return sigma_; }

    /// Posterior over the arms after z_t = p(a_t)^T f + N(0, noise_t), pushed forward to g.
    BanditPosterior condition(const cmp::QueryLog& log) const;

private:
    Vector mu_;
    Matrix sigma_;
    std::function<Vector(const Vector&)> policy_;
};

BanditPosterior bandit_posterior(const Vector& mu, const Matrix& sigma,
                                 std::function<Vector(const Vector&)> policy);

} // namespace iqbo::envs

#endif
