#include "iqbo/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <set>
#include <thread>

namespace iqbo::runner {

namespace {

using acquisition::PolicyKind;

// Stream purposes for SeedContext::stream.
constexpr std::uint64_t kD1Stream = 1;
constexpr std::uint64_t kObserveStream = 2;
constexpr std::uint64_t kPolicyStream = 3;

bool is_branin(envs::EnvKind k)
{
    return k == envs::EnvKind::BraninLt || k == envs::EnvKind::BraninNlt || k == envs::EnvKind::MultiresTree;
}

json vector_json(const Vector& v)
{
    return std::vector<double>(v.data(), v.data() + v.size());
}

Vector json_vector(const json& j)
{
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json kernel_json(const gp::KernelSpec& k)
{
    return {{"lengthscales", vector_json(k.lengthscales)}, {"variance", k.variance}};
}

gp::KernelSpec json_kernel(const json& j, const gp::KernelSpec& fallback)
{
    gp::KernelSpec k = fallback;
    for (const auto& [key, value] : j.items()) {
        if (key == "lengthscales")
            k.lengthscales = json_vector(value);
        else if (key == "variance")
            k.variance = value.get<double>();
        else
            throw std::invalid_argument("kernel: unknown key '" + key + "'");
    }
    return k;
}

json box_json(const Box& b)
{
    return {{"lower", vector_json(b.lower)}, {"upper", vector_json(b.upper)}};
}

Box json_box(const json& j)
{
    return {json_vector(j.at("lower")), json_vector(j.at("upper"))};
}

envs::BanditSpec json_bandit(const json& j)
{
    const Vector rewards = json_vector(j.at("rewards"));
    const auto rows = j.at("logits").get<std::vector<std::vector<double>>>();
    if (rows.empty())
        throw std::invalid_argument("bandit: logits must be non-empty");
    Matrix logits(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.front().size())
            throw std::invalid_argument("bandit: ragged logits");
        for (std::size_t k = 0; k < rows[i].size(); ++k)
            logits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
    const Vector bias = j.contains("bias") ? json_vector(j.at("bias")) : Vector::Zero(rewards.size());
    return envs::BanditSpec::softmax(rewards, logits, bias, j.value("noise_sd", 0.1));
}

envs::EnvSpec base_env(envs::EnvKind kind, const json& j)
{
    switch (kind) {
    case envs::EnvKind::BraninLt: return envs::EnvSpec::branin_lt();
    case envs::EnvKind::BraninNlt: return envs::EnvSpec::branin_nlt();
    case envs::EnvKind::MultiresTree:
        return envs::EnvSpec::multires_tree(
            envs::transform_from_string(j.value("transform", std::string("lt"))));
    case envs::EnvKind::Custom1d:
        return envs::EnvSpec::custom_1d(
            envs::test_function_from_string(j.value("function", std::string("neg-quadratic"))));
    case envs::EnvKind::Bandit: {
        if (!j.contains("bandit"))
            throw std::invalid_argument("env: bandit kind needs a 'bandit' block");
        const auto& b = j.at("bandit");
        const auto query_dim = static_cast<std::size_t>(b.at("logits").at(0).size());
        return envs::EnvSpec::bandit_env(json_bandit(b), query_dim);
    }
    }
    throw std::invalid_argument("env: unhandled kind");
}

envs::EnvSpec json_env(const json& j)
{
    const auto kind = envs::env_kind_from_string(j.value("kind", std::string("branin-lt")));
    envs::EnvSpec env = base_env(kind, j);
    for (const auto& [key, value] : j.items()) {
        if (key == "kind" || key == "bandit")
            continue;
        if (key == "tau2")
            env.tau2 = value.get<double>();
        else if (key == "obs_noise_sd")
            env.obs_noise_sd = value.get<double>();
        else if (key == "mode")
            env.mode = envs::observation_mode_from_string(value.get<std::string>());
        else if (key == "shape")
            env.shape = envs::conditional_shape_from_string(value.get<std::string>());
        else if (key == "transform")
            env.transform = envs::transform_from_string(value.get<std::string>());
        else if (key == "function")
            env.function = envs::test_function_from_string(value.get<std::string>());
        else if (key == "quad_order")
            env.quad_order = value.get<int>();
        else if (key == "seed")
            env.seed = value.get<std::uint64_t>();
        else if (key == "x_domain")
            env.x_domain = json_box(value);
        else if (key == "a_domain")
            env.a_domain = json_box(value);
        else
            throw std::invalid_argument("env: unknown key '" + key + "'");
    }
    return env;
}

json env_json(const envs::EnvSpec& env, const json& bandit)
{
    json j{{"kind", envs::to_string(env.kind)},
           {"tau2", env.tau2},
           {"obs_noise_sd", env.obs_noise_sd},
           {"mode", envs::to_string(env.mode)},
           {"shape", envs::to_string(env.shape)},
           {"transform", envs::to_string(env.transform)},
           {"function", envs::to_string(env.function)},
           {"quad_order", env.quad_order},
           {"seed", env.seed},
           {"x_domain", box_json(env.x_domain)},
           {"a_domain", box_json(env.a_domain)}};
    if (!bandit.is_null())
        j["bandit"] = bandit;
    return j;
}

std::string_view method_name(acquisition::MaxValueMethod m)
{
    return m == acquisition::MaxValueMethod::Gumbel ? "gumbel" : "thompson-grid";
}

acquisition::MaxValueMethod method_from_name(std::string_view s)
{
    if (s == "gumbel")
        return acquisition::MaxValueMethod::Gumbel;
    if (s == "thompson-grid")
        return acquisition::MaxValueMethod::ThompsonGrid;
    throw std::invalid_argument("unknown max_value_method: " + std::string(s));
}

// Environment as the runs see it: in budget mode queries carry a tree depth.
envs::EnvSpec effective_env(envs::EnvSpec env, RunMode mode, const TreeConfig& tree)
{
    env.max_depth = tree.max_depth;
    env.schedule = cmets::CostSchedule::log_radius(tree.max_depth, tree.cost_scale, tree.noise_scale);
    if (mode == RunMode::Budget)
        env.multires_queries = true;
    return env;
}

gp::KernelSpec iso(std::size_t dim, double lengthscale, double variance)
{
    return gp::KernelSpec::squared_exponential(dim, lengthscale, variance);
}

// Query-space kernel; a trailing depth coordinate gets its own lengthscale.
gp::KernelSpec query_kernel(const envs::EnvSpec& env, double lengthscale, double depth_lengthscale,
                            double variance)
{
    const auto d = static_cast<Eigen::Index>(env.a_domain.dim());
    Vector ls = env.a_domain.width() * lengthscale;
    if (env.multires_queries) {
        ls.conservativeResize(d + 1);
        ls(d) = depth_lengthscale;
    }
    return gp::KernelSpec::squared_exponential(ls, variance);
}

std::optional<int> fixed_level(const envs::Environment& env)
{
    if (env.is_multires())
        return env.spec().max_depth;
    return std::nullopt;
}

double mean_of(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v)
        s += x;
    return s / static_cast<double>(v.size());
}

double standard_error(const std::vector<double>& v, double mean)
{
    if (v.size() < 2)
        return 0.0;
    double ss = 0.0;
    for (double x : v)
        ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

} // namespace

std::string_view to_string(RunMode m)
{
    return m == RunMode::Fixed ? "fixed" : "budget";
}

// --- config ---------------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::defaults(envs::EnvSpec env, std::optional<RunMode> mode,
                                            std::optional<TreeConfig> tree)
{
    ExperimentConfig c;
    c.mode = mode.value_or(env.kind == envs::EnvKind::MultiresTree ? RunMode::Budget : RunMode::Fixed);
    c.tree = tree.value_or(TreeConfig{});
    if (!tree)
        c.tree.branching = 1 << env.a_domain.dim();
    c.env = effective_env(std::move(env), c.mode, c.tree);
    const auto& e = c.env;
    const auto dx = e.x_domain.dim();

    if (is_branin(e.kind)) {
        c.prior_mean = -55.0;
        c.kernel_x = gp::KernelSpec::squared_exponential(e.x_domain.width() * 0.2, 2500.0);
        c.kernel_a = query_kernel(e, 0.2, 0.5, 1.0);
        c.kernel_g = query_kernel(e, 0.2, 0.5, 2500.0);
        c.model_noise_var = e.mode == envs::ObservationMode::Sample ? 100.0 : 1.0;
    } else if (e.kind == envs::EnvKind::Custom1d) {
        c.prior_mean = 0.0;
        c.kernel_x = iso(dx, 0.2, 1.0);
        c.kernel_a = query_kernel(e, 0.2, 0.5, 1.0);
        c.kernel_g = query_kernel(e, 0.2, 0.5, 1.0);
        c.model_noise_var = std::max(e.obs_noise_sd * e.obs_noise_sd, 1e-4);
    } else {
        c.prior_mean = 0.0;
        c.kernel_x = iso(dx, 1.0, 1.0);
        c.kernel_a = query_kernel(e, 0.5, 0.5, 1.0);
        c.kernel_g = query_kernel(e, 0.5, 0.5, 1.0);
        c.model_noise_var = std::max(e.obs_noise_sd * e.obs_noise_sd, 1e-4);
    }
    if (c.mode == RunMode::Budget) {
        c.policies = {std::string(kCmetsName), "CMES"};
        c.budget = 20.0;
    }
    return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& j)
{
    if (!j.is_object())
        throw std::invalid_argument("config: top level must be an object");
    const envs::EnvSpec env = json_env(j.value("env", json::object()));

    std::optional<RunMode> mode;
    if (j.contains("mode")) {
        const auto m = j.at("mode").get<std::string>();
        if (m == "fixed")
            mode = RunMode::Fixed;
        else if (m == "budget")
            mode = RunMode::Budget;
        else
            throw std::invalid_argument("config: mode must be 'fixed' or 'budget'");
    }
    if (j.contains("iterations") && j.contains("budget"))
        throw std::invalid_argument("config: set exactly one of 'iterations' and 'budget'");
    if (!mode && j.contains("budget"))
        mode = RunMode::Budget;
    if (!mode && j.contains("iterations"))
        mode = RunMode::Fixed;
    if (mode == RunMode::Fixed && j.contains("budget"))
        throw std::invalid_argument("config: 'budget' given in fixed mode");
    if (mode == RunMode::Budget && j.contains("iterations"))
        throw std::invalid_argument("config: 'iterations' given in budget mode");

    std::optional<TreeConfig> tree;
    if (j.contains("tree")) {
        TreeConfig t;
        t.branching = 1 << env.a_domain.dim();
        for (const auto& [key, value] : j.at("tree").items()) {
            if (key == "max_depth")
                t.max_depth = value.get<int>();
            else if (key == "branching")
                t.branching = value.get<int>();
            else if (key == "cost_scale")
                t.cost_scale = value.get<double>();
            else if (key == "noise_scale")
                t.noise_scale = value.get<double>();
            else
                throw std::invalid_argument("tree: unknown key '" + key + "'");
        }
        tree = t;
    }

    ExperimentConfig c = defaults(env, mode, tree);
    if (env.kind == envs::EnvKind::Bandit)
        c.bandit_json = j.at("env").at("bandit");

    for (const auto& [key, value] : j.items()) {
        if (key == "env" || key == "mode" || key == "tree")
            continue;
        if (key == "experiment_id")
            c.experiment_id = value.get<std::string>();
        else if (key == "iterations")
            c.iterations = value.get<int>();
        else if (key == "budget")
            c.budget = value.get<double>();
        else if (key == "policies")
            c.policies = value.get<std::vector<std::string>>();
        else if (key == "seeds")
            c.seeds = value.get<std::vector<std::uint64_t>>();
        else if (key == "grid") {
            for (const auto& [gk, gv] : value.items()) {
                if (gk == "x_per_axis")
                    c.grid.x_per_axis = gv.get<int>();
                else if (gk == "a_per_axis")
                    c.grid.a_per_axis = gv.get<int>();
                else if (gk == "max_value_per_axis")
                    c.grid.max_value_per_axis = gv.get<int>();
                else
                    throw std::invalid_argument("grid: unknown key '" + gk + "'");
            }
        } else if (key == "kernel_x")
            c.kernel_x = json_kernel(value, c.kernel_x);
        else if (key == "kernel_a")
            c.kernel_a = json_kernel(value, c.kernel_a);
        else if (key == "kernel_g")
            c.kernel_g = json_kernel(value, c.kernel_g);
        else if (key == "prior_mean")
            c.prior_mean = value.get<double>();
        else if (key == "model_noise_var")
            c.model_noise_var = value.get<double>();
        else if (key == "ridge_lambda")
            c.ridge_lambda = value.get<double>();
        else if (key == "d1_size")
            c.d1_size = value.get<int>();
        else if (key == "max_value_samples")
            c.max_value_samples = value.get<int>();
        else if (key == "max_value_method")
            c.max_value_method = method_from_name(value.get<std::string>());
        else if (key == "ucb_delta")
            c.ucb_delta = value.get<double>();
        else if (key == "cmes_noisy_quad_points")
            c.cmes_noisy_quad_points = value.get<int>();
        else if (key == "output_dir")
            c.output_dir = value.get<std::string>();
        else
            throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

json ExperimentConfig::to_json() const
{
    json j{{"experiment_id", experiment_id},
           {"env", env_json(env, bandit_json)},
           {"mode", to_string(mode)},
           {"policies", policies},
           {"seeds", seeds},
           {"grid",
            {{"x_per_axis", grid.x_per_axis},
             {"a_per_axis", grid.a_per_axis},
             {"max_value_per_axis", grid.max_value_per_axis}}},
           {"kernel_x", kernel_json(kernel_x)},
           {"kernel_a", kernel_json(kernel_a)},
           {"kernel_g", kernel_json(kernel_g)},
           {"prior_mean", prior_mean},
           {"model_noise_var", model_noise_var},
           {"ridge_lambda", ridge_lambda},
           {"d1_size", d1_size},
           {"max_value_samples", max_value_samples},
           {"max_value_method", method_name(max_value_method)},
           {"ucb_delta", ucb_delta},
           {"cmes_noisy_quad_points", cmes_noisy_quad_points},
           {"tree",
            {{"max_depth", tree.max_depth},
             {"branching", tree.branching},
             {"cost_scale", tree.cost_scale},
             {"noise_scale", tree.noise_scale}}},
           {"output_dir", output_dir}};
    if (mode == RunMode::Fixed)
        j["iterations"] = iterations;
    else
        j["budget"] = budget;
    return j;
}

void ExperimentConfig::validate() const
{
    auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
    env.validate();
    if (mode == RunMode::Fixed && iterations < 0)
        fail("iterations must be >= 0");
    if (mode == RunMode::Budget && !(budget >= 0.0))
        fail("budget must be >= 0");
    if (policies.empty())
        fail("policies must be non-empty");
    for (const auto& p : policies) {
        if (p == kCmetsName) {
            if (mode != RunMode::Budget)
                fail("CMETS needs budget mode");
            continue;
        }
        acquisition::policy_from_string(p);
    }
    if (seeds.empty())
        fail("seeds must be non-empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        fail("seeds must be distinct");
    if (grid.x_per_axis < 1 || grid.a_per_axis < 1 || grid.max_value_per_axis < 1)
        fail("grid densities must be >= 1");
    const envs::Environment probe(env);
    kernel_x.validate();
    kernel_a.validate();
    kernel_g.validate();
    if (kernel_x.dim() != probe.x_dim())
        fail("kernel_x dimension must match the target space");
    if (kernel_a.dim() != probe.feature_dim() || kernel_g.dim() != probe.feature_dim())
        fail("kernel_a and kernel_g dimensions must match the query features");
    if (!(model_noise_var > 0.0))
        fail("model_noise_var must be positive");
    if (!(ridge_lambda > 0.0))
        fail("ridge_lambda must be positive");
    if (d1_size < 1)
        fail("d1_size must be >= 1");
    if (max_value_samples < 1)
        fail("max_value_samples must be >= 1");
    if (!(ucb_delta > 0.0 && ucb_delta < 1.0))
        fail("ucb_delta must lie in (0, 1)");
    if (cmes_noisy_quad_points < 64)
        fail("cmes_noisy_quad_points must be >= 64");
    if (tree.max_depth < 1)
        fail("tree.max_depth must be >= 1");
    if (env.a_domain.dim() >= 31 || tree.branching != (1 << env.a_domain.dim()))
        fail("tree.branching must be 2^d for the query dimension d");
}

ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open config " + path.string());
    return ExperimentConfig::from_json(json::parse(in));
}

bool RunArtifact::all_ok() const
{
    return std::all_of(runs.begin(), runs.end(), [](const SeedResult& r) { return r.ok(); });
}

// --- per-seed context -----------------------------------------------------------------------

SeedContext::SeedContext(const ExperimentConfig& config, const envs::Environment& env,
                         const envs::OptimumRecord& optimum, std::uint64_t seed)
    : config_(config), env_(env), optimum_(optimum), seed_(seed)
{
    const auto d1_rng_seed = stream(kD1Stream)();
    const cmp::MatchedDataset d1 = env_.generate_d1(config_.d1_size, d1_rng_seed, config_.ridge_lambda);
    cache_ = cmp::fit_cmo(d1, config_.kernel_x, config_.kernel_a);

    x_grid_ = env_.x_grid(config_.grid.x_per_axis);
    x_grid_cross_ = cache_->x_cross(x_grid_);
    max_grid_ = env_.x_grid(config_.grid.max_value_per_axis);
    max_grid_cross_ = cache_->x_cross(max_grid_);

    const auto level = fixed_level(env_);
    auto featurize = [&](const PointSet& raw) {
        PointSet out(raw.rows(), static_cast<Eigen::Index>(env_.feature_dim()));
        for (Eigen::Index i = 0; i < raw.rows(); ++i)
            out.row(i) = env_.features(raw.row(i).transpose(), level).transpose();
        return out;
    };
    a_max_grid_ = featurize(env_.a_grid(config_.grid.max_value_per_axis));
    if (config_.mode == RunMode::Fixed) {
        a_grid_ = env_.a_grid(config_.grid.a_per_axis);
        a_features_ = cache_->features(featurize(a_grid_));
    }
}

acquisition::Rng SeedContext::stream(std::uint64_t purpose) const
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(env_.spec().seed), static_cast<std::uint32_t>(purpose)};
    return acquisition::Rng(seq);
}

// --- the loops ----------------------------------------------------------------------------------

namespace {

struct Models {
    cmp::AggregatePosterior agg;
    cmp::DeconditionalPosterior dec;
};

Models fit_models(const SeedContext& ctx, const cmp::QueryLog& log)
{
    const double pm = ctx.config().prior_mean;
    auto cond = cmp::condition(*ctx.cache(), log, pm);
    return {cmp::AggregatePosterior(ctx.cache(), pm, cond), cmp::DeconditionalPosterior(ctx.cache(), pm, cond)};
}

// Candidate queries with their CMP features and the noise an observation would carry.
struct CandidateSet {
    PointSet raw;
    std::vector<std::optional<int>> levels;
    PointSet features;
    cmp::QueryFeatures cmp_features;
    Vector noise_var;

    Eigen::Index size() const { return raw.rows(); }
};

acquisition::MaxValueSamples sample_f_star(const SeedContext& ctx, const Models& m, acquisition::Rng& rng)
{
    const auto& cfg = ctx.config();
    const auto pred = m.dec.predict(ctx.max_grid(), ctx.max_grid_cross());
    Matrix cov;
    if (cfg.max_value_method == acquisition::MaxValueMethod::ThompsonGrid)
        cov = m.dec.covariance_matrix(ctx.max_grid(), ctx.max_grid_cross());
    else
        cov = pred.variance.cwiseMax(0.0).asDiagonal();
    return acquisition::sample_max_values(pred.mean, cov, cfg.max_value_samples, cfg.max_value_method, rng);
}

acquisition::PolicyState build_state(const SeedContext& ctx, PolicyKind policy, const CandidateSet& cands,
                                     const cmp::QueryLog& log, const Models& m, int t, acquisition::Rng& rng)
{
    const auto& cfg = ctx.config();
    acquisition::PolicyState st;
    st.noise_var = cands.noise_var;
    st.quad_points = cfg.cmes_noisy_quad_points;
    st.seed = rng();
    const auto n = cands.size();

    switch (policy) {
    case PolicyKind::Cmes:
    case PolicyKind::CmesNoisy:
    case PolicyKind::EstEquivalent: {
        const auto pred = m.agg.predict(cands.cmp_features);
        st.mean = pred.mean;
        st.sd = pred.sd();
        st.maxes = sample_f_star(ctx, m, rng);
        break;
    }
    case PolicyKind::MesOnG:
    case PolicyKind::UcbOnG:
    case PolicyKind::EiOnG: {
        // Baselines model g directly from D2 and never touch D1.
        const PointSet q = log.empty() ? PointSet(0, cands.features.cols()) : log.queries();
        const Vector z = Eigen::Map<const Vector>(log.z_obs.data(), static_cast<Eigen::Index>(log.size()));
        const double noise = log.empty() ? cfg.model_noise_var : mean_of(log.noise_vars);
        const auto g = gp::gp_regress(cfg.kernel_g, q, z, noise, cfg.prior_mean);
        const auto pred = g.predict(cands.features);
        st.mean = pred.mean;
        st.sd = pred.sd();
        if (policy == PolicyKind::MesOnG) {
            const auto gm = g.predict(ctx.a_max_grid());
            Matrix cov = cfg.max_value_method == acquisition::MaxValueMethod::ThompsonGrid
                             ? g.covariance_matrix(ctx.a_max_grid())
                             : Matrix(gm.variance.cwiseMax(0.0).asDiagonal());
            st.maxes = acquisition::sample_max_values(gm.mean, cov, cfg.max_value_samples, cfg.max_value_method, rng);
        }
        const double tt = static_cast<double>(std::max(t, 1));
        st.beta = 2.0 * std::log(static_cast<double>(n) * tt * tt * std::numbers::pi * std::numbers::pi /
                                 (6.0 * cfg.ucb_delta));
        if (!log.empty())
            st.incumbent = *std::max_element(log.z_obs.begin(), log.z_obs.end());
        break;
    }
    case PolicyKind::Random:
        st.mean = Vector::Zero(n);
        st.sd = Vector::Ones(n);
        break;
    }
    return st;
}

SeedResult start_result(const SeedContext& ctx, const std::string& policy, const Models& prior)
{
    SeedResult res;
    res.policy = policy;
    res.seed = ctx.seed();
    res.trace.f_opt = ctx.optimum().f_star;
    const auto idx = acquisition::recommend_x(prior.dec.predict(ctx.x_grid(), ctx.x_grid_cross()).mean);
    res.initial_recommendation = ctx.x_grid().row(static_cast<Eigen::Index>(idx)).transpose();
    res.initial_simple_regret = ctx.optimum().f_star - ctx.env().f(res.initial_recommendation);
    return res;
}

// Observe, refit, recommend and record one iteration.
void record_step(const SeedContext& ctx, SeedResult& res, cmp::QueryLog& log, Models& models, const Vector& a,
                 std::optional<int> level, double noise_var, double cost, std::size_t candidates,
                 acquisition::Rng& obs_rng)
{
    const auto& env = ctx.env();
    const Vector feat = env.features(a, level);
    StepDiagnostics diag;
    diag.g_mean = models.agg.mean(feat);
    diag.g_sd = std::sqrt(models.agg.variance(feat));
    diag.g_true = env.true_g(a, level);
    diag.candidates = candidates;

    const double z = env.observe(a, level, obs_rng);
    log.append(feat, z, noise_var);
    models = fit_models(ctx, log);
    const auto idx = acquisition::recommend_x(models.dec.predict(ctx.x_grid(), ctx.x_grid_cross()).mean);
    const Vector x = ctx.x_grid().row(static_cast<Eigen::Index>(idx)).transpose();
    envs::regret_update(res.trace, env, x, a, level, z, cost);
    res.diagnostics.push_back(diag);
}

} // namespace

SeedResult run_fixed(const SeedContext& ctx, const std::string& policy_name)
{
    const auto& cfg = ctx.config();
    const auto policy = acquisition::policy_from_string(policy_name);
    const auto level = fixed_level(ctx.env());
    cmp::QueryLog log;
    Models models = fit_models(ctx, log);
    SeedResult res = start_result(ctx, policy_name, models);
    auto obs_rng = ctx.stream(kObserveStream);
    auto pol_rng = ctx.stream(kPolicyStream);

    CandidateSet cands;
    cands.raw = ctx.a_grid();
    cands.cmp_features = ctx.a_features();
    cands.features = PointSet(cands.raw.rows(), static_cast<Eigen::Index>(ctx.env().feature_dim()));
    for (Eigen::Index i = 0; i < cands.raw.rows(); ++i)
        cands.features.row(i) = ctx.env().features(cands.raw.row(i).transpose(), level).transpose();
    cands.noise_var = Vector::Constant(cands.size(), cfg.model_noise_var);

    for (int t = 1; t <= cfg.iterations; ++t) {
        const auto st = build_state(ctx, policy, cands, log, models, t, pol_rng);
        const auto idx = static_cast<Eigen::Index>(acquisition::select_query(policy, st));
        record_step(ctx, res, log, models, cands.raw.row(idx).transpose(), level, cfg.model_noise_var, 1.0,
                    static_cast<std::size_t>(cands.size()), obs_rng);
    }
    res.stop_reason = "iterations";
    return res;
}

SeedResult run_cmets(const SeedContext& ctx, const std::string& policy_name)
{
    const auto& cfg = ctx.config();
    const auto& env = ctx.env();
    const auto& spec = env.spec();
    const bool hierarchical = policy_name == kCmetsName;
    const auto policy = hierarchical ? PolicyKind::Cmes : acquisition::policy_from_string(policy_name);
    if (!env.is_multires())
        throw std::invalid_argument("run_cmets: environment queries carry no depth");

    cmp::QueryLog log;
    Models models = fit_models(ctx, log);
    SeedResult res = start_result(ctx, policy_name, models);
    auto obs_rng = ctx.stream(kObserveStream);
    auto pol_rng = ctx.stream(kPolicyStream);

    cmets::CmetsState state(spec.a_domain, cfg.tree.branching, cfg.tree.max_depth, spec.schedule, cfg.budget);
    cmets::BudgetState flat_budget(cfg.budget);

    auto make_set = [&](const std::vector<std::pair<Vector, int>>& nodes) {
        CandidateSet c;
        const auto n = static_cast<Eigen::Index>(nodes.size());
        c.raw = PointSet(n, static_cast<Eigen::Index>(spec.a_domain.dim()));
        c.features = PointSet(n, static_cast<Eigen::Index>(env.feature_dim()));
        c.noise_var = Vector(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& [center, depth] = nodes[static_cast<std::size_t>(i)];
            c.raw.row(i) = center.transpose();
            c.levels.emplace_back(depth);
            c.features.row(i) = env.features(center, depth).transpose();
            const double sd = env.noise_sd(depth);
            c.noise_var(i) = sd * sd;
        }
        c.cmp_features = ctx.cache()->features(c.features);
        return c;
    };

    // Flat policies query the centres of every max-depth cell.
    CandidateSet leaves;
    if (!hierarchical) {
        const int cells = 1 << cfg.tree.max_depth;
        const auto d = static_cast<Eigen::Index>(spec.a_domain.dim());
        Box unit_centres{Vector::Constant(d, 0.5 / cells), Vector::Constant(d, 1.0 - 0.5 / cells)};
        const PointSet u = regular_grid(unit_centres, cells);
        std::vector<std::pair<Vector, int>> nodes;
        nodes.reserve(static_cast<std::size_t>(u.rows()));
        for (Eigen::Index i = 0; i < u.rows(); ++i)
            nodes.emplace_back(spec.a_domain.lower + spec.a_domain.width().cwiseProduct(u.row(i).transpose()),
                               cfg.tree.max_depth);
        leaves = make_set(nodes);
    }

    int t = 0;
    for (;;) {
        ++t;
        if (hierarchical) {
            if (state.budget().remaining <= 0.0) {
                res.stop_reason = "budget";
                break;
            }
            const auto ids = state.candidates();
            if (ids.empty()) {
                res.stop_reason = "no-candidates";
                break;
            }
            std::vector<std::pair<Vector, int>> nodes;
            for (int id : ids)
                nodes.emplace_back(state.tree().node(id).center, state.tree().node(id).depth);
            const CandidateSet cands = make_set(nodes);
            const auto st = build_state(ctx, policy, cands, log, models, t, pol_rng);
            const Vector scores = acquisition::score_candidates(policy, st);
            const auto step = state.step(std::vector<double>(scores.data(), scores.data() + scores.size()));
            if (step.status != cmets::StepStatus::Selected) {
                res.stop_reason = step.status == cmets::StepStatus::NoCandidates ? "no-candidates" : "budget";
                break;
            }
            state.check_invariants();
            const auto& node = state.tree().node(step.node);
            record_step(ctx, res, log, models, node.center, node.depth, env.noise_sd(node.depth),
                        state.cost_of(step.node), ids.size(), obs_rng);
        } else {
            const double cost = spec.schedule.cost.at(static_cast<std::size_t>(cfg.tree.max_depth));
            if (flat_budget.remaining <= 0.0 || cost > flat_budget.remaining) {
                res.stop_reason = "budget";
                break;
            }
            const auto st = build_state(ctx, policy, leaves, log, models, t, pol_rng);
            const auto idx = static_cast<Eigen::Index>(acquisition::select_query(policy, st));
            flat_budget.debit(static_cast<int>(idx), cost);
            record_step(ctx, res, log, models, leaves.raw.row(idx).transpose(), cfg.tree.max_depth,
                        leaves.noise_var(idx), cost, static_cast<std::size_t>(leaves.size()), obs_rng);
        }
    }
    const auto& budget = hierarchical ? state.budget() : flat_budget;
    res.budget_spent = budget.spent;
    res.budget_remaining = budget.remaining;
    return res;
}

RunArtifact run_experiment(const ExperimentConfig& config, int jobs)
{
    const auto started = std::chrono::steady_clock::now();
    config.validate();
    RunArtifact art;
    art.config = config;
    const envs::Environment env(config.env);
    art.optimum = env.optimum();

    const auto& seeds = config.seeds;
    std::vector<std::unique_ptr<SeedContext>> contexts(seeds.size());
    std::vector<std::string> context_errors(seeds.size());
    for (std::size_t s = 0; s < seeds.size(); ++s) {
        try {
            contexts[s] = std::make_unique<SeedContext>(art.config, env, art.optimum, seeds[s]);
        } catch (const std::exception& e) {
            context_errors[s] = e.what();
        }
    }

    // Jobs ordered policy-major; results land in fixed slots so the output order does not
    // depend on scheduling.
    const std::size_t total = config.policies.size() * seeds.size();
    art.runs.resize(total);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t job = next++; job < total; job = next++) {
            const auto& policy = config.policies[job / seeds.size()];
            const std::size_t s = job % seeds.size();
            SeedResult& out = art.runs[job];
            if (!contexts[s]) {
                out.policy = policy;
                out.seed = seeds[s];
                out.status = "failed: " + context_errors[s];
                out.stop_reason = "error";
                continue;
            }
            try {
                out = config.mode == RunMode::Fixed ? run_fixed(*contexts[s], policy) : run_cmets(*contexts[s], policy);
            } catch (const std::exception& e) {
                out = SeedResult{};
                out.policy = policy;
                out.seed = seeds[s];
                out.status = std::string("failed: ") + e.what();
                out.stop_reason = "error";
            }
        }
    };
    const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(total)));
    std::vector<std::thread> pool;
    for (int i = 1; i < n_threads; ++i)
        pool.emplace_back(worker);
    worker();
    for (auto& th : pool)
        th.join();

    art.summary = aggregate(art.runs, config.mode);
    art.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return art;
}

std::vector<SummaryRow> aggregate(const std::vector<SeedResult>& runs, RunMode mode)
{
    std::vector<std::string> order;
    std::map<std::string, std::vector<const SeedResult*>> by_policy;
    for (const auto& r : runs) {
        if (!r.ok())
            continue;
        if (!by_policy.contains(r.policy))
            order.push_back(r.policy);
        by_policy[r.policy].push_back(&r);
    }

    std::vector<SummaryRow> rows;
    for (const auto& policy : order) {
        const auto& group = by_policy[policy];
        auto emit_row = [&](double axis, const std::vector<double>& simple, const std::vector<double>& instant) {
            SummaryRow row;
            row.policy = policy;
            row.axis_value = axis;
            row.mean_simple = mean_of(simple);
            row.se_simple = standard_error(simple, row.mean_simple);
            row.mean_instant = mean_of(instant);
            row.se_instant = standard_error(instant, row.mean_instant);
            row.seeds = static_cast<int>(simple.size());
            rows.push_back(row);
        };

        if (mode == RunMode::Fixed) {
            std::size_t longest = 0;
            for (const auto* r : group)
                longest = std::max(longest, r->trace.records.size());
            for (std::size_t i = 0; i < longest; ++i) {
                std::vector<double> simple, instant;
                for (const auto* r : group) {
                    if (i < r->trace.records.size()) {
                        simple.push_back(r->trace.records[i].simple_regret);
                        instant.push_back(r->trace.records[i].instant_regret);
                    }
                }
                emit_row(static_cast<double>(i + 1), simple, instant);
            }
            continue;
        }

        // Budget mode: step functions of cumulative cost, evaluated at every breakpoint from
        // the point where all contributing seeds have a record.
        std::set<double> breakpoints;
        double start = -std::numeric_limits<double>::infinity();
        std::vector<const SeedResult*> live;
        for (const auto* r : group) {
            if (r->trace.records.empty())
                continue;
            live.push_back(r);
            start = std::max(start, r->trace.records.front().cumulative_cost);
            for (const auto& rec : r->trace.records)
                breakpoints.insert(rec.cumulative_cost);
        }
        for (double c : breakpoints) {
            if (c < start)
                continue;
            std::vector<double> simple, instant;
            for (const auto* r : live) {
                const auto& recs = r->trace.records;
                auto it = std::upper_bound(recs.begin(), recs.end(), c,
                                           [](double v, const envs::RegretRecord& rec) { return v < rec.cumulative_cost; });
                const auto& rec = *std::prev(it);
                simple.push_back(rec.simple_regret);
                instant.push_back(rec.instant_regret);
            }
            emit_row(c, simple, instant);
        }
    }
    return rows;
}

RunArtifact merge_artifacts(const std::vector<RunArtifact>& artifacts)
{
    if (artifacts.empty())
        throw std::invalid_argument("merge_artifacts: nothing to merge");
    auto comparable = [](const ExperimentConfig& c) {
        json j = c.to_json();
        j.erase("seeds");
        j.erase("policies");
        j.erase("output_dir");
        return j;
    };
    const json reference = comparable(artifacts.front().config);
    RunArtifact out;
    out.config = artifacts.front().config;
    out.optimum = artifacts.front().optimum;
    out.config.policies.clear();
    out.config.seeds.clear();
    std::set<std::pair<std::string, std::uint64_t>> seen;
    for (const auto& a : artifacts) {
        if (comparable(a.config) != reference)
            throw std::invalid_argument("merge_artifacts: artifacts come from different experiment configs");
        for (const auto& r : a.runs) {
            if (!seen.emplace(r.policy, r.seed).second)
                throw std::invalid_argument("merge_artifacts: duplicate run " + r.policy + "/" + std::to_string(r.seed));
            out.runs.push_back(r);
            if (std::find(out.config.policies.begin(), out.config.policies.end(), r.policy) == out.config.policies.end())
                out.config.policies.push_back(r.policy);
            if (std::find(out.config.seeds.begin(), out.config.seeds.end(), r.seed) == out.config.seeds.end())
                out.config.seeds.push_back(r.seed);
        }
        out.wall_seconds += a.wall_seconds;
    }
    out.summary = aggregate(out.runs, out.config.mode);
    return out;
}

} // namespace iqbo::runner
