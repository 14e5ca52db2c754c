#ifndef IQBO_RUNNER_HPP
#define IQBO_RUNNER_HPP

#include "iqbo/acquisition.hpp"
#include "iqbo/envs.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace iqbo::runner {

using nlohmann::json;

enum class RunMode { Fixed, Budget };

std::string_view to_string(RunMode m);

/// Name used for the hierarchical budgeted policy in configs and outputs.
inline constexpr std::string_view kCmetsName = "CMETS";

struct GridConfig {
    int x_per_axis = 50;
    int a_per_axis = 50;
    /// Per-axis density of the grid used for max-value sampling.
    int max_value_per_axis = 25;
};

struct TreeConfig {
    int max_depth = 6;
    int branching = 4;
    double cost_scale = 0.5;
    double noise_scale = 0.5;
};

struct ExperimentConfig {
    std::string experiment_id = "iqbo";
    envs::EnvSpec env = envs::EnvSpec::branin_lt();
    RunMode mode = RunMode::Fixed;
    int iterations = 100;
    double budget = 0.0;
    std::vector<std::string> policies{"CMES", "MES", "UCB", "EI", "random"};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    GridConfig grid;
    gp::KernelSpec kernel_x;
    gp::KernelSpec kernel_a;
    /// Kernel of the baselines' GP on g over the query space.
    gp::KernelSpec kernel_g;
    double prior_mean = 0.0;
    /// Noise variance the models assume for fixed-resolution observations.
    double model_noise_var = 0.01;
    double ridge_lambda = 1e-3;
    int d1_size = 200;
    int max_value_samples = 10;
    acquisition::MaxValueMethod max_value_method = acquisition::MaxValueMethod::ThompsonGrid;
    double ucb_delta = 0.1;
    int cmes_noisy_quad_points = 64;
    TreeConfig tree;
    std::string output_dir = "results";

    /// Softmax bandit parameters as given in the config, kept for round trips.
    json bandit_json;

    /// Defaults for everything, with kernels and noise scaled to the environment. The mode
    /// defaults to budget for multires-tree and fixed otherwise; in budget mode queries carry
    /// a tree depth.
    static ExperimentConfig defaults(envs::EnvSpec env, std::optional<RunMode> mode = std::nullopt,
                                     std::optional<TreeConfig> tree = std::nullopt);
    /// Parse a config; missing keys take `defaults(env)`. Unknown keys are rejected.
    static ExperimentConfig from_json(const json& j);
    json to_json() const;

    void validate() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

/// Per-iteration model diagnostics at the chosen query.
struct StepDiagnostics {
    double g_mean = 0.0;
    double g_sd = 0.0;
    double g_true = 0.0;
    /// Number of candidates scored.
    std::size_t candidates = 0;
};

struct SeedResult {
    std::string policy;
    std::uint64_t seed = 0;
    /// "ok" or "failed: <reason>".
    std::string status = "ok";
    /// Why the loop ended: "iterations", "budget", "no-candidates" or "error".
    std::string stop_reason;
    envs::RegretTrace trace;
    std::vector<StepDiagnostics> diagnostics;
    Vector initial_recommendation;
    double initial_simple_regret = 0.0;
    double budget_spent = 0.0;
    double budget_remaining = 0.0;

    bool ok() const { return status == "ok"; }
};

struct SummaryRow {
    std::string policy;
    double axis_value = 0.0;
    double mean_simple = 0.0;
    double se_simple = 0.0;
    double mean_instant = 0.0;
    double se_instant = 0.0;
    int seeds = 0;
};

struct RunArtifact {
    ExperimentConfig config;
    envs::OptimumRecord optimum;
    std::vector<SeedResult> runs;
    std::vector<SummaryRow> summary;
    double wall_seconds = 0.0;

    bool all_ok() const;
};

/// Everything that one (config, seed) pair shares across policies: the environment, its
/// optimum, D1, the fitted CMO and the fixed grids with their precomputed features.
class SeedContext {
public:
    SeedContext(const ExperimentConfig& config, const envs::Environment& env, const envs::OptimumRecord& optimum,
                std::uint64_t seed);

    const ExperimentConfig& config() const { return config_; }
    const envs::Environment& env() const { return env_; }
    const envs::OptimumRecord& optimum() const { return optimum_; }
    std::uint64_t seed() const { return seed_; }
    const std::shared_ptr<const cmp::CmoCache>& cache() const { return cache_; }

    const PointSet& x_grid() const { return x_grid_; }
    const Matrix& x_grid_cross() const { return x_grid_cross_; }
    const PointSet& max_grid() const { return max_grid_; }
    const Matrix& max_grid_cross() const { return max_grid_cross_; }
    /// Query grid of the fixed-resolution loop and its CMP features.
    const PointSet& a_grid() const { return a_grid_; }
    const cmp::QueryFeatures& a_features() const { return a_features_; }
    const PointSet& a_max_grid() const { return a_max_grid_; }

    /// Seeded stream for a named purpose; identical across policies.
    acquisition::Rng stream(std::uint64_t purpose) const;

private:
    const ExperimentConfig& config_;
    const envs::Environment& env_;
    const envs::OptimumRecord& optimum_;
    std::uint64_t seed_;
    std::shared_ptr<const cmp::CmoCache> cache_;
    PointSet x_grid_;
    Matrix x_grid_cross_;
    PointSet max_grid_;
    Matrix max_grid_cross_;
    PointSet a_grid_;
    cmp::QueryFeatures a_features_;
    PointSet a_max_grid_;
};

/// Fixed-resolution loop: T queries on the query grid.
SeedResult run_fixed(const SeedContext& ctx, const std::string& policy);

/// Budgeted loop. "CMETS" searches the partition tree with score / cost; any other policy
/// scores the max-depth leaf centres.
SeedResult run_cmets(const SeedContext& ctx, const std::string& policy);

/// Execute every (policy, seed) pair on up to `jobs` threads. Failed seeds are recorded and
/// the rest continue.
RunArtifact run_experiment(const ExperimentConfig& config, int jobs = 1);

/// Per-policy mean and standard error over successful seeds. Fixed mode aligns on the
/// iteration index; budget mode on the union of cumulative-cost breakpoints with step
/// interpolation.
std::vector<SummaryRow> aggregate(const std::vector<SeedResult>& runs, RunMode mode);

/// Merge artifacts of the same experiment (identical configs apart from seeds and policies).
RunArtifact merge_artifacts(const std::vector<RunArtifact>& artifacts);

// --- emission -------------------------------------------------------------------------------

/// %.9g
std::string format_real(double v);
std::string format_vector(const Vector& v);

void write_runs_csv(std::ostream& out, const RunArtifact& artifact);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);
json artifact_to_json(const RunArtifact& artifact);
RunArtifact artifact_from_json(const json& j);

/// Write runs.csv, summary.csv and artifact.json into `dir`, creating it if needed.
void emit(const RunArtifact& artifact, const std::filesystem::path& dir);

} // namespace iqbo::runner

#endif
