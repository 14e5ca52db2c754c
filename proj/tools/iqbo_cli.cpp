#include "iqbo/runner.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

using namespace iqbo;

namespace {

std::vector<std::string> split(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');)
        if (!item.empty())
            out.push_back(item);
    return out;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, const std::string& seeds,
            const std::string& policies, int jobs)
{
    auto config = runner::load_config(config_path);
    if (!seeds.empty()) {
        config.seeds.clear();
        for (const auto& s : split(seeds))
            config.seeds.push_back(std::stoull(s));
    }
    if (!policies.empty())
        config.policies = split(policies);
    config.validate();

    const auto artifact = runner::run_experiment(config, jobs);
    const std::filesystem::path dir = out_dir.empty() ? config.output_dir : out_dir;
    runner::emit(artifact, dir);

    for (const auto& run : artifact.runs) {
        std::cerr << run.policy << " seed " << run.seed << ": " << run.status;
        if (run.ok() && !run.trace.records.empty())
            std::cerr << ", " << run.trace.records.size() << " steps, simple regret "
                      << runner::format_real(run.trace.records.back().simple_regret);
        std::cerr << '\n';
    }
    std::cerr << "wrote " << dir.string() << " in " << runner::format_real(artifact.wall_seconds) << " s\n";
    return artifact.all_ok() ? 0 : 1;
}

int cmd_aggregate(const std::vector<std::string>& inputs, const std::string& out_dir)
{
    std::vector<runner::RunArtifact> artifacts;
    for (const auto& path : inputs) {
        std::ifstream in(path);
        if (!in)
            throw std::runtime_error("cannot open " + path);
        artifacts.push_back(runner::artifact_from_json(runner::json::parse(in)));
    }
    const auto merged = runner::merge_artifacts(artifacts);
    runner::emit(merged, out_dir);
    runner::write_summary_csv(std::cout, merged.summary);
    return merged.all_ok() ? 0 : 1;
}

int cmd_oracle(const std::string& config_path, int per_axis)
{
    const auto config = runner::load_config(config_path);
    const envs::Environment env(config.env);
    const auto opt = env.optimum();
    std::cout << "f_star," << runner::format_real(opt.f_star) << "\nx_star," << runner::format_vector(opt.x_star)
              << "\n\na,level,g\n";
    const PointSet grid = env.a_grid(per_axis);
    std::vector<std::optional<int>> levels{std::nullopt};
    if (env.is_multires()) {
        levels.clear();
        for (int l = 0; l <= env.spec().max_depth; ++l)
            levels.emplace_back(l);
    }
    for (const auto& level : levels)
        for (Eigen::Index i = 0; i < grid.rows(); ++i) {
            const Vector a = grid.row(i).transpose();
            std::cout << runner::format_vector(a) << ',' << (level ? std::to_string(*level) : "") << ','
                      << runner::format_real(env.true_g(a, level)) << '\n';
        }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Indirect query Bayesian optimization experiments"};
    app.require_subcommand(1);

    std::string config_path, out_dir, seeds, policies;
    int jobs = 1;
    auto* run = app.add_subcommand("run", "Run every policy and seed of a config");
    run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_dir, "Output directory (default: the config's output_dir)");
    run->add_option("--seeds", seeds, "Comma-separated seed override");
    run->add_option("--policy", policies, "Comma-separated policy filter");
    run->add_option("--jobs", jobs, "Parallel jobs")->check(CLI::PositiveNumber);

    std::vector<std::string> inputs;
    std::string agg_out;
    auto* agg = app.add_subcommand("aggregate", "Merge artifact.json files and recompute summaries");
    agg->add_option("artifacts", inputs, "artifact.json files")->required()->check(CLI::ExistingFile);
    agg->add_option("--out", agg_out, "Output directory")->required();

    std::string oracle_config;
    int per_axis = 5;
    auto* oracle = app.add_subcommand("oracle", "Print the optimum of f and samples of g");
    oracle->add_option("--config", oracle_config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    oracle->add_option("--per-axis", per_axis, "Query grid density for g samples")->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run)
            return cmd_run(config_path, out_dir, seeds, policies, jobs);
        if (*agg)
            return cmd_aggregate(inputs, agg_out);
        return cmd_oracle(oracle_config, per_axis);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
