#include "iqbo/runner.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

namespace iqbo::runner {

namespace {

json vec(const Vector& v)
{
    return std::vector<double>(v.data(), v.data() + v.size());
}

Vector unvec(const json& j)
{
    if (j.is_null())
        return {};
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

// JSON has no NaN or infinity; keep them as strings so a round trip is lossless.
json real(double v)
{
    if (std::isfinite(v))
        return v;
    return format_real(v);
}

double unreal(const json& j)
{
    if (j.is_string())
        return std::stod(j.get<std::string>());
    return j.get<double>();
}

} // namespace

std::string format_real(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string format_vector(const Vector& v)
{
    std::string out;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i > 0)
            out += ';';
        out += format_real(v(i));
    }
    return out;
}

void write_runs_csv(std::ostream& out, const RunArtifact& artifact)
{
    out << "experiment_id,policy,seed,iteration,cumulative_cost,a_query,z_obs,x_recommend,simple_regret,"
           "instant_regret\n";
    for (const auto& run : artifact.runs) {
        for (const auto& r : run.trace.records) {
            out << artifact.config.experiment_id << ',' << run.policy << ',' << run.seed << ',' << r.iteration << ','
                << format_real(r.cumulative_cost) << ',' << format_vector(r.a_query) << ',' << format_real(r.z_obs)
                << ',' << format_vector(r.x_recommend) << ',' << format_real(r.simple_regret) << ','
                << format_real(r.instant_regret) << '\n';
        }
    }
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows)
{
    out << "policy,axis_value,mean_simple,se_simple,mean_instant,se_instant\n";
    for (const auto& r : rows)
        out << r.policy << ',' << format_real(r.axis_value) << ',' << format_real(r.mean_simple) << ','
            << format_real(r.se_simple) << ',' << format_real(r.mean_instant) << ',' << format_real(r.se_instant)
            << '\n';
}

json artifact_to_json(const RunArtifact& artifact)
{
    json runs = json::array();
    for (const auto& run : artifact.runs) {
        json records = json::array();
        for (std::size_t i = 0; i < run.trace.records.size(); ++i) {
            const auto& r = run.trace.records[i];
            json rec{{"iteration", r.iteration},
                     {"cumulative_cost", real(r.cumulative_cost)},
                     {"a_query", vec(r.a_query)},
                     {"level", r.level},
                     {"z_obs", real(r.z_obs)},
                     {"x_recommend", vec(r.x_recommend)},
                     {"simple_regret", real(r.simple_regret)},
                     {"instant_regret", real(r.instant_regret)}};
            if (i < run.diagnostics.size()) {
                const auto& d = run.diagnostics[i];
                rec["g_mean"] = real(d.g_mean);
                rec["g_sd"] = real(d.g_sd);
                rec["g_true"] = real(d.g_true);
                rec["candidates"] = d.candidates;
            }
            records.push_back(std::move(rec));
        }
        runs.push_back({{"policy", run.policy},
                        {"seed", run.seed},
                        {"status", run.status},
                        {"stop_reason", run.stop_reason},
                        {"initial_recommendation", vec(run.initial_recommendation)},
                        {"initial_simple_regret", real(run.initial_simple_regret)},
                        {"budget_spent", real(run.budget_spent)},
                        {"budget_remaining", real(run.budget_remaining)},
                        {"f_opt", real(run.trace.f_opt)},
                        {"records", std::move(records)}});
    }
    json summary = json::array();
    for (const auto& s : artifact.summary)
        summary.push_back({{"policy", s.policy},
                           {"axis_value", real(s.axis_value)},
                           {"mean_simple", real(s.mean_simple)},
                           {"se_simple", real(s.se_simple)},
                           {"mean_instant", real(s.mean_instant)},
                           {"se_instant", real(s.se_instant)},
                           {"seeds", s.seeds}});
    return {{"config", artifact.config.to_json()},
            {"optimum", {{"x_star", vec(artifact.optimum.x_star)}, {"f_star", real(artifact.optimum.f_star)}}},
            {"runs", std::move(runs)},
            {"summary", std::move(summary)},
            {"all_ok", artifact.all_ok()},
            {"wall_seconds", artifact.wall_seconds}};
}

RunArtifact artifact_from_json(const json& j)
{
    RunArtifact a;
    a.config = ExperimentConfig::from_json(j.at("config"));
    a.optimum.x_star = unvec(j.at("optimum").at("x_star"));
    a.optimum.f_star = unreal(j.at("optimum").at("f_star"));
    for (const auto& jr : j.at("runs")) {
        SeedResult run;
        run.policy = jr.at("policy").get<std::string>();
        run.seed = jr.at("seed").get<std::uint64_t>();
        run.status = jr.at("status").get<std::string>();
        run.stop_reason = jr.value("stop_reason", std::string());
        run.initial_recommendation = unvec(jr.at("initial_recommendation"));
        run.initial_simple_regret = unreal(jr.at("initial_simple_regret"));
        run.budget_spent = unreal(jr.value("budget_spent", json(0.0)));
        run.budget_remaining = unreal(jr.value("budget_remaining", json(0.0)));
        run.trace.f_opt = unreal(jr.at("f_opt"));
        for (const auto& rec : jr.at("records")) {
            envs::RegretRecord r;
            r.iteration = rec.at("iteration").get<int>();
            r.cumulative_cost = unreal(rec.at("cumulative_cost"));
            r.a_query = unvec(rec.at("a_query"));
            r.level = rec.value("level", -1);
            r.z_obs = unreal(rec.at("z_obs"));
            r.x_recommend = unvec(rec.at("x_recommend"));
            r.simple_regret = unreal(rec.at("simple_regret"));
            r.instant_regret = unreal(rec.at("instant_regret"));
            run.trace.best_f = run.trace.f_opt - r.simple_regret;
            run.trace.best_g = run.trace.f_opt - r.instant_regret;
            run.trace.records.push_back(std::move(r));
            if (rec.contains("g_mean"))
                run.diagnostics.push_back({unreal(rec.at("g_mean")), unreal(rec.at("g_sd")),
                                           unreal(rec.at("g_true")), rec.value("candidates", std::size_t{0})});
        }
        a.runs.push_back(std::move(run));
    }
    a.summary = aggregate(a.runs, a.config.mode);
    a.wall_seconds = j.value("wall_seconds", 0.0);
    return a;
}

void emit(const RunArtifact& artifact, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream out(dir / name);
        if (!out)
            throw std::runtime_error("cannot write " + (dir / name).string());
        return out;
    };
    {
        auto out = open("runs.csv");
        write_runs_csv(out, artifact);
    }
    {
        auto out = open("summary.csv");
        write_summary_csv(out, artifact.summary);
    }
    {
        auto out = open("artifact.json");
        out << artifact_to_json(artifact).dump(2) << '\n';
    }
}

} // namespace iqbo::runner
