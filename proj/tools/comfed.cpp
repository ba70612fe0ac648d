/*
 * Copyright 2026 The comfed Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// comfed: experiment runner and verification suites.
//
// Exit codes: 0 success, 1 config error, 2 divergence, 3 verification
// failure. Reports go to stdout as JSON; logs go to stderr.

#include "comfed/comfed.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace
{

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int
{
    exit_ok = 0,
    exit_config = 1,
    exit_divergence = 2,
    exit_verification = 3,
};

void setup_logging()
{
    auto logger = spdlog::stderr_color_mt("comfed");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    const char* env = std::getenv("COMFED_LOG_LEVEL");
    const std::string level = env ? env : "info";
    if (level == "error") spdlog::set_level(spdlog::level::err);
    else if (level == "debug") spdlog::set_level(spdlog::level::debug);
    else
    {
        spdlog::set_level(spdlog::level::info);
        if (level != "info") spdlog::warn("unknown COMFED_LOG_LEVEL '{}', using info", level);
    }
}

// Reals are written as JSON numbers where finite, strings otherwise.
json real(double v)
{
    if (std::isfinite(v)) return v;
    return comfed::format_real(v);
}

void emit(const json& report)
{
    std::cout << report.dump(2) << std::endl;
}

struct Common
{
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool config_required)
{
    auto* opt = cmd->add_option("--config", c.config, "Experiment config file (INI)");
    if (config_required) opt->required();
    opt->check(CLI::ExistingFile);
    cmd->add_option("--set", c.sets, "Override KEY=VALUE after parsing (repeatable)")
        ->allow_extra_args(false);
    cmd->add_option("--seed", c.seed, "Override experiment.seed");
}

comfed::ExperimentConfig load(const Common& c)
{
    std::vector<std::string> overrides = c.sets;
    if (c.seed) overrides.push_back("experiment.seed=" + std::to_string(*c.seed));
    if (c.config.empty()) return comfed::parse_config("", overrides);
    return comfed::load_config(c.config, overrides);
}

struct Outcome
{
    comfed::ExperimentConfig cfg;
    comfed::RunResult result;
};

Outcome execute(const comfed::ExperimentConfig& cfg)
{
    const auto task = comfed::build_task(cfg);
    comfed::validate(cfg, *task);
    spdlog::debug("task {} with {} clients, dim {}", task->name(), task->num_clients(), task->dim());
    return {cfg, comfed::run_experiment(*task, cfg)};
}

void write_metrics(const fs::path& out, const comfed::RunResult& result, bool wall_clock)
{
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    comfed::MetricsSink sink(out, comfed::format_for(out), comfed::FlushPolicy::every_record, wall_clock);
    for (const auto& r : result.records) comfed::write_round(sink, r);
}

json summarize(const comfed::RunResult& result)
{
    json j;
    j["rounds"] = result.records.size();
    j["diverged"] = result.diverged;
    if (!result.diagnostic.empty()) j["diagnostic"] = result.diagnostic;
    if (!result.records.empty())
    {
        const auto& last = result.records.back();
        j["final_objective"] = real(last.objective);
        j["final_mean_loss"] = real(last.mean_loss);
        j["final_worst_loss"] = real(last.worst_loss);
        j["final_grad_norm"] = real(last.grad_norm);
    }
    const auto& e = result.estimate;
    j["estimate"] = {{"G_f", real(e.G_f)}, {"G_g", real(e.G_g)}, {"L_f", real(e.L_f)},
                     {"L_g", real(e.L_g)}, {"L", real(e.L)},     {"sigma", real(e.sigma)}};
    return j;
}

// ---- run -------------------------------------------------------------------

struct RunArgs
{
    Common common;
    std::string out = "metrics.csv";
    std::string checkpoint;
    bool wall_clock = false;
};

int cmd_run(const RunArgs& a)
{
    const auto cfg = load(a.common);
    std::cout << comfed::echo_config(cfg) << std::flush;
    spdlog::info("running {} for {} rounds", comfed::to_string(cfg.algorithm), cfg.rounds);
    const auto outcome = execute(cfg);
    const fs::path out = a.out;
    write_metrics(out, outcome.result, a.wall_clock);
    const fs::path ckpt = a.checkpoint.empty() ? fs::path(out).replace_extension(".ckpt") : fs::path(a.checkpoint);
    comfed::checkpoint_model(ckpt, outcome.result.final_model, comfed::config_hash(cfg));
    spdlog::info("wrote {} rounds to {} and the final model to {}", outcome.result.records.size(),
                 out.string(), ckpt.string());
    spdlog::info("summary {}", summarize(outcome.result).dump());
    if (outcome.result.diverged)
    {
        spdlog::error("{}", outcome.result.diagnostic);
        return exit_divergence;
    }
    return exit_ok;
}

// ---- verify-lemma1 -----------------------------------------------------------

struct LemmaArgs
{
    std::size_t n = 8;
    double gamma = 0.2;
    std::size_t trials = 200;
    std::uint64_t seed = 0;
};

int cmd_verify_lemma1(const LemmaArgs& a)
{
    if (a.n < 1) throw comfed::ConfigError("n", "must be at least 1");
    if (!(a.gamma > 0.0)) throw comfed::ConfigError("gamma", "must be positive");
    if (a.trials < 1) throw comfed::ConfigError("trials", "must be at least 1");
    const auto report = comfed::verify_lemma1(
        a.n, a.gamma, a.trials, comfed::derive_stream(a.seed, 0, 0, 0, comfed::Purpose::verification));
    json j{{"check", "lemma1"},
           {"n", report.n},
           {"gamma", report.gamma},
           {"trials", report.trials},
           {"failures", report.failures},
           {"worst_relative_gap", real(report.worst_relative_gap)},
           {"worst_optimality_margin", real(report.worst_optimality_margin)},
           {"passed", report.passed()}};
    if (!report.passed()) j["failing_losses"] = report.first_failing_losses;
    emit(j);
    return report.passed() ? exit_ok : exit_verification;
}

// ---- grad-check ----------------------------------------------------------------

struct GradArgs
{
    Common common;
    std::string task;
    std::size_t points = 20;
    double tolerance = 1e-5;
    double step = comfed::default_fd_step;
};

comfed::ExperimentConfig named_task(const std::string& name, const comfed::ExperimentConfig& base)
{
    comfed::ExperimentConfig cfg = base;
    auto& t = cfg.task;
    t.clients = 5;
    if (name == "quadratic-dro") t.model = comfed::Model::quadratic, t.objective = comfed::Objective::dro;
    else if (name == "quadratic-maml") t.model = comfed::Model::quadratic, t.objective = comfed::Objective::maml;
    else if (name == "quadratic-damaml") t.model = comfed::Model::quadratic, t.objective = comfed::Objective::damaml;
    else if (name == "logistic-dro") t.model = comfed::Model::logistic, t.objective = comfed::Objective::dro;
    else if (name == "logistic-maml") t.model = comfed::Model::logistic, t.objective = comfed::Objective::maml;
    else if (name == "classification-dro")
    {
        t.model = comfed::Model::classification;
        t.objective = comfed::Objective::dro;
        t.dominant_size = 50;
        t.minority_size = 20;
        t.classification.classes = 3;
        t.classification.features = 3;
    }
    else throw comfed::ConfigError("task", "unknown task family '" + name + "'");
    cfg.gamma = (t.objective == comfed::Objective::damaml) ? 0.5 : 1.0;
    return cfg;
}

int cmd_grad_check(const GradArgs& a)
{
    if (a.task.empty() && a.common.config.empty())
    {
        throw comfed::ConfigError("task", "pass --task or --config");
    }
    auto cfg = load(a.common);
    if (!a.task.empty()) cfg = named_task(a.task, cfg);
    const auto task = comfed::build_task(cfg);
    auto rng = comfed::derive_stream(cfg.seed, 0, 0, 0, comfed::Purpose::verification);
    const auto report = comfed::grad_check(*task, a.points, rng, 0.5, a.step);
    bool passed = report.passed(a.tolerance);
    json j{{"check", "grad"},
           {"task", a.task.empty() ? task->name() : a.task},
           {"points", report.points},
           {"step", report.step},
           {"tolerance", a.tolerance},
           {"max_relative_error", real(report.max_relative_error)},
           {"worst_index", report.worst_index}};
    if (const auto* maml = dynamic_cast<const comfed::MamlTask*>(task.get()))
    {
        auto vjp_rng = comfed::derive_stream(cfg.seed, 1, 0, 0, comfed::Purpose::verification);
        const auto vjp = comfed::maml_vjp_check(*maml, a.points, vjp_rng, 0.5, a.step);
        j["vjp_max_relative_error"] = real(vjp.max_relative_error);
        passed = passed && vjp.passed(a.tolerance);
    }
    j["passed"] = passed;
    emit(j);
    return passed ? exit_ok : exit_verification;
}

// ---- rate-fit --------------------------------------------------------------------

struct RateArgs
{
    Common common;
    std::string metrics;
    std::vector<std::size_t> horizons;
    std::size_t min_horizon = 100;
    std::size_t max_horizon = 10000;
    std::size_t count = 13;
    double alpha1 = 0.5;
    double alpha2 = 1.0;
    double batch_scale = 0.1;
    std::size_t seeds = 1;
    double max_slope = -0.3;
    int tau = 5;
};

int cmd_rate_fit(const RateArgs& a)
{
    std::vector<comfed::RatePoint> points;
    json j{{"check", "rate"}};
    if (!a.metrics.empty())
    {
        const auto records = comfed::read_metrics(a.metrics);
        points = comfed::min_so_far_points(records, a.tau);
        j["source"] = a.metrics;
        j["quantity"] = "min_so_far_grad_sq";
    }
    else
    {
        if (a.common.config.empty()) throw comfed::ConfigError("config", "pass --config or --metrics");
        const auto base = load(a.common);
        const auto task = comfed::build_task(base);
        const auto horizons = a.horizons.empty()
                                  ? comfed::log_horizons(a.min_horizon, a.max_horizon, a.count, base.tau)
                                  : a.horizons;
        const comfed::RateSchedule schedule{a.alpha1, a.alpha2, a.batch_scale};
        try
        {
            points = comfed::rate_sweep(*task, base, horizons, schedule, a.seeds);
        }
        catch (const comfed::NumericalError& e)
        {
            j["diagnostic"] = e.what();
            j["passed"] = false;
            emit(j);
            return exit_divergence;
        }
        j["quantity"] = "averaged_grad_sq";
        j["alpha1"] = a.alpha1;
        j["alpha2"] = a.alpha2;
    }
    json pts = json::array();
    for (const auto& p : points) pts.push_back({real(p.horizon), real(p.value)});
    j["points"] = pts;
    const double slope = comfed::rate_fit(points);
    const bool passed = slope <= a.max_slope;
    j["slope"] = real(slope);
    j["max_slope"] = a.max_slope;
    j["passed"] = passed;
    emit(j);
    return passed ? exit_ok : exit_verification;
}

// ---- drift-check ------------------------------------------------------------------

struct DriftArgs
{
    Common common;
    std::string metrics;
    double slack = 0.05;
};

int cmd_drift_check(const DriftArgs& a)
{
    comfed::DriftReport report;
    json j{{"check", "drift"}};
    if (!a.metrics.empty())
    {
        const auto records = comfed::read_metrics(a.metrics);
        report = comfed::drift_check(records, a.slack);
        j["source"] = a.metrics;
    }
    else
    {
        if (a.common.config.empty()) throw comfed::ConfigError("config", "pass --config or --metrics");
        const auto outcome = execute(load(a.common));
        if (outcome.result.diverged)
        {
            j["diagnostic"] = outcome.result.diagnostic;
            j["passed"] = false;
            emit(j);
            return exit_divergence;
        }
        report = comfed::drift_check(outcome.result.records, outcome.result.estimate, outcome.cfg.tau,
                                     outcome.cfg.eta, a.slack);
    }
    j["rounds_checked"] = report.rounds_checked;
    j["violations"] = report.violations;
    j["worst_ratio"] = real(report.worst_ratio);
    j["bound"] = real(report.bound);
    j["worst_deviation_ratio"] = real(report.worst_deviation_ratio);
    j["slack"] = a.slack;
    if (!report.passed()) j["first_violation_round"] = report.first_violation_round;
    j["passed"] = report.passed();
    emit(j);
    return report.passed() ? exit_ok : exit_verification;
}

// ---- sweep ---------------------------------------------------------------------------

struct SweepArgs
{
    Common common;
    std::string param;
    std::vector<std::string> values;
    std::string out_dir = "sweep";
    std::string metric = "worst_loss";
    std::optional<double> threshold;
    bool parallel = false;
};

double metric_of(const comfed::RoundRecord& r, const std::string& metric)
{
    if (metric == "objective") return r.objective;
    if (metric == "mean_loss") return r.mean_loss;
    if (metric == "grad_norm") return r.grad_norm;
    return r.worst_loss;
}

int cmd_sweep(const SweepArgs& a)
{
    if (a.values.empty()) throw comfed::ConfigError("values", "need at least one value");
    const std::string key = a.param == "tau" ? "algorithm.tau"
                            : a.param == "gamma" ? "algorithm.gamma"
                                                 : "task.rho";
    std::vector<comfed::ExperimentConfig> configs;
    for (const auto& v : a.values)
    {
        Common c = a.common;
        c.sets.push_back(key + "=" + v);
        configs.push_back(load(c));
    }
    fs::create_directories(a.out_dir);

    std::vector<Outcome> outcomes(configs.size());
    if (a.parallel)
    {
        std::vector<std::future<Outcome>> jobs;
        for (const auto& cfg : configs) jobs.push_back(std::async(std::launch::async, execute, cfg));
        for (std::size_t k = 0; k < jobs.size(); ++k) outcomes[k] = jobs[k].get();
    }
    else
    {
        for (std::size_t k = 0; k < configs.size(); ++k)
        {
            spdlog::info("sweep {}={} ({}/{})", a.param, a.values[k], k + 1, configs.size());
            outcomes[k] = execute(configs[k]);
        }
    }

    bool any_diverged = false;
    json rows = json::array();
    std::ostringstream table;
    table << "value,final_mean_loss,final_worst_loss,rounds_to_threshold,diverged,metrics\n";
    for (std::size_t k = 0; k < outcomes.size(); ++k)
    {
        const auto& res = outcomes[k].result;
        const fs::path file = fs::path(a.out_dir) / (a.param + "_" + a.values[k] + ".csv");
        write_metrics(file, res, false);
        any_diverged = any_diverged || res.diverged;
        std::optional<std::size_t> hit;
        if (a.threshold)
        {
            for (const auto& r : res.records)
            {
                if (metric_of(r, a.metric) <= *a.threshold)
                {
                    hit = r.round;
                    break;
                }
            }
        }
        const auto& last = res.records.back();
        json row{{"value", a.values[k]},
                 {"final_mean_loss", real(last.mean_loss)},
                 {"final_worst_loss", real(last.worst_loss)},
                 {"diverged", res.diverged},
                 {"metrics", file.string()}};
        row["rounds_to_threshold"] = hit ? json(*hit) : json(nullptr);
        rows.push_back(row);
        table << a.values[k] << ',' << comfed::format_real(last.mean_loss) << ','
              << comfed::format_real(last.worst_loss) << ',' << (hit ? std::to_string(*hit) : "") << ','
              << (res.diverged ? "true" : "false") << ',' << file.string() << '\n';
    }
    const fs::path summary = fs::path(a.out_dir) / "summary.csv";
    std::ofstream(summary, std::ios::binary) << table.str();

    json j{{"sweep", a.param}, {"metric", a.metric}, {"summary", summary.string()}, {"runs", rows}};
    if (a.threshold) j["threshold"] = *a.threshold;
    emit(j);
    return any_diverged ? exit_divergence : exit_ok;
}

}  // namespace

int main(int argc, char** argv)
{
    setup_logging();
    CLI::App app{"Compositional federated learning simulator"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", "comfed 0.1.0");

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "Run one experiment and write metrics plus a checkpoint");
    add_common(run_cmd, run.common, true);
    run_cmd->add_option("--out", run.out, "Metrics file; .jsonl selects JSONL, anything else CSV")
        ->capture_default_str();
    run_cmd->add_option("--checkpoint", run.checkpoint, "Final model path (default: --out with .ckpt)");
    run_cmd->add_flag("--wall-clock", run.wall_clock, "Add a wall_clock column (breaks byte-identical replay)");

    LemmaArgs lemma;
    auto* lemma_cmd = app.add_subcommand("verify-lemma1", "Check the minimax / log-sum-exp equivalence");
    lemma_cmd->add_option("--n", lemma.n, "Number of clients")->capture_default_str();
    lemma_cmd->add_option("--gamma", lemma.gamma, "Regularization gamma")->capture_default_str();
    lemma_cmd->add_option("--trials", lemma.trials, "Random loss vectors")->capture_default_str();
    lemma_cmd->add_option("--seed", lemma.seed, "Seed")->capture_default_str();

    GradArgs grad;
    auto* grad_cmd = app.add_subcommand("grad-check", "Compare analytic gradients with finite differences");
    add_common(grad_cmd, grad.common, false);
    grad_cmd->add_option("--task", grad.task, "Task family")
        ->check(CLI::IsMember({"quadratic-dro", "quadratic-maml", "quadratic-damaml", "logistic-dro",
                               "logistic-maml", "classification-dro"}));
    grad_cmd->add_option("--points", grad.points, "Random points")->capture_default_str();
    grad_cmd->add_option("--tol", grad.tolerance, "Max relative error")->capture_default_str();
    grad_cmd->add_option("--step", grad.step, "Central-difference step")->capture_default_str();

    RateArgs rate;
    auto* rate_cmd = app.add_subcommand("rate-fit", "Fit the log-log slope of gradient norm against T");
    add_common(rate_cmd, rate.common, false);
    rate_cmd->add_option("--metrics", rate.metrics, "Fit min-so-far ||grad||^2 from a metrics file")
        ->check(CLI::ExistingFile);
    rate_cmd->add_option("--horizons", rate.horizons, "Explicit horizons T (total local steps)")
        ->delimiter(',');
    rate_cmd->add_option("--min-horizon", rate.min_horizon, "Smallest T")->capture_default_str();
    rate_cmd->add_option("--max-horizon", rate.max_horizon, "Largest T")->capture_default_str();
    rate_cmd->add_option("--count", rate.count, "Log-spaced horizons")->capture_default_str();
    rate_cmd->add_option("--alpha1", rate.alpha1, "eta = T^-alpha1")->capture_default_str();
    rate_cmd->add_option("--alpha2", rate.alpha2, "b = b1 = scale * T^alpha2")->capture_default_str();
    rate_cmd->add_option("--batch-scale", rate.batch_scale, "Batch scale")->capture_default_str();
    rate_cmd->add_option("--seeds", rate.seeds, "Seeds averaged per horizon")->capture_default_str();
    rate_cmd->add_option("--max-slope", rate.max_slope, "Pass if slope <= this")->capture_default_str();
    rate_cmd->add_option("--tau", rate.tau, "tau used to convert rounds to T with --metrics")
        ->capture_default_str();

    DriftArgs drift;
    auto* drift_cmd = app.add_subcommand("drift-check", "Check local drift against tau^2 eta^2 G_g^2 G_f^2");
    add_common(drift_cmd, drift.common, false);
    drift_cmd->add_option("--metrics", drift.metrics, "Check a metrics file instead of running")
        ->check(CLI::ExistingFile);
    drift_cmd->add_option("--slack", drift.slack, "Relative slack on the bound")->capture_default_str();

    SweepArgs sweep;
    auto* sweep_cmd = app.add_subcommand("sweep", "Run one experiment per parameter value");
    add_common(sweep_cmd, sweep.common, true);
    sweep_cmd->add_option("--param", sweep.param, "Swept parameter")
        ->required()
        ->check(CLI::IsMember({"tau", "gamma", "rho"}));
    sweep_cmd->add_option("--values", sweep.values, "Comma-separated values")->required()->delimiter(',');
    sweep_cmd->add_option("--out-dir", sweep.out_dir, "Directory for per-value metrics and summary.csv")
        ->capture_default_str();
    sweep_cmd->add_option("--metric", sweep.metric, "Metric for --threshold")
        ->check(CLI::IsMember({"worst_loss", "mean_loss", "objective", "grad_norm"}))
        ->capture_default_str();
    sweep_cmd->add_option("--threshold", sweep.threshold, "Report the first round with metric <= threshold");
    sweep_cmd->add_flag("--parallel", sweep.parallel, "Run sweep entries concurrently");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_config;
    }

    try
    {
        if (*run_cmd) return cmd_run(run);
        if (*lemma_cmd) return cmd_verify_lemma1(lemma);
        if (*grad_cmd) return cmd_grad_check(grad);
        if (*rate_cmd) return cmd_rate_fit(rate);
        if (*drift_cmd) return cmd_drift_check(drift);
        if (*sweep_cmd) return cmd_sweep(sweep);
    }
    catch (const comfed::ConfigError& e)
    {
        spdlog::error("config error: {}", e.what());
        return exit_config;
    }
    catch (const comfed::ParameterError& e)
    {
        spdlog::error("config error: {}", e.what());
        return exit_config;
    }
    catch (const comfed::IoError& e)
    {
        spdlog::error("{}", e.what());
        return exit_config;
    }
    catch (const comfed::CheckpointMismatch& e)
    {
        spdlog::error("{}", e.what());
        return exit_config;
    }
    catch (const comfed::NumericalError& e)
    {
        spdlog::error("numerical failure: {}", e.what());
        return exit_divergence;
    }
    catch (const std::exception& e)
    {
        spdlog::error("{}", e.what());
        return exit_config;
    }
    return exit_ok;
}
