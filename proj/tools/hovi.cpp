// hovi: run variational integrator experiments from JSON configs.
//
//   hovi run <config.json> [--out DIR] [--tol X] [--max-iter K]
//   hovi check <config.json> [--out DIR]
//
// Exit codes: 0 ok, 1 config error, 2 non-convergence or failed check,
// 3 regularity failure. HOVI_LOG sets the log level (trace..off).

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "experiment.hpp"

namespace fs = std::filesystem;
using namespace hovi;
using namespace hovi::cli;

namespace {

void setup_logging()
{
    auto logger = spdlog::stderr_color_mt("hovi");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::warn);
    if (const char* env = std::getenv("HOVI_LOG")) {
        const auto level = spdlog::level::from_str(env);
        // from_str maps unknown names to off
        if (level != spdlog::level::off || std::string(env) == "off") {
            spdlog::set_level(level);
        } else {
            spdlog::warn("ignoring unknown HOVI_LOG level '{}'", env);
        }
    }
}

fs::path output_dir(const ExperimentConfig& cfg, const std::string& flag)
{
    return flag.empty() ? fs::path(cfg.output_dir) : fs::path(flag);
}

int do_run(const std::string& config, const std::string& out_flag, std::optional<double> tol,
           std::optional<int> max_iter)
{
    ExperimentConfig cfg;
    try {
        cfg = load_config(config);
        if (tol) {
            if (!(*tol > 0.0)) {
                throw ConfigError("--tol must be positive");
            }
            cfg.solver.tol = *tol;
        }
        if (max_iter) {
            if (*max_iter < 0) {
                throw ConfigError("--max-iter must be non-negative");
            }
            cfg.solver.max_iter = *max_iter;
        }
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return ExitCode::config_error;
    }
    spdlog::info("running {} ({})", cfg.name, cfg.system);

    Outcome outcome;
    try {
        outcome = run_experiment(cfg);
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return ExitCode::config_error;
    } catch (const InvalidArgument& e) {
        spdlog::error("{}", e.what());
        return ExitCode::config_error;
    } catch (const RegularityError& e) {
        outcome.code = ExitCode::irregular;
        outcome.message = e.what();
        outcome.diagnostics = {{"name", cfg.name},
                               {"system", cfg.system},
                               {"converged", false},
                               {"error", e.what()},
                               {"condition_estimate", e.condition_estimate()}};
    } catch (const NumericError& e) {
        outcome.code = ExitCode::not_converged;
        outcome.message = e.what();
        outcome.diagnostics = {{"name", cfg.name}, {"system", cfg.system}, {"converged", false}, {"error", e.what()}};
    }

    const fs::path dir = output_dir(cfg, out_flag);
    try {
        fs::create_directories(dir);
        if (outcome.trajectory) {
            write_csv(csv_path(dir, cfg), *outcome.trajectory);
        }
        write_json(diagnostics_path(dir, cfg), outcome.diagnostics);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return ExitCode::config_error;
    }
    if (outcome.diagnostics.contains("solve")) {
        const auto& s = outcome.diagnostics["solve"];
        spdlog::debug("iterations {}, final residual {}", s["iterations"].get<int>(),
                      s["final_residual"].get<double>());
    }
    if (outcome.code != ExitCode::ok) {
        spdlog::error("{}", outcome.message);
    } else {
        spdlog::info("wrote {}", diagnostics_path(dir, cfg).string());
    }
    return outcome.code;
}

int do_check(const std::string& config, const std::string& out_flag)
{
    ExperimentConfig cfg;
    CheckOutcome outcome;
    try {
        cfg = load_config(config);
        outcome = check_experiment(cfg);
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return ExitCode::config_error;
    } catch (const InvalidArgument& e) {
        spdlog::error("{}", e.what());
        return ExitCode::config_error;
    }
    const fs::path dir = output_dir(cfg, out_flag);
    try {
        fs::create_directories(dir);
        write_json(check_path(dir, cfg), outcome.report);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return ExitCode::config_error;
    }
    for (const auto& item : outcome.report["checks"].items()) {
        spdlog::info("{:<32} {:>12.4e} < {:<10.1e} {}", item.key(), item.value()["value"].get<double>(),
                     item.value()["threshold"].get<double>(), item.value()["pass"].get<bool>() ? "pass" : "FAIL");
    }
    return outcome.code;
}

}  // namespace

int main(int argc, char** argv)
{
    setup_logging();
    CLI::App app{"Discrete variational integrators for higher-order constrained systems"};
    app.require_subcommand(1);

    std::string config;
    std::string out_dir;
    std::optional<double> tol;
    std::optional<int> max_iter;

    auto* run = app.add_subcommand("run", "solve and write trajectory CSV plus diagnostics JSON");
    run->add_option("config", config, "experiment config (JSON)")->required();
    run->add_option("--out", out_dir, "output directory (overrides output.dir)");
    run->add_option("--tol", tol, "Newton tolerance on the residual max-norm");
    run->add_option("--max-iter", max_iter, "Newton iteration limit");

    auto* check = app.add_subcommand("check", "run the invariant suite and write a pass/fail report");
    check->add_option("config", config, "experiment config (JSON)")->required();
    check->add_option("--out", out_dir, "output directory (overrides output.dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : ExitCode::config_error;
    }
    if (*run) {
        return do_run(config, out_dir, tol, max_iter);
    }
    return do_check(config, out_dir);
}
