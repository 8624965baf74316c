// Command-line front end: run scenarios, benchmark the controllers, dump
// aerodynamic force fields, and calibrate the disturbance-rejection margin.

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tunnelmpc/bench.hpp"
#include "tunnelmpc/config.hpp"
#include "tunnelmpc/invariance_harness.hpp"
#include "tunnelmpc/io.hpp"
#include "tunnelmpc/sim.hpp"

namespace fs = std::filesystem;
using namespace tunnelmpc;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitCollision = 3;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
};

std::vector<std::pair<std::string, std::string>> parse_overrides(
    const std::vector<std::string>& raw) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const std::string& s : raw) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
        }
        out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    return out;
}

fs::path resolve_out_dir(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("TUNNELMPC_OUT")) return env;
    return ".";
}

ScenarioConfig load_common(const CommonArgs& args, Json* merged) {
    ScenarioConfig cfg = load_config(args.config_path, parse_overrides(args.overrides),
                                     merged);
    if (args.seed_set) {
        cfg.seed = args.seed;
        if (merged) (*merged)["seed"] = args.seed;
    }
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Scenario config JSON");
    cmd->add_option("--set", args.overrides, "Override a config key (KEY=VALUE, dotted)");
    cmd->add_option("--seed", args.seed, "Run seed")->each([&](const std::string&) {
        args.seed_set = true;
    });
    cmd->add_option("--out", args.out_dir, "Output directory (or $TUNNELMPC_OUT)");
}

int cmd_run(const CommonArgs& args, bool use_preset) {
    Json merged;
    ScenarioConfig cfg = load_common(args, &merged);
    if (use_preset) {
        apply_benchmark_world(cfg);
        apply_case_preset(cfg, cfg.scenario, cfg.controller, cfg.trajectory.case2_wall);
    }
    const fs::path out = resolve_out_dir(args.out_dir);
    fs::create_directories(out);

    const RunResult res = run_scenario(cfg);
    write_records_csv((out / "records.csv").string(), res.records);
    write_json((out / "metrics.json").string(),
               metrics_to_json(res.metrics, config_hash(merged), cfg.seed));

    std::cout << "steps: " << res.metrics.steps << "\n"
              << "T_e:   " << res.metrics.tracking_rms << " m\n"
              << "c_e:   " << res.metrics.control_effort << "\n"
              << "c_s:   " << res.metrics.control_smoothness << "\n"
              << "boundary_violations: " << res.metrics.boundary_violations << "\n"
              << "collided: " << (res.metrics.collided ? "yes" : "no") << "\n";
    if (cfg.scenario == ScenarioCase::kMinStandoff) {
        std::cout << "min_stable_standoff: " << min_stable_standoff(res.records, cfg)
                  << " m\n";
    }
    return res.metrics.collided ? kExitCollision : 0;
}

int cmd_bench(const CommonArgs& args, int num_seeds, int jobs) {
    Json merged;
    ScenarioConfig base = load_common(args, &merged);
    apply_benchmark_world(base);
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < num_seeds; ++i) seeds.push_back(base.seed + i);

    const BenchReport report = benchmark_suite(base, seeds, jobs);
    const std::string table = render_bench_table(report);
    std::cout << table;

    const fs::path out = resolve_out_dir(args.out_dir);
    fs::create_directories(out);
    write_json((out / "bench.json").string(), bench_to_json(report));
    std::ofstream(out / "bench.txt") << table;
    return 0;
}

int cmd_field(const CommonArgs& args, int grid) {
    ScenarioConfig cfg = load_common(args, nullptr);
    const fs::path out = resolve_out_dir(args.out_dir);
    fs::create_directories(out);
    const fs::path path = out / "field.csv";
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string());
    os << "y,z,fx,fy,fz\n";
    const double hover = cfg.uav.hover_thrust();
    for (int i = 0; i <= grid; ++i) {
        for (int j = 0; j <= grid; ++j) {
            const double y = cfg.geometry.width * i / grid;
            const double z = cfg.geometry.height * j / grid;
            Vec3 f;
            try {
                f = mean_disturbance_force(y, z, cfg.geometry, cfg.uav, cfg.aero, hover);
            } catch (const SingularityError&) {
                f = Vec3::Constant(std::numeric_limits<double>::quiet_NaN());
            }
            os << format_double(y) << ',' << format_double(z) << ',' << format_double(f.x())
               << ',' << format_double(f.y()) << ',' << format_double(f.z()) << "\n";
        }
    }
    std::cout << "wrote " << path.string() << "\n";
    return 0;
}

int cmd_calibrate(const CommonArgs& args, double d_m, int episodes) {
    ScenarioConfig cfg = load_common(args, nullptr);
    HarnessConfig h;
    h.cbf = cfg.cbf;
    h.cbf.lambda = 0.0;
    h.d_m = d_m >= 0.0 ? d_m : cfg.wind_d_m;
    h.dt = cfg.mpc.t_s;

    const LambdaCalibration cal = calibrate_lambda(h, episodes, cfg.seed);
    for (const auto& probe : cal.trace) {
        std::cout << "lambda=" << probe.lambda << "  violations=" << probe.violations
                  << "  min_h=" << probe.min_h << "\n";
    }
    std::cout << "calibrated lambda: " << cal.lambda << "\n";

    const fs::path out = resolve_out_dir(args.out_dir);
    fs::create_directories(out);
    nlohmann::json j;
    j["d_m"] = h.d_m;
    j["episodes"] = episodes;
    j["lambda"] = cal.lambda;
    j["trace"] = nlohmann::json::array();
    for (const auto& probe : cal.trace) {
        j["trace"].push_back({{"lambda", probe.lambda},
                              {"violations", probe.violations},
                              {"min_h", probe.min_h}});
    }
    write_json((out / "calibration.json").string(), j);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tunnel-flight MPC/CBF simulator and benchmark"};
    app.require_subcommand(1);

    CommonArgs run_args, bench_args, field_args, cal_args;
    bool run_preset = false;
    int bench_seeds = 3, bench_jobs = 1, field_grid = 40, cal_episodes = 10000;
    double cal_dm = -1.0;

    CLI::App* run = app.add_subcommand("run", "Run one scenario; writes records.csv and metrics.json");
    add_common(run, run_args);
    run->add_flag("--preset", run_preset,
                  "Apply the benchmark world and per-case presets before running");

    CLI::App* bench = app.add_subcommand("bench", "Run the full controller benchmark grid");
    add_common(bench, bench_args);
    bench->add_option("--seeds", bench_seeds, "Number of seeds (base..base+n-1)");
    bench->add_option("--jobs", bench_jobs, "Parallel workers");

    CLI::App* field = app.add_subcommand("field", "Dump the mean disturbance force field to CSV");
    add_common(field, field_args);
    field->add_option("--grid", field_grid, "Grid resolution per axis");

    CLI::App* cal = app.add_subcommand(
        "calibrate-lambda", "Find the smallest violation-free disturbance margin");
    add_common(cal, cal_args);
    cal->add_option("--d-m", cal_dm, "Disturbance bound (default: wind.d_m)");
    cal->add_option("--episodes", cal_episodes, "Episodes per probe");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(run_args, run_preset);
        if (bench->parsed()) return cmd_bench(bench_args, bench_seeds, bench_jobs);
        if (field->parsed()) return cmd_field(field_args, field_grid);
        if (cal->parsed()) return cmd_calibrate(cal_args, cal_dm, cal_episodes);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitRuntime;
}
