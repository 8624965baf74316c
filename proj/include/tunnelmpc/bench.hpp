#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tunnelmpc/config.hpp"
#include "tunnelmpc/sim.hpp"

namespace tunnelmpc {

struct BenchRun {
    ScenarioCase scenario = ScenarioCase::kBoundRegion;
    ControllerMode controller = ControllerMode::kNaive;
    TargetWall wall = TargetWall::kFloor;  // Case II only
    std::uint64_t seed = 0;
    RunMetrics metrics;
    double min_stable = 0.0;  // Case II only
};

struct BenchReport {
    std::vector<BenchRun> runs;

    std::vector<const BenchRun*> select(ScenarioCase sc, ControllerMode ctrl) const {
        std::vector<const BenchRun*> out;
        for (const auto& r : runs) {
            if (r.scenario == sc && r.controller == ctrl) out.push_back(&r);
        }
        return out;
    }

    std::vector<const BenchRun*> select(ScenarioCase sc, ControllerMode ctrl,
                                        TargetWall wall) const {
        std::vector<const BenchRun*> out;
        for (const auto& r : runs) {
            if (r.scenario == sc && r.controller == ctrl && r.wall == wall) {
                out.push_back(&r);
            }
        }
        return out;
    }
};

namespace detail {

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
    int n = 0;
};

template <typename Range, typename F>
MeanStd mean_std(const Range& runs, F&& value) {
    MeanStd ms;
    for (const auto* r : runs) {
        ms.mean += value(*r);
        ++ms.n;
    }
    if (ms.n == 0) return ms;
    ms.mean /= ms.n;
    for (const auto* r : runs) {
        const double d = value(*r) - ms.mean;
        ms.std += d * d;
    }
    ms.std = std::sqrt(ms.std / ms.n);
    return ms;
}

}  // namespace detail

/// Scenario of one benchmark cell: base world + case preset + seed.
inline ScenarioConfig bench_scenario(const ScenarioConfig& base, ScenarioCase sc,
                                     ControllerMode ctrl, TargetWall wall,
                                     std::uint64_t seed) {
    ScenarioConfig cfg = base;
    apply_case_preset(cfg, sc, ctrl, wall);
    cfg.seed = seed;
    return cfg;
}

/// Runs all three controllers over all three cases (Case II once per wall of
/// interest) for every seed; runs execute in parallel across `jobs` threads.
/// Each run derives its own random streams, so the report is independent of
/// scheduling order.
inline BenchReport benchmark_suite(const ScenarioConfig& base,
                                   const std::vector<std::uint64_t>& seeds,
                                   int jobs = 1) {
    static constexpr ControllerMode kControllers[] = {
        ControllerMode::kNaive, ControllerMode::kHardConstraint, ControllerMode::kCbf};
    static constexpr TargetWall kCase2Walls[] = {TargetWall::kFloor, TargetWall::kCeiling,
                                                 TargetWall::kLeft};

    BenchReport report;
    for (const std::uint64_t seed : seeds) {
        for (const ControllerMode ctrl : kControllers) {
            report.runs.push_back({ScenarioCase::kBoundRegion, ctrl, TargetWall::kFloor,
                                   seed, RunMetrics{}, 0.0});
            for (const TargetWall wall : kCase2Walls) {
                report.runs.push_back(
                    {ScenarioCase::kMinStandoff, ctrl, wall, seed, RunMetrics{}, 0.0});
            }
            report.runs.push_back({ScenarioCase::kCloseProximity, ctrl,
                                   TargetWall::kFloor, seed, RunMetrics{}, 0.0});
        }
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= report.runs.size()) return;
            BenchRun& run = report.runs[i];
            const ScenarioConfig cfg =
                bench_scenario(base, run.scenario, run.controller, run.wall, run.seed);
            const RunResult res = run_scenario(cfg);
            run.metrics = res.metrics;
            if (run.scenario == ScenarioCase::kMinStandoff) {
                run.min_stable = min_stable_standoff(res.records, cfg);
            }
        }
    };

    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return report;
}

inline std::string render_bench_table(const BenchReport& report) {
    static constexpr ControllerMode kControllers[] = {
        ControllerMode::kNaive, ControllerMode::kHardConstraint, ControllerMode::kCbf};
    char buf[256];
    std::string out;
    auto row = [&](const char* label, auto&& cell) {
        std::snprintf(buf, sizeof(buf), "%-38s", label);
        out += buf;
        for (const ControllerMode c : kControllers) {
            out += cell(c);
        }
        out += "\n";
    };
    auto fmt_ms = [&](detail::MeanStd ms, const char* unit = "") {
        char b[64];
        std::snprintf(b, sizeof(b), "  %10.4f +- %-8.4f%-4s", ms.mean, ms.std, unit);
        return std::string(b);
    };

    out += "benchmark                                  naive                      "
           "hc                         cbf\n";
    out += std::string(118, '-') + "\n";

    row("Case I: boundary violations / run", [&](ControllerMode c) {
        const auto runs = report.select(ScenarioCase::kBoundRegion, c);
        return fmt_ms(detail::mean_std(
            runs, [](const BenchRun& r) { return double(r.metrics.boundary_violations); }));
    });
    row("Case I: runs with zero violations", [&](ControllerMode c) {
        const auto runs = report.select(ScenarioCase::kBoundRegion, c);
        int ok = 0;
        for (const auto* r : runs) ok += r->metrics.boundary_violations == 0 ? 1 : 0;
        char b[64];
        std::snprintf(b, sizeof(b), "  %10d / %-12zu", ok, runs.size());
        return std::string(b);
    });
    row("Case I: T_e (m)", [&](ControllerMode c) {
        return fmt_ms(detail::mean_std(report.select(ScenarioCase::kBoundRegion, c),
                                       [](const BenchRun& r) { return r.metrics.tracking_rms; }));
    });
    row("Case I: c_e per step", [&](ControllerMode c) {
        return fmt_ms(detail::mean_std(report.select(ScenarioCase::kBoundRegion, c),
                                       [](const BenchRun& r) {
                                           return r.metrics.control_effort /
                                                  std::max(1, r.metrics.steps);
                                       }));
    });
    row("Case I: c_s per step", [&](ControllerMode c) {
        return fmt_ms(detail::mean_std(report.select(ScenarioCase::kBoundRegion, c),
                                       [](const BenchRun& r) {
                                           return r.metrics.control_smoothness /
                                                  std::max(1, r.metrics.steps);
                                       }));
    });

    static constexpr TargetWall kWalls[] = {TargetWall::kFloor, TargetWall::kCeiling,
                                            TargetWall::kLeft};
    static constexpr const char* kWallLabels[] = {
        "Case II: ground standoff (m)", "Case II: ceiling standoff (m)",
        "Case II: sidewall standoff (m)"};
    for (int w = 0; w < 3; ++w) {
        row(kWallLabels[w], [&](ControllerMode c) {
            return fmt_ms(detail::mean_std(
                report.select(ScenarioCase::kMinStandoff, c, kWalls[w]),
                [](const BenchRun& r) { return r.min_stable; }));
        });
    }

    row("Case III: collisions", [&](ControllerMode c) {
        const auto runs = report.select(ScenarioCase::kCloseProximity, c);
        int collided = 0;
        for (const auto* r : runs) collided += r->metrics.collided ? 1 : 0;
        char b[64];
        std::snprintf(b, sizeof(b), "  %10d / %-12zu", collided, runs.size());
        return std::string(b);
    });
    row("Case III: T_e (m)", [&](ControllerMode c) {
        return fmt_ms(detail::mean_std(report.select(ScenarioCase::kCloseProximity, c),
                                       [](const BenchRun& r) { return r.metrics.tracking_rms; }));
    });
    row("Case III: c_e per step", [&](ControllerMode c) {
        return fmt_ms(detail::mean_std(report.select(ScenarioCase::kCloseProximity, c),
                                       [](const BenchRun& r) {
                                           return r.metrics.control_effort /
                                                  std::max(1, r.metrics.steps);
                                       }));
    });
    row("Case III: c_s per step", [&](ControllerMode c) {
        return fmt_ms(detail::mean_std(report.select(ScenarioCase::kCloseProximity, c),
                                       [](const BenchRun& r) {
                                           return r.metrics.control_smoothness /
                                                  std::max(1, r.metrics.steps);
                                       }));
    });
    return out;
}

inline nlohmann::json bench_to_json(const BenchReport& report) {
    nlohmann::json j = nlohmann::json::array();
    for (const BenchRun& r : report.runs) {
        nlohmann::json e;
        e["scenario"] = to_string(r.scenario);
        e["controller"] = to_string(r.controller);
        if (r.scenario == ScenarioCase::kMinStandoff) {
            e["wall"] = to_string(r.wall);
            e["min_stable_standoff"] = r.min_stable;
        }
        e["seed"] = r.seed;
        e["T_e"] = r.metrics.tracking_rms;
        e["c_e"] = r.metrics.control_effort;
        e["c_s"] = r.metrics.control_smoothness;
        e["steps"] = r.metrics.steps;
        e["boundary_violations"] = r.metrics.boundary_violations;
        e["collided"] = r.metrics.collided;
        e["min_wall_distance"] = {r.metrics.min_wall_distance(0),
                                  r.metrics.min_wall_distance(1),
                                  r.metrics.min_wall_distance(2),
                                  r.metrics.min_wall_distance(3)};
        j.push_back(e);
    }
    return j;
}

}  // namespace tunnelmpc
