#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <sstream>

#include "tunnelmpc/config.hpp"
#include "tunnelmpc/io.hpp"
#include "tunnelmpc/sim.hpp"

using namespace tunnelmpc;

namespace {

ScenarioConfig quiet_config(ScenarioCase sc, ControllerMode ctrl) {
    ScenarioConfig cfg;
    cfg.scenario = sc;
    cfg.controller = ctrl;
    cfg.mpc.scenario = sc;
    cfg.mpc.mode = ctrl;
    cfg.mpc.pos_min = Vec3::Zero();
    cfg.mpc.pos_max = Vec3(cfg.geometry.length, cfg.geometry.width, cfg.geometry.height);
    cfg.aero_enabled = false;
    cfg.wind_d_m = 0.0;
    cfg.total_time = 10.0;
    return cfg;
}

}  // namespace

TEST_CASE("reference: Case I starts on the tunnel centerline") {
    const TunnelGeometry geom{};
    const auto traj = ReferenceTrajectory::case1(geom, TrajectoryParams{}, 100.0);
    const Vec3 p0 = traj.position(0.0);
    CHECK(p0.y() == doctest::Approx(geom.width / 2.0).epsilon(1e-12));
    CHECK(p0.z() == doctest::Approx(geom.height / 2.0).epsilon(1e-12));
}

TEST_CASE("reference: Case II dwell schedule") {
    const TunnelGeometry geom{};
    TrajectoryParams p;
    p.case2_wall = TargetWall::kFloor;
    const auto traj = ReferenceTrajectory::case2(geom, p, 100.0);
    // floor(total_time / dwell) = 20 distinct commanded standoffs
    int changes = 0;
    double prev = traj.commanded_standoff(0.0);
    for (double t = 0.0; t < 100.0; t += 0.1) {
        const double c = traj.commanded_standoff(t);
        if (c != prev) {
            ++changes;
            prev = c;
        }
    }
    CHECK(changes == 19);  // 20 dwells
    CHECK(traj.commanded_standoff(0.0) == doctest::Approx(1.0));
    CHECK(traj.commanded_standoff(5.0) == doctest::Approx(0.95));
    CHECK(traj.commanded_standoff(99.9) == doctest::Approx(0.05));
    CHECK(traj.position(0.0).z() == doctest::Approx(1.0));
}

TEST_CASE("reference: Case III passes within two prop diameters of three walls") {
    const TunnelGeometry geom{};
    const UavParams uav{};
    const auto traj = ReferenceTrajectory::case3(geom, TrajectoryParams{}, 100.0);
    const double clearance = traj.min_wall_clearance(0.05);
    CHECK(clearance < 2.0 * 2.0 * uav.prop_radius);
    CHECK(clearance > 0.0);
}

TEST_CASE("reference: exiting the tunnel is a config error") {
    const TunnelGeometry geom{};
    TrajectoryParams p;
    p.weave_amp_y = 1.5;  // exceeds the half-width
    const auto traj = ReferenceTrajectory::case1(geom, p, 50.0);
    CHECK_THROWS_AS(traj.min_wall_clearance(0.1), ConfigError);
}

TEST_CASE("run_scenario: disturbance-free naive run tracks tightly") {
    ScenarioConfig cfg = quiet_config(ScenarioCase::kBoundRegion, ControllerMode::kNaive);
    cfg.trajectory.weave_amp_x = 0.0;  // static reference at the tunnel center
    cfg.trajectory.weave_amp_y = 0.0;
    cfg.trajectory.weave_amp_z = 0.0;
    const RunResult res = run_scenario(cfg);
    CHECK_FALSE(res.metrics.collided);
    CHECK(res.metrics.tracking_rms < 0.05);
    CHECK(res.metrics.boundary_violations == 0);
}

TEST_CASE("run_scenario: identical seeds give byte-identical records") {
    ScenarioConfig cfg = quiet_config(ScenarioCase::kBoundRegion, ControllerMode::kNaive);
    cfg.aero_enabled = true;
    cfg.wind_d_m = 0.8;
    cfg.total_time = 5.0;
    cfg.seed = 1234;
    const RunResult a = run_scenario(cfg);
    const RunResult b = run_scenario(cfg);
    std::ostringstream sa, sb;
    write_records_csv(sa, a.records);
    write_records_csv(sb, b.records);
    CHECK(sa.str() == sb.str());

    cfg.seed = 1235;
    const RunResult c = run_scenario(cfg);
    std::ostringstream sc;
    write_records_csv(sc, c.records);
    CHECK(sa.str() != sc.str());
}

TEST_CASE("run_scenario: wall distances sum to the tunnel dimensions") {
    ScenarioConfig cfg = quiet_config(ScenarioCase::kBoundRegion, ControllerMode::kNaive);
    cfg.aero_enabled = true;
    cfg.wind_d_m = 0.8;
    cfg.total_time = 5.0;
    const RunResult res = run_scenario(cfg);
    for (const auto& r : res.records) {
        CHECK(r.wall_distances(0) + r.wall_distances(1) ==
              doctest::Approx(cfg.geometry.height).epsilon(1e-9));
        CHECK(r.wall_distances(2) + r.wall_distances(3) ==
              doctest::Approx(cfg.geometry.width).epsilon(1e-9));
    }
}

TEST_CASE("run_scenario: strong ceiling pull collides a naive approach") {
    ScenarioConfig cfg = quiet_config(ScenarioCase::kMinStandoff, ControllerMode::kNaive);
    apply_benchmark_world(cfg);
    cfg.aero_enabled = true;
    cfg.wind_d_m = 0.8;
    cfg.trajectory.case2_wall = TargetWall::kCeiling;
    cfg.trajectory.case2_start = 0.35;
    cfg.trajectory.case2_dwell = 2.0;
    cfg.total_time = 16.0;
    cfg.seed = 7;
    const RunResult res = run_scenario(cfg);
    CHECK(res.metrics.collided);
    // collided implies some wall distance reached the collision threshold
    CHECK(res.metrics.min_wall_distance.minCoeff() <= cfg.collision_distance() + 1e-12);
    // early stop: fewer records than a full run would have
    CHECK(res.metrics.steps < 161);
}

TEST_CASE("compute_metrics: spec examples") {
    ScenarioConfig cfg = quiet_config(ScenarioCase::kBoundRegion, ControllerMode::kNaive);
    std::vector<StepRecord> records(4);
    for (std::size_t k = 0; k < records.size(); ++k) {
        records[k].time = 0.1 * k;
        records[k].plant.position = Vec3(0.5, 0.0, 0.0);  // constant 0.5 m error
        records[k].reference_position = Vec3::Zero();
        records[k].wall_distances = Vec4(1, 1, 1, 1);
    }
    RunMetrics m = compute_metrics(records, cfg, false);
    CHECK(m.tracking_rms == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(m.control_effort == 0.0);
    CHECK(m.control_smoothness == 0.0);

    records.resize(2);
    records[0].input.accel = Vec3(1, 0, 0);
    records[1].input.accel = Vec3(0, 1, 0);
    m = compute_metrics(records, cfg, false);
    CHECK(m.control_effort == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(m.control_smoothness == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("metrics recompute from serialized records match the in-run metrics") {
    ScenarioConfig cfg = quiet_config(ScenarioCase::kBoundRegion, ControllerMode::kCbf);
    cfg.aero_enabled = true;
    cfg.wind_d_m = 0.8;
    cfg.total_time = 5.0;
    cfg.cbf.lambda = 1.0;
    const RunResult res = run_scenario(cfg);

    const std::string path = "/tmp/tunnelmpc_test_records.csv";
    write_records_csv(path, res.records);
    const auto parsed = read_records_csv(path);
    REQUIRE(parsed.size() == res.records.size());
    const RunMetrics again = compute_metrics(parsed, cfg, res.metrics.collided);
    CHECK(std::fabs(again.tracking_rms - res.metrics.tracking_rms) < 1e-12);
    CHECK(std::fabs(again.control_effort - res.metrics.control_effort) < 1e-12);
    CHECK(std::fabs(again.control_smoothness - res.metrics.control_smoothness) < 1e-12);
    CHECK(again.boundary_violations == res.metrics.boundary_violations);
    CHECK((again.min_wall_distance - res.metrics.min_wall_distance).cwiseAbs().maxCoeff() <
          1e-12);
    std::remove(path.c_str());
}

TEST_CASE("analyze_dwells: stable far dwell, protocol stops at instability") {
    ScenarioConfig cfg = quiet_config(ScenarioCase::kMinStandoff, ControllerMode::kNaive);
    apply_benchmark_world(cfg);
    cfg.aero_enabled = true;
    cfg.wind_d_m = 0.8;
    cfg.trajectory.case2_wall = TargetWall::kCeiling;
    cfg.trajectory.case2_start = 1.0;
    cfg.trajectory.case2_dwell = 5.0;
    cfg.total_time = 100.0;
    cfg.seed = 3;
    const RunResult res = run_scenario(cfg);
    const auto dwells = analyze_dwells(res.records, cfg);
    REQUIRE_FALSE(dwells.empty());
    CHECK(dwells.front().commanded == doctest::Approx(1.0));
    CHECK(dwells.front().stable);
    // the naive controller must break down before the deepest command
    CHECK(dwells.size() < 20);
    const double standoff = min_stable_standoff(res.records, cfg);
    CHECK(standoff > cfg.collision_distance());
    CHECK(standoff < 1.0);
}
