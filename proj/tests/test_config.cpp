#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "tunnelmpc/config.hpp"
#include "tunnelmpc/io.hpp"

using namespace tunnelmpc;

namespace {

std::string write_temp(const std::string& text) {
    const std::string path = "/tmp/tunnelmpc_test_config.json";
    std::ofstream os(path);
    os << text;
    return path;
}

}  // namespace

TEST_CASE("load_config: empty file yields the published defaults") {
    const std::string path = write_temp("{}");
    const ScenarioConfig c = load_config(path);
    CHECK(c.uav.mass == 1.5);
    CHECK(c.uav.arm_length == 0.20);
    CHECK(c.uav.prop_radius == 0.12);
    CHECK(c.uav.inertia_diag == Vec3(0.1, 0.1, 0.2));
    CHECK(c.uav.max_tilt == doctest::Approx(kPi / 10.0));
    CHECK(c.cbf.gamma == 3.0);
    CHECK(c.cbf.lambda == 8.0);
    CHECK(c.cbf.z_exp == 3);
    CHECK(c.mpc.t_s == 0.1);
    CHECK(c.mpc.w1.x() == 10.0);
    CHECK(c.mpc.ws1.x() == 50.0);
    CHECK(c.mpc.w2.x() == 2.0);
    CHECK(c.mpc.ws2.x() == 10.0);
    CHECK(c.total_time == 100.0);
    CHECK(c.wind_d_m == 0.8);
    std::remove(path.c_str());
}

TEST_CASE("load_config: file values override defaults") {
    const std::string path = write_temp(R"({"mpc": {"horizon": 20}})");
    const ScenarioConfig c = load_config(path);
    CHECK(c.mpc.horizon == 20);
    CHECK(c.mpc.t_s == 0.1);  // untouched default
    std::remove(path.c_str());
}

TEST_CASE("load_config: unknown keys are rejected with their path") {
    const std::string path = write_temp(R"({"aero": {"fudge": 1.0}})");
    CHECK_THROWS_WITH_AS(load_config(path), doctest::Contains("aero.fudge"), ConfigError);
    std::remove(path.c_str());
}

TEST_CASE("load_config: invariant violations name the offending key") {
    const std::string path = write_temp(R"({"uav": {"mass": -1.0}})");
    CHECK_THROWS_WITH_AS(load_config(path), doctest::Contains("uav.mass"), ConfigError);
    std::remove(path.c_str());
}

TEST_CASE("load_config: dotted overrides") {
    const ScenarioConfig c = load_config("", {{"mpc.horizon", "15"}, {"cbf.lambda", "2.5"}});
    CHECK(c.mpc.horizon == 15);
    CHECK(c.cbf.lambda == 2.5);
    CHECK_THROWS_WITH_AS(load_config("", {{"mpc.bogus", "1"}}),
                         doctest::Contains("mpc.bogus"), ConfigError);
}

TEST_CASE("config_hash: stable for equal configs, distinct otherwise") {
    Json a, b;
    load_config("", {{"seed", "1"}}, &a);
    load_config("", {{"seed", "1"}}, &b);
    CHECK(config_hash(a) == config_hash(b));
    Json c;
    load_config("", {{"seed", "2"}}, &c);
    CHECK(config_hash(a) != config_hash(c));
}

TEST_CASE("records CSV: exact round trip") {
    RandomStream rng(5);
    std::vector<StepRecord> records;
    for (int k = 0; k < 20; ++k) {
        StepRecord r;
        r.time = 0.1 * k;
        for (int i = 0; i < 3; ++i) {
            r.plant.position(i) = rng.normal();
            r.plant.velocity(i) = rng.normal();
            r.plant.attitude(i) = 0.1 * rng.normal();
            r.reference_position(i) = rng.normal();
            r.disturbance.force(i) = rng.normal();
        }
        r.input.accel = Vec3(rng.normal(), rng.normal(), rng.normal());
        r.input.yaw_accel = rng.normal();
        r.h_values = {rng.normal()};
        r.wall_distances = Vec4(rng.uniform01(), rng.uniform01(), rng.uniform01(),
                                rng.uniform01());
        r.solver_status = k % 3 == 0 ? StepSolverStatus::kOk
                          : k % 3 == 1 ? StepSolverStatus::kMaxIterations
                                       : StepSolverStatus::kFallback;
        records.push_back(r);
    }
    const std::string path = "/tmp/tunnelmpc_roundtrip.csv";
    write_records_csv(path, records);
    const auto parsed = read_records_csv(path);
    REQUIRE(parsed.size() == records.size());
    for (std::size_t k = 0; k < records.size(); ++k) {
        CHECK(parsed[k].time == records[k].time);
        CHECK(parsed[k].plant.position == records[k].plant.position);
        CHECK(parsed[k].plant.velocity == records[k].plant.velocity);
        CHECK(parsed[k].plant.attitude == records[k].plant.attitude);
        CHECK(parsed[k].input.as_vec4() == records[k].input.as_vec4());
        CHECK(parsed[k].reference_position == records[k].reference_position);
        CHECK(parsed[k].h_min() == records[k].h_min());
        CHECK(parsed[k].wall_distances == records[k].wall_distances);
        CHECK(parsed[k].disturbance.force == records[k].disturbance.force);
        CHECK(parsed[k].solver_status == records[k].solver_status);
    }
    std::remove(path.c_str());
}

TEST_CASE("metrics JSON carries every metric plus hash and seed") {
    RunMetrics m;
    m.tracking_rms = 0.25;
    m.control_effort = 12.0;
    m.control_smoothness = 3.0;
    m.min_wall_distance = Vec4(0.5, 1.5, 0.9, 1.1);
    m.boundary_violations = 2;
    m.collided = false;
    m.steps = 100;
    const auto j = metrics_to_json(m, 0xdeadbeefull, 42);
    CHECK(j.contains("T_e"));
    CHECK(j.contains("c_e"));
    CHECK(j.contains("c_s"));
    CHECK(j.contains("min_wall_distance"));
    CHECK(j.contains("boundary_violations"));
    CHECK(j.contains("collided"));
    CHECK(j.contains("config_hash"));
    CHECK(j.contains("seed"));
    CHECK(j["T_e"] == 0.25);
    CHECK(j["min_wall_distance"].size() == 4);
}

TEST_CASE("format_double: 17 significant digits round-trip exactly") {
    RandomStream rng(6);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.normal() * std::pow(10.0, rng.uniform(-8, 8));
        CHECK(parse_double(format_double(v)) == v);
    }
}
