#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tunnelmpc/errors.hpp"
#include "tunnelmpc/sim.hpp"

namespace tunnelmpc {

using Json = nlohmann::json;

inline ControllerMode parse_controller(const std::string& s, const std::string& path) {
    if (s == "naive") return ControllerMode::kNaive;
    if (s == "hc") return ControllerMode::kHardConstraint;
    if (s == "cbf") return ControllerMode::kCbf;
    throw ConfigError(path + ": unknown controller '" + s + "' (naive|hc|cbf)");
}

inline ScenarioCase parse_scenario(const std::string& s, const std::string& path) {
    if (s == "bound_region") return ScenarioCase::kBoundRegion;
    if (s == "min_standoff") return ScenarioCase::kMinStandoff;
    if (s == "close_proximity") return ScenarioCase::kCloseProximity;
    throw ConfigError(path + ": unknown scenario '" + s +
                      "' (bound_region|min_standoff|close_proximity)");
}

inline TargetWall parse_wall(const std::string& s, const std::string& path) {
    if (s == "floor") return TargetWall::kFloor;
    if (s == "ceiling") return TargetWall::kCeiling;
    if (s == "left") return TargetWall::kLeft;
    if (s == "right") return TargetWall::kRight;
    throw ConfigError(path + ": unknown wall '" + s + "' (floor|ceiling|left|right)");
}

inline Json config_to_json(const ScenarioConfig& c) {
    Json j;
    j["scenario"] = to_string(c.scenario);
    j["controller"] = to_string(c.controller);
    j["seed"] = c.seed;
    j["total_time"] = c.total_time;
    j["inner_substeps"] = c.inner_substeps;
    j["aero_enabled"] = c.aero_enabled;
    j["wind"] = {{"d_m", c.wind_d_m}, {"hold_s", c.wind_hold_s}};
    j["uav"] = {{"mass", c.uav.mass},
                {"inertia", {c.uav.inertia_diag.x(), c.uav.inertia_diag.y(), c.uav.inertia_diag.z()}},
                {"arm_length", c.uav.arm_length},
                {"prop_radius", c.uav.prop_radius},
                {"max_tilt", c.uav.max_tilt},
                {"gravity", c.uav.gravity}};
    j["pid"] = {{"kp", {c.pid.kp.x(), c.pid.kp.y(), c.pid.kp.z()}},
                {"ki", {c.pid.ki.x(), c.pid.ki.y(), c.pid.ki.z()}},
                {"kd", {c.pid.kd.x(), c.pid.kd.y(), c.pid.kd.z()}},
                {"torque_limit",
                 {c.pid.torque_limit.x(), c.pid.torque_limit.y(), c.pid.torque_limit.z()}},
                {"kp_t", c.pid.kp_t},
                {"ki_t", c.pid.ki_t},
                {"kd_t", c.pid.kd_t},
                {"integrator_limit", c.pid.integrator_limit}};
    j["tunnel"] = {{"width", c.geometry.width},
                   {"height", c.geometry.height},
                   {"length", c.geometry.length}};
    j["mpc"] = {{"horizon", c.mpc.horizon},
                {"t_s", c.mpc.t_s},
                {"w1", c.mpc.w1.x()},
                {"ws1", c.mpc.ws1.x()},
                {"w2", c.mpc.w2.x()},
                {"ws2", c.mpc.ws2.x()},
                {"vel_limit", c.mpc.vel_max.x()},
                {"yaw_rate_limit", c.mpc.yaw_rate_max},
                {"accel_limit", c.mpc.u_max.x()},
                {"yaw_accel_limit", c.mpc.yaw_accel_max},
                {"max_iter", c.mpc.solver.max_iter},
                {"tol_opt", c.mpc.solver.tol_opt},
                {"tol_feas", c.mpc.solver.tol_feas}};
    j["cbf"] = {{"a_max", c.cbf.a_max}, {"gamma", c.cbf.gamma}, {"z_exp", c.cbf.z_exp},
                {"lambda", c.cbf.lambda}, {"d_s", c.cbf.d_s}, {"r", c.cbf.r}};
    j["aero"] = {{"ground", c.aero.ground},
                 {"ceiling", c.aero.ceiling},
                 {"sidewall", c.aero.sidewall},
                 {"ceiling_a1", c.aero.ceiling_coeffs.a1},
                 {"ceiling_a2", c.aero.ceiling_coeffs.a2},
                 {"sidewall_mean_xy", c.aero.sidewall_params.mean_xy},
                 {"sidewall_std_xy", c.aero.sidewall_params.std_xy},
                 {"sidewall_mean_z", c.aero.sidewall_params.mean_z},
                 {"sidewall_std_z", c.aero.sidewall_params.std_z},
                 {"sidewall_cutoff_mult", c.aero.sidewall_params.cutoff_mult},
                 {"sidewall_hold_s", c.aero.sidewall_params.hold_s},
                 {"corner_gain", c.aero.corner_gain},
                 {"torque_noise_gain", c.aero.torque_noise_gain},
                 {"asymmetry_fraction", c.aero.asymmetry_fraction}};
    j["trajectory"] = {{"weave_amp_x", c.trajectory.weave_amp_x},
                       {"weave_period_x", c.trajectory.weave_period_x},
                       {"weave_amp_y", c.trajectory.weave_amp_y},
                       {"weave_period_y", c.trajectory.weave_period_y},
                       {"weave_amp_z", c.trajectory.weave_amp_z},
                       {"weave_period_z", c.trajectory.weave_period_z},
                       {"case2_wall", to_string(c.trajectory.case2_wall)},
                       {"case2_start", c.trajectory.case2_start},
                       {"case2_step", c.trajectory.case2_step},
                       {"case2_dwell", c.trajectory.case2_dwell},
                       {"case2_min", c.trajectory.case2_min},
                       {"case2_line_offset", c.trajectory.case2_line_offset},
                       {"case3_ground", c.trajectory.case3_ground},
                       {"case3_side", c.trajectory.case3_side},
                       {"case3_ceiling", c.trajectory.case3_ceiling}};
    return j;
}

namespace detail {

inline void merge_into(Json& base, const Json& patch, const std::string& path) {
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string child = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) {
            throw ConfigError("unknown key: " + child);
        }
        if (base[it.key()].is_object() && it.value().is_object()) {
            merge_into(base[it.key()], it.value(), child);
        } else if (base[it.key()].is_object() != it.value().is_object()) {
            throw ConfigError(child + ": type mismatch");
        } else {
            base[it.key()] = it.value();
        }
    }
}

inline void apply_override(Json& base, const std::string& key, const std::string& value) {
    Json* node = &base;
    std::string path;
    std::stringstream ss(key);
    std::string seg;
    std::vector<std::string> segs;
    while (std::getline(ss, seg, '.')) segs.push_back(seg);
    if (segs.empty()) throw ConfigError("override: empty key");
    for (std::size_t i = 0; i + 1 < segs.size(); ++i) {
        path = path.empty() ? segs[i] : path + "." + segs[i];
        if (!node->contains(segs[i]) || !(*node)[segs[i]].is_object()) {
            throw ConfigError("unknown key: " + path);
        }
        node = &(*node)[segs[i]];
    }
    path = path.empty() ? segs.back() : path + "." + segs.back();
    if (!node->contains(segs.back())) {
        throw ConfigError("unknown key: " + path);
    }
    Json parsed = Json::parse(value, nullptr, false);
    (*node)[segs.back()] = parsed.is_discarded() ? Json(value) : parsed;
}

template <typename T>
T get_as(const Json& j, const std::string& path) {
    try {
        return j.get<T>();
    } catch (const Json::exception&) {
        throw ConfigError(path + ": invalid value type");
    }
}

inline Vec3 get_vec3(const Json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3) {
        throw ConfigError(path + ": expected an array of 3 numbers");
    }
    return Vec3(get_as<double>(j[0], path), get_as<double>(j[1], path),
                get_as<double>(j[2], path));
}

}  // namespace detail

inline ScenarioConfig config_from_json(const Json& j) {
    using detail::get_as;
    using detail::get_vec3;
    ScenarioConfig c;
    c.scenario = parse_scenario(get_as<std::string>(j.at("scenario"), "scenario"), "scenario");
    c.controller =
        parse_controller(get_as<std::string>(j.at("controller"), "controller"), "controller");
    c.seed = get_as<std::uint64_t>(j.at("seed"), "seed");
    c.total_time = get_as<double>(j.at("total_time"), "total_time");
    c.inner_substeps = get_as<int>(j.at("inner_substeps"), "inner_substeps");
    c.aero_enabled = get_as<bool>(j.at("aero_enabled"), "aero_enabled");
    c.wind_d_m = get_as<double>(j.at("wind").at("d_m"), "wind.d_m");
    c.wind_hold_s = get_as<double>(j.at("wind").at("hold_s"), "wind.hold_s");

    const Json& u = j.at("uav");
    c.uav.mass = get_as<double>(u.at("mass"), "uav.mass");
    c.uav.inertia_diag = get_vec3(u.at("inertia"), "uav.inertia");
    c.uav.arm_length = get_as<double>(u.at("arm_length"), "uav.arm_length");
    c.uav.prop_radius = get_as<double>(u.at("prop_radius"), "uav.prop_radius");
    c.uav.max_tilt = get_as<double>(u.at("max_tilt"), "uav.max_tilt");
    c.uav.gravity = get_as<double>(u.at("gravity"), "uav.gravity");

    const Json& p = j.at("pid");
    c.pid.kp = get_vec3(p.at("kp"), "pid.kp");
    c.pid.ki = get_vec3(p.at("ki"), "pid.ki");
    c.pid.kd = get_vec3(p.at("kd"), "pid.kd");
    c.pid.torque_limit = get_vec3(p.at("torque_limit"), "pid.torque_limit");
    c.pid.kp_t = get_as<double>(p.at("kp_t"), "pid.kp_t");
    c.pid.ki_t = get_as<double>(p.at("ki_t"), "pid.ki_t");
    c.pid.kd_t = get_as<double>(p.at("kd_t"), "pid.kd_t");
    c.pid.integrator_limit = get_as<double>(p.at("integrator_limit"), "pid.integrator_limit");

    const Json& t = j.at("tunnel");
    c.geometry.width = get_as<double>(t.at("width"), "tunnel.width");
    c.geometry.height = get_as<double>(t.at("height"), "tunnel.height");
    c.geometry.length = get_as<double>(t.at("length"), "tunnel.length");

    const Json& m = j.at("mpc");
    c.mpc.horizon = get_as<int>(m.at("horizon"), "mpc.horizon");
    c.mpc.t_s = get_as<double>(m.at("t_s"), "mpc.t_s");
    c.mpc.w1 = Vec3::Constant(get_as<double>(m.at("w1"), "mpc.w1"));
    c.mpc.ws1 = Vec3::Constant(get_as<double>(m.at("ws1"), "mpc.ws1"));
    c.mpc.w2 = Vec3::Constant(get_as<double>(m.at("w2"), "mpc.w2"));
    c.mpc.ws2 = Vec3::Constant(get_as<double>(m.at("ws2"), "mpc.ws2"));
    const double vel = get_as<double>(m.at("vel_limit"), "mpc.vel_limit");
    c.mpc.vel_min = Vec3::Constant(-vel);
    c.mpc.vel_max = Vec3::Constant(vel);
    c.mpc.yaw_rate_max = get_as<double>(m.at("yaw_rate_limit"), "mpc.yaw_rate_limit");
    c.mpc.yaw_rate_min = -c.mpc.yaw_rate_max;
    const double acc = get_as<double>(m.at("accel_limit"), "mpc.accel_limit");
    c.mpc.u_min = Vec3::Constant(-acc);
    c.mpc.u_max = Vec3::Constant(acc);
    c.mpc.yaw_accel_max = get_as<double>(m.at("yaw_accel_limit"), "mpc.yaw_accel_limit");
    c.mpc.yaw_accel_min = -c.mpc.yaw_accel_max;
    c.mpc.solver.max_iter = get_as<int>(m.at("max_iter"), "mpc.max_iter");
    c.mpc.solver.tol_opt = get_as<double>(m.at("tol_opt"), "mpc.tol_opt");
    c.mpc.solver.tol_feas = get_as<double>(m.at("tol_feas"), "mpc.tol_feas");
    c.mpc.mode = c.controller;
    c.mpc.scenario = c.scenario;
    // predicted positions stay inside the tunnel box
    c.mpc.pos_min = Vec3::Zero();
    c.mpc.pos_max = Vec3(c.geometry.length, c.geometry.width, c.geometry.height);

    const Json& b = j.at("cbf");
    c.cbf.a_max = get_as<double>(b.at("a_max"), "cbf.a_max");
    c.cbf.gamma = get_as<double>(b.at("gamma"), "cbf.gamma");
    c.cbf.z_exp = get_as<int>(b.at("z_exp"), "cbf.z_exp");
    c.cbf.lambda = get_as<double>(b.at("lambda"), "cbf.lambda");
    c.cbf.d_s = get_as<double>(b.at("d_s"), "cbf.d_s");
    c.cbf.r = get_as<double>(b.at("r"), "cbf.r");

    const Json& a = j.at("aero");
    c.aero.ground = get_as<bool>(a.at("ground"), "aero.ground");
    c.aero.ceiling = get_as<bool>(a.at("ceiling"), "aero.ceiling");
    c.aero.sidewall = get_as<bool>(a.at("sidewall"), "aero.sidewall");
    c.aero.ceiling_coeffs.a1 = get_as<double>(a.at("ceiling_a1"), "aero.ceiling_a1");
    c.aero.ceiling_coeffs.a2 = get_as<double>(a.at("ceiling_a2"), "aero.ceiling_a2");
    c.aero.sidewall_params.mean_xy =
        get_as<double>(a.at("sidewall_mean_xy"), "aero.sidewall_mean_xy");
    c.aero.sidewall_params.std_xy =
        get_as<double>(a.at("sidewall_std_xy"), "aero.sidewall_std_xy");
    c.aero.sidewall_params.mean_z =
        get_as<double>(a.at("sidewall_mean_z"), "aero.sidewall_mean_z");
    c.aero.sidewall_params.std_z =
        get_as<double>(a.at("sidewall_std_z"), "aero.sidewall_std_z");
    c.aero.sidewall_params.cutoff_mult =
        get_as<double>(a.at("sidewall_cutoff_mult"), "aero.sidewall_cutoff_mult");
    c.aero.sidewall_params.hold_s =
        get_as<double>(a.at("sidewall_hold_s"), "aero.sidewall_hold_s");
    c.aero.corner_gain = get_as<double>(a.at("corner_gain"), "aero.corner_gain");
    c.aero.torque_noise_gain =
        get_as<double>(a.at("torque_noise_gain"), "aero.torque_noise_gain");
    c.aero.asymmetry_fraction =
        get_as<double>(a.at("asymmetry_fraction"), "aero.asymmetry_fraction");

    const Json& tr = j.at("trajectory");
    c.trajectory.weave_amp_x = get_as<double>(tr.at("weave_amp_x"), "trajectory.weave_amp_x");
    c.trajectory.weave_period_x =
        get_as<double>(tr.at("weave_period_x"), "trajectory.weave_period_x");
    c.trajectory.weave_amp_y = get_as<double>(tr.at("weave_amp_y"), "trajectory.weave_amp_y");
    c.trajectory.weave_period_y =
        get_as<double>(tr.at("weave_period_y"), "trajectory.weave_period_y");
    c.trajectory.weave_amp_z = get_as<double>(tr.at("weave_amp_z"), "trajectory.weave_amp_z");
    c.trajectory.weave_period_z =
        get_as<double>(tr.at("weave_period_z"), "trajectory.weave_period_z");
    c.trajectory.case2_wall =
        parse_wall(get_as<std::string>(tr.at("case2_wall"), "trajectory.case2_wall"),
                   "trajectory.case2_wall");
    c.trajectory.case2_start = get_as<double>(tr.at("case2_start"), "trajectory.case2_start");
    c.trajectory.case2_step = get_as<double>(tr.at("case2_step"), "trajectory.case2_step");
    c.trajectory.case2_dwell = get_as<double>(tr.at("case2_dwell"), "trajectory.case2_dwell");
    c.trajectory.case2_min = get_as<double>(tr.at("case2_min"), "trajectory.case2_min");
    c.trajectory.case2_line_offset =
        get_as<double>(tr.at("case2_line_offset"), "trajectory.case2_line_offset");
    c.trajectory.case3_ground =
        get_as<double>(tr.at("case3_ground"), "trajectory.case3_ground");
    c.trajectory.case3_side = get_as<double>(tr.at("case3_side"), "trajectory.case3_side");
    c.trajectory.case3_ceiling =
        get_as<double>(tr.at("case3_ceiling"), "trajectory.case3_ceiling");
    return c;
}

/// Invariant checks with key-path-qualified messages.
inline void validate_config(const ScenarioConfig& c) {
    auto require = [](bool ok, const char* msg) {
        if (!ok) throw ConfigError(msg);
    };
    require(c.uav.mass > 0.0, "uav.mass: must be > 0");
    require((c.uav.inertia_diag.array() > 0.0).all(), "uav.inertia: components must be > 0");
    require(c.uav.prop_radius > 0.0, "uav.prop_radius: must be > 0");
    require(c.uav.max_tilt > 0.0 && c.uav.max_tilt < kPi / 2.0,
            "uav.max_tilt: must be in (0, pi/2)");
    require(c.uav.arm_length > 0.0, "uav.arm_length: must be > 0");
    require(c.uav.gravity > 0.0, "uav.gravity: must be > 0");
    require(c.pid.valid(), "pid: gains must be >= 0 and integrator_limit > 0");
    require(c.geometry.valid(), "tunnel: width, height, length must be > 0");
    require(c.mpc.horizon >= 1, "mpc.horizon: must be >= 1");
    require(c.mpc.t_s > 0.0, "mpc.t_s: must be > 0");
    require(c.mpc.valid(), "mpc: inconsistent weights or bounds");
    require(c.cbf.a_max > 0.0, "cbf.a_max: must be > 0");
    require(c.cbf.gamma > 0.0, "cbf.gamma: must be > 0");
    require(c.cbf.z_exp >= 1 && c.cbf.z_exp % 2 == 1,
            "cbf.z_exp: must be an odd positive integer");
    require(c.cbf.lambda >= 0.0, "cbf.lambda: must be >= 0");
    require(c.cbf.d_s >= 0.0, "cbf.d_s: must be >= 0");
    require(c.cbf.r > 0.0, "cbf.r: must be > 0");
    require(c.aero.ceiling_coeffs.valid(), "aero.ceiling_a1/a2: a1 > 0 and a2 >= 0");
    require(c.aero.sidewall_params.valid(),
            "aero.sidewall_*: stds >= 0, cutoff_mult > 0, hold_s >= 0");
    require(c.aero.corner_gain > 0.0, "aero.corner_gain: must be > 0");
    require(c.aero.torque_noise_gain >= 0.0, "aero.torque_noise_gain: must be >= 0");
    require(c.wind_d_m >= 0.0, "wind.d_m: must be >= 0");
    require(c.wind_hold_s > 0.0, "wind.hold_s: must be > 0");
    require(c.total_time > 0.0, "total_time: must be > 0");
    require(c.inner_substeps >= 1, "inner_substeps: must be >= 1");
    require(c.trajectory.case2_start > 0.0, "trajectory.case2_start: must be > 0");
    require(c.trajectory.case2_step > 0.0, "trajectory.case2_step: must be > 0");
    require(c.trajectory.case2_dwell > 0.0, "trajectory.case2_dwell: must be > 0");
    require(c.trajectory.case2_min > 0.0, "trajectory.case2_min: must be > 0");
    require(c.trajectory.case2_line_offset >= 0.0,
            "trajectory.case2_line_offset: must be >= 0");
    // trajectory containment is validated by the generator at run start
    ReferenceTrajectory::make(c.scenario, c.geometry, c.trajectory, c.total_time)
        .min_wall_clearance(c.mpc.t_s);
}

/// Merged configuration: defaults <- file (optional) <- overrides.
/// Unknown keys anywhere are rejected with their full path.
inline ScenarioConfig load_config(const std::string& path,
                                  const std::vector<std::pair<std::string, std::string>>&
                                      overrides = {},
                                  Json* merged_out = nullptr) {
    Json merged = config_to_json(ScenarioConfig{});
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("config file not found: " + path);
        Json file = Json::parse(in, nullptr, false);
        if (file.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
        if (!file.is_object()) throw ConfigError("config root must be a JSON object");
        detail::merge_into(merged, file, "");
    }
    for (const auto& [key, value] : overrides) {
        detail::apply_override(merged, key, value);
    }
    ScenarioConfig cfg = config_from_json(merged);
    validate_config(cfg);
    if (merged_out) *merged_out = merged;
    return cfg;
}

/// FNV-1a hash of the canonical (sorted-key) dump of a merged config.
inline std::uint64_t config_hash(const Json& merged) { return fnv1a(merged.dump()); }

// --- Benchmark presets -----------------------------------------------------
//
// The library defaults above follow the published parameter tables. The
// benchmark scenarios need a desk-scale tunnel in which near-wall effects are
// strong enough to separate the controllers within a 2 m cross-section, plus
// per-case barrier tuning (a single lambda cannot serve every geometry once
// a_max and the braking envelopes are desk-sized).

/// Desk-scale aerodynamic world shared by every benchmark run.
inline void apply_benchmark_world(ScenarioConfig& c) {
    c.aero.ceiling_coeffs = {1.3, 0.07};
    c.aero.sidewall_params.mean_xy = 4.8;
    c.aero.sidewall_params.std_xy = 0.8;
    c.aero.sidewall_params.mean_z = 1.0;
    c.aero.sidewall_params.std_z = 1.3;
    c.aero.sidewall_params.cutoff_mult = 2.8;
    c.aero.sidewall_params.hold_s = 0.4;
    c.aero.torque_noise_gain = 1.0;
    c.aero.asymmetry_fraction = 0.25;
    c.aero.corner_gain = 1.0;
    c.wind_d_m = 0.8;
}

/// Barrier margins per benchmark case (and per target wall in Case II),
/// sized for the d_m = 0.8 m/s^2 disturbance bound on the desk-scale
/// braking envelope; see the calibrate-lambda harness.
inline void apply_case_preset(ScenarioConfig& c, ScenarioCase scenario,
                              ControllerMode controller,
                              TargetWall wall = TargetWall::kFloor) {
    c.scenario = scenario;
    c.controller = controller;
    c.mpc.scenario = scenario;
    c.mpc.mode = controller;
    c.trajectory.case2_wall = wall;
    switch (scenario) {
        case ScenarioCase::kBoundRegion:
            // r = 0.5 cannot discriminate at this scale: a competent
            // controller with 3 m/s^2 of authority never falls half a meter
            // behind under a 0.8 m/s^2 gust bound. The corridor radius is
            // sized to the actual disturbance-response scale, and the
            // stronger relaxation paired with the margin makes the barrier
            // an active governor rather than a last-resort brake.
            c.cbf.lambda = 0.5;
            c.cbf.gamma = 6.0;
            c.cbf.r = 0.13;
            break;
        case ScenarioCase::kMinStandoff:
            switch (wall) {
                case TargetWall::kFloor:
                    c.cbf.d_s = 0.03;
                    c.cbf.lambda = 0.17;
                    break;
                case TargetWall::kCeiling:
                    c.cbf.d_s = 0.05;
                    c.cbf.lambda = 1.03;
                    break;
                case TargetWall::kLeft:
                case TargetWall::kRight:
                    c.cbf.d_s = 0.05;
                    c.cbf.lambda = 0.5;
                    break;
            }
            break;
        case ScenarioCase::kCloseProximity:
            // pinned where worst-case gust peaks plus wind stay inside the
            // braking authority near the strongest wall field; the soft
            // relaxation keeps the demanded recovery rate within authority
            c.cbf.d_s = 0.05;
            c.cbf.lambda = 3.9;
            c.cbf.gamma = 1.5;
            break;
    }
}

}  // namespace tunnelmpc
