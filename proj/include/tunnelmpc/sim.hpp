#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tunnelmpc/aero.hpp"
#include "tunnelmpc/cbf.hpp"
#include "tunnelmpc/dynamics.hpp"
#include "tunnelmpc/errors.hpp"
#include "tunnelmpc/math.hpp"
#include "tunnelmpc/mpc.hpp"
#include "tunnelmpc/trajectory.hpp"

namespace tunnelmpc {

/// Complete description of one closed-loop run.
struct ScenarioConfig {
    ScenarioCase scenario = ScenarioCase::kBoundRegion;
    ControllerMode controller = ControllerMode::kNaive;
    TunnelGeometry geometry;
    UavParams uav;
    PidGains pid;
    MpcConfig mpc;
    CbfParams cbf;
    AeroEffects aero;
    bool aero_enabled = true;
    double wind_d_m = 0.8;
    double wind_hold_s = 1.0;
    double total_time = 100.0;
    std::uint64_t seed = 0;
    int inner_substeps = 10;
    TrajectoryParams trajectory;

    double inner_dt() const { return mpc.t_s / inner_substeps; }
    double collision_distance() const { return uav.prop_radius / 4.0; }

    /// Stream seed unique to (seed, case, controller, target wall).
    std::uint64_t run_seed() const {
        std::uint64_t s = seed ^ fnv1a(to_string(scenario)) ^
                          (fnv1a(to_string(controller)) << 1);
        if (scenario == ScenarioCase::kMinStandoff) {
            s ^= fnv1a(to_string(trajectory.case2_wall)) << 2;
        }
        std::uint64_t state = s;
        return splitmix64(state);
    }
};

enum class StepSolverStatus { kOk, kMaxIterations, kFallback };

inline const char* to_string(StepSolverStatus s) {
    switch (s) {
        case StepSolverStatus::kOk: return "ok";
        case StepSolverStatus::kMaxIterations: return "maxiter";
        case StepSolverStatus::kFallback: return "fallback";
    }
    return "unknown";
}

inline StepSolverStatus parse_step_status(const std::string& s) {
    if (s == "ok") return StepSolverStatus::kOk;
    if (s == "maxiter") return StepSolverStatus::kMaxIterations;
    return StepSolverStatus::kFallback;
}

/// Per-outer-step log entry. The plant state is the one the controller saw
/// (start of the step); the disturbance is the wrench applied on the first
/// inner substep. A collided run appends one terminal record carrying the
/// state at the collision.
struct StepRecord {
    double time = 0.0;
    UavState plant;
    MpcInput input;
    Vec3 reference_position = Vec3::Zero();
    std::vector<double> h_values;
    Vec4 wall_distances = Vec4::Zero();
    Wrench disturbance;
    StepSolverStatus solver_status = StepSolverStatus::kOk;

    double h_min() const {
        double m = kInf;
        for (double h : h_values) m = std::fmin(m, h);
        return m;
    }
};

/// Aggregate benchmark metrics of one run.
struct RunMetrics {
    double tracking_rms = 0.0;       // T_e
    double control_effort = 0.0;     // c_e, sum of squared input norms
    double control_smoothness = 0.0; // c_s, l1 norm of input differences
    Vec4 min_wall_distance = Vec4::Constant(kInf);
    int boundary_violations = 0;
    bool collided = false;
    int steps = 0;
};

/// Extended barrier values of the case-active barrier set at a plant state
/// (logged for every controller so runs are comparable offline).
inline std::vector<double> active_barrier_values(const ScenarioConfig& cfg,
                                                 const UavState& plant,
                                                 const Vec3& ref_pos, const Vec3& ref_vel) {
    std::vector<double> hs;
    if (cfg.scenario == ScenarioCase::kBoundRegion) {
        hs.push_back(h_bounding_extended(plant.position - ref_pos, plant.velocity,
                                         ref_vel, cfg.cbf)
                         .h);
    } else {
        const Vec4 d = cfg.geometry.wall_distances(plant.position);
        hs.push_back(h_wall_signed_extended(d(0), plant.velocity.z(), cfg.cbf).h);
        hs.push_back(h_wall_signed_extended(d(1), -plant.velocity.z(), cfg.cbf).h);
        hs.push_back(h_wall_signed_extended(d(2), plant.velocity.y(), cfg.cbf).h);
        hs.push_back(h_wall_signed_extended(d(3), -plant.velocity.y(), cfg.cbf).h);
    }
    return hs;
}

/// Metrics from a record log. `collided` is carried by the caller (the log
/// itself stays recomputable from serialized records).
inline RunMetrics compute_metrics(const std::vector<StepRecord>& records,
                                  const ScenarioConfig& cfg, bool collided) {
    RunMetrics m;
    m.collided = collided;
    m.steps = static_cast<int>(records.size());
    if (records.empty()) return m;

    double sq_sum = 0.0;
    for (std::size_t k = 0; k < records.size(); ++k) {
        const StepRecord& r = records[k];
        sq_sum += (r.plant.position - r.reference_position).squaredNorm();
        m.control_effort += r.input.as_vec4().squaredNorm();
        if (k > 0) {
            m.control_smoothness +=
                (r.input.as_vec4() - records[k - 1].input.as_vec4()).cwiseAbs().sum();
        }
        m.min_wall_distance = m.min_wall_distance.cwiseMin(r.wall_distances);
        if ((r.plant.position - r.reference_position).norm() > cfg.cbf.r) {
            ++m.boundary_violations;
        }
    }
    m.tracking_rms = std::sqrt(sq_sum / static_cast<double>(records.size()));
    return m;
}

struct RunResult {
    std::vector<StepRecord> records;
    RunMetrics metrics;
};

/// Closed-loop scenario: outer MPC at t_s, inner PID/plant substeps with
/// aerodynamic and wind disturbances, early stop on collision (wall distance
/// at or below prop_radius/4, or an aero-model singularity).
inline RunResult run_scenario(const ScenarioConfig& cfg) {
    if (!cfg.uav.valid() || !cfg.geometry.valid() || !cfg.mpc.valid() ||
        !cfg.cbf.valid() || cfg.total_time <= 0.0 || cfg.inner_substeps < 1) {
        throw ConfigError("run_scenario: invalid configuration");
    }

    const ReferenceTrajectory traj = ReferenceTrajectory::make(
        cfg.scenario, cfg.geometry, cfg.trajectory, cfg.total_time);
    traj.min_wall_clearance(cfg.mpc.t_s);  // validates containment

    RandomStream base(cfg.run_seed());
    RandomStream rng_aero = base.fork("aero");
    RandomStream rng_wind = base.fork("wind");

    MpcController controller(cfg.mpc, cfg.cbf, cfg.geometry);
    WindModel wind(cfg.wind_d_m, cfg.wind_hold_s);
    TunnelDisturbanceModel aero_model(cfg.geometry, cfg.uav, cfg.aero,
                                      cfg.uav.hover_thrust());

    UavState plant;
    plant.position = traj.position(0.0);
    PidState pid;

    const int total_steps = static_cast<int>(std::llround(cfg.total_time / cfg.mpc.t_s));
    const double dt = cfg.inner_dt();
    const double collision_d = cfg.collision_distance();

    RunResult out;
    out.records.reserve(static_cast<std::size_t>(total_steps) + 1);
    bool collided = false;

    for (int k = 0; k < total_steps && !collided; ++k) {
        const double t = k * cfg.mpc.t_s;
        const ReferenceWindow ref = traj.window(t, cfg.mpc.horizon, cfg.mpc.t_s);
        const MpcState mpc_state = MpcState::from_uav(plant);
        const auto step = controller.solve_step(mpc_state, ref);

        StepRecord rec;
        rec.time = t;
        rec.plant = plant;
        rec.input = step.input;
        rec.reference_position = ref.positions[0];
        rec.h_values = active_barrier_values(cfg, plant, ref.positions[0], ref.velocities[0]);
        rec.wall_distances = cfg.geometry.wall_distances(plant.position);
        rec.solver_status = step.diag.fallback ? StepSolverStatus::kFallback
                            : step.diag.status == SolveStatus::kConverged
                                ? StepSolverStatus::kOk
                                : StepSolverStatus::kMaxIterations;

        const Vec4 u_cmd = step.input.as_vec4();
        bool singularity = false;
        for (int j = 0; j < cfg.inner_substeps; ++j) {
            const double t_sub = t + j * dt;
            Wrench wrench;
            if (cfg.aero_enabled) {
                try {
                    wrench = aero_model.at(plant, t_sub, rng_aero);
                } catch (const SingularityError&) {
                    collided = true;
                    singularity = true;
                    break;
                }
            }
            wrench.force += cfg.uav.mass * wind.at(t_sub, rng_wind);
            if (j == 0) rec.disturbance = wrench;

            const InnerLoopResult inner =
                inner_loop_step(plant, u_cmd, cfg.pid, cfg.uav, dt, pid);
            pid = inner.next;
            plant = step_plant(plant, inner.cmd.thrust, inner.cmd.torque, wrench,
                               cfg.uav, dt);

            if (cfg.geometry.wall_distances(plant.position).minCoeff() <= collision_d) {
                collided = true;
                break;
            }
        }
        out.records.push_back(rec);

        if (collided) {
            // Terminal record at the collision state. A singularity abort
            // happens strictly inside the model-invalid band, so the
            // offending wall distance is recorded at the collision
            // threshold.
            StepRecord term;
            term.time = t + cfg.mpc.t_s;
            term.plant = plant;
            term.input = step.input;
            const ReferenceWindow rw = traj.window(term.time, 1, cfg.mpc.t_s);
            term.reference_position = rw.positions[0];
            term.h_values =
                active_barrier_values(cfg, plant, rw.positions[0], rw.velocities[0]);
            term.wall_distances = cfg.geometry.wall_distances(plant.position);
            if (singularity) {
                int w = 0;
                term.wall_distances.minCoeff(&w);
                term.wall_distances(w) = std::fmin(term.wall_distances(w), collision_d);
            }
            term.disturbance = rec.disturbance;
            term.solver_status = rec.solver_status;
            out.records.push_back(term);
        }
    }

    out.metrics = compute_metrics(out.records, cfg, collided);
    return out;
}

/// One dwell window of the Case II protocol.
struct DwellReport {
    double commanded = 0.0;
    double achieved_mean = 0.0;  // wall distance over the dwell tail
    double achieved_std = 0.0;
    double h_min = kInf;
    double min_distance = kInf;
    bool completed = false;  // run reached the end of the window
    bool stable = false;
};

inline int wall_index(TargetWall w) {
    switch (w) {
        case TargetWall::kFloor: return 0;
        case TargetWall::kCeiling: return 1;
        case TargetWall::kLeft: return 2;
        case TargetWall::kRight: return 3;
    }
    return 0;
}

/// Case II dwell analysis: a dwell is stable when the run survives it, the
/// wall-distance std over the dwell tail stays under the threshold, no
/// barrier goes negative, and the vehicle keeps clear of the collision band.
inline std::vector<DwellReport> analyze_dwells(const std::vector<StepRecord>& records,
                                               const ScenarioConfig& cfg,
                                               double std_threshold = 0.05,
                                               double tail_fraction = 0.6) {
    std::vector<DwellReport> out;
    if (cfg.scenario != ScenarioCase::kMinStandoff || records.empty()) return out;

    const ReferenceTrajectory traj = ReferenceTrajectory::make(
        cfg.scenario, cfg.geometry, cfg.trajectory, cfg.total_time);
    const int widx = wall_index(cfg.trajectory.case2_wall);
    const double dwell = cfg.trajectory.case2_dwell;
    const int n_dwells =
        static_cast<int>(std::floor(cfg.total_time / dwell + 1e-9));
    const bool check_barrier = cfg.controller == ControllerMode::kCbf;

    for (int i = 0; i < n_dwells; ++i) {
        const double t0 = i * dwell;
        const double t1 = t0 + dwell;
        DwellReport rep;
        rep.commanded = traj.commanded_standoff(t0 + 1e-9);

        std::vector<double> tail;
        // the final dwell ends with the run itself, one sample short of t1
        bool reached_end =
            !records.empty() &&
            records.back().time >= t1 - cfg.mpc.t_s - 1e-9;
        for (const StepRecord& r : records) {
            if (r.time < t0 || r.time >= t1 - 1e-9) {
                continue;
            }
            rep.min_distance = std::fmin(rep.min_distance, r.wall_distances(widx));
            rep.h_min = std::fmin(rep.h_min, r.h_min());
            if (r.time >= t1 - tail_fraction * dwell) {
                tail.push_back(r.wall_distances(widx));
            }
        }
        rep.completed = reached_end && !tail.empty();
        if (rep.completed) {
            double mean = 0.0;
            for (double d : tail) mean += d;
            mean /= static_cast<double>(tail.size());
            double var = 0.0;
            for (double d : tail) var += (d - mean) * (d - mean);
            var /= static_cast<double>(tail.size());
            rep.achieved_mean = mean;
            rep.achieved_std = std::sqrt(var);
            rep.stable = rep.achieved_std < std_threshold &&
                         rep.min_distance > cfg.collision_distance() &&
                         (!check_barrier || rep.h_min >= -1e-6);
        }
        out.push_back(rep);
        if (!rep.stable) break;  // protocol stops at the first unstable dwell
    }
    return out;
}

/// Deepest stable operating distance of the Case II protocol: the achieved
/// mean wall distance of the last stable dwell (the commanded start distance
/// when nothing was stable).
inline double min_stable_standoff(const std::vector<StepRecord>& records,
                                  const ScenarioConfig& cfg) {
    const auto dwells = analyze_dwells(records, cfg);
    double best = cfg.trajectory.case2_start;
    for (const auto& d : dwells) {
        if (d.stable) best = d.achieved_mean;
    }
    return best;
}

}  // namespace tunnelmpc
