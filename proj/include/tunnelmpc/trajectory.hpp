#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tunnelmpc/aero.hpp"
#include "tunnelmpc/errors.hpp"
#include "tunnelmpc/math.hpp"
#include "tunnelmpc/mpc.hpp"

namespace tunnelmpc {

enum class TargetWall { kFloor, kCeiling, kLeft, kRight };

inline const char* to_string(TargetWall w) {
    switch (w) {
        case TargetWall::kFloor: return "floor";
        case TargetWall::kCeiling: return "ceiling";
        case TargetWall::kLeft: return "left";
        case TargetWall::kRight: return "right";
    }
    return "unknown";
}

/// Reference-generator knobs for the three scenario cases.
struct TrajectoryParams {
    // Case I: sinusoidal weave along the tunnel axis, lateral/vertical
    // oscillation around the centerline.
    double weave_amp_x = 8.0;
    double weave_period_x = 28.0;
    double weave_amp_y = 0.46;
    double weave_period_y = 7.0;
    double weave_amp_z = 0.35;
    double weave_period_z = 4.5;

    // Case II: hover setpoints stepping toward one wall. A nonzero line
    // offset moves the approach line off the cross-section center on the
    // non-target axis (toward the left wall for floor/ceiling targets,
    // toward the floor for sidewall targets), placing the dwell in a tunnel
    // corner where the combined effects act.
    TargetWall case2_wall = TargetWall::kFloor;
    double case2_start = 1.0;
    double case2_step = 0.05;
    double case2_dwell = 5.0;
    double case2_min = 0.05;
    double case2_line_offset = 0.0;

    // Case III: close-proximity tour clearances.
    double case3_ground = 0.22;
    double case3_side = 0.35;
    double case3_ceiling = 0.20;
};

namespace detail {

inline double smootherstep(double t) {
    const double x = clamp(t, 0.0, 1.0);
    return x * x * x * (x * (x * 6.0 - 15.0) + 10.0);
}

}  // namespace detail

/// Time-parameterized reference position for one scenario case. Velocities
/// handed to the controller come from forward finite differences of the
/// sampled positions, so they are consistent with the discrete windows.
class ReferenceTrajectory {
public:
    static ReferenceTrajectory case1(const TunnelGeometry& geom,
                                     const TrajectoryParams& p, double total_time) {
        ReferenceTrajectory t;
        t.case_ = ScenarioCase::kBoundRegion;
        t.geom_ = geom;
        t.params_ = p;
        t.total_time_ = total_time;
        return t;
    }

    static ReferenceTrajectory case2(const TunnelGeometry& geom,
                                     const TrajectoryParams& p, double total_time) {
        ReferenceTrajectory t;
        t.case_ = ScenarioCase::kMinStandoff;
        t.geom_ = geom;
        t.params_ = p;
        t.total_time_ = total_time;
        return t;
    }

    static ReferenceTrajectory case3(const TunnelGeometry& geom,
                                     const TrajectoryParams& p, double total_time) {
        ReferenceTrajectory t;
        t.case_ = ScenarioCase::kCloseProximity;
        t.geom_ = geom;
        t.params_ = p;
        t.total_time_ = total_time;
        t.build_case3_keyframes();
        return t;
    }

    static ReferenceTrajectory make(ScenarioCase c, const TunnelGeometry& geom,
                                    const TrajectoryParams& p, double total_time) {
        switch (c) {
            case ScenarioCase::kBoundRegion: return case1(geom, p, total_time);
            case ScenarioCase::kMinStandoff: return case2(geom, p, total_time);
            case ScenarioCase::kCloseProximity:
            default: return case3(geom, p, total_time);
        }
    }

    Vec3 position(double t) const {
        switch (case_) {
            case ScenarioCase::kBoundRegion: {
                const TrajectoryParams& p = params_;
                const double xm = geom_.length / 2.0;
                const double ym = geom_.width / 2.0;
                const double zm = geom_.height / 2.0;
                return {xm - p.weave_amp_x * std::cos(2.0 * kPi * t / p.weave_period_x),
                        ym + p.weave_amp_y * std::sin(2.0 * kPi * t / p.weave_period_y),
                        zm + p.weave_amp_z * std::sin(2.0 * kPi * t / p.weave_period_z)};
            }
            case ScenarioCase::kMinStandoff: {
                const double standoff = commanded_standoff(t);
                const double xm = geom_.length / 2.0;
                const double off = params_.case2_line_offset;
                Vec3 pos(xm, geom_.width / 2.0, geom_.height / 2.0);
                switch (params_.case2_wall) {
                    case TargetWall::kFloor:
                        pos.z() = standoff;
                        if (off > 0.0) pos.y() = off;
                        break;
                    case TargetWall::kCeiling:
                        pos.z() = geom_.height - standoff;
                        if (off > 0.0) pos.y() = off;
                        break;
                    case TargetWall::kLeft:
                        pos.y() = standoff;
                        if (off > 0.0) pos.z() = off;
                        break;
                    case TargetWall::kRight:
                        pos.y() = geom_.width - standoff;
                        if (off > 0.0) pos.z() = off;
                        break;
                }
                return pos;
            }
            case ScenarioCase::kCloseProximity:
            default: {
                if (t <= keyframes_.front().time) return keyframes_.front().pos;
                if (t >= keyframes_.back().time) return keyframes_.back().pos;
                for (std::size_t i = 1; i < keyframes_.size(); ++i) {
                    if (t <= keyframes_[i].time) {
                        const auto& a = keyframes_[i - 1];
                        const auto& b = keyframes_[i];
                        const double tau = (t - a.time) / (b.time - a.time);
                        return a.pos + detail::smootherstep(tau) * (b.pos - a.pos);
                    }
                }
                return keyframes_.back().pos;
            }
        }
    }

    /// Commanded standoff of the Case II dwell schedule at time t.
    double commanded_standoff(double t) const {
        const TrajectoryParams& p = params_;
        const double k = std::floor(std::fmax(0.0, t) / p.case2_dwell);
        return std::fmax(p.case2_min, p.case2_start - p.case2_step * k);
    }

    ReferenceWindow window(double t, int n, double ts) const {
        ReferenceWindow w;
        w.positions.reserve(static_cast<std::size_t>(n) + 1);
        for (int i = 0; i <= n; ++i) w.positions.push_back(position(t + i * ts));
        for (int i = 0; i <= n; ++i) {
            w.velocities.push_back((position(t + (i + 1) * ts) - w.positions[static_cast<std::size_t>(i)]) / ts);
        }
        w.yaws.assign(static_cast<std::size_t>(n) + 1, 0.0);
        return w;
    }

    /// Smallest distance of the sampled trajectory to any wall; throws when
    /// the trajectory leaves the tunnel.
    double min_wall_clearance(double ts = 0.1) const {
        double min_d = kInf;
        for (double t = 0.0; t <= total_time_ + 1e-9; t += ts) {
            const Vec3 p = position(t);
            const Vec4 d = geom_.wall_distances(p);
            min_d = std::fmin(min_d, d.minCoeff());
            if (d.minCoeff() <= 0.0 || p.x() < 0.0 || p.x() > geom_.length) {
                throw ConfigError("trajectory: reference exits the tunnel at t=" +
                                  std::to_string(t));
            }
        }
        return min_d;
    }

    ScenarioCase scenario() const { return case_; }

private:
    void build_case3_keyframes() {
        const double s = total_time_ / 100.0;  // schedule scales with run length
        const double h = geom_.height;
        const double ym = geom_.width / 2.0;
        const double zg = params_.case3_ground;
        const double ys = params_.case3_side;
        const double zc = h - params_.case3_ceiling;
        // sidewall leg first, then ground, then ceiling
        keyframes_ = {
            {0.0 * s, Vec3(2.0, ym, 1.0)},   {8.0 * s, Vec3(2.0, ys, 1.0)},
            {24.0 * s, Vec3(7.0, ys, 1.0)},  {32.0 * s, Vec3(7.0, ym, zg)},
            {52.0 * s, Vec3(12.0, ym, zg)},  {60.0 * s, Vec3(12.0, ym, zc)},
            {80.0 * s, Vec3(17.0, ym, zc)},  {90.0 * s, Vec3(17.0, ym, 1.0)},
            {100.0 * s, Vec3(17.0, ym, 1.0)},
        };
    }

    struct Keyframe {
        double time;
        Vec3 pos;
    };

    ScenarioCase case_ = ScenarioCase::kBoundRegion;
    TunnelGeometry geom_;
    TrajectoryParams params_;
    double total_time_ = 100.0;
    std::vector<Keyframe> keyframes_;
};

}  // namespace tunnelmpc
