#pragma once

#include <cmath>

#include "tunnelmpc/errors.hpp"
#include "tunnelmpc/math.hpp"

namespace tunnelmpc {

/// Parameters of the braking-distance barriers and their invariance
/// condition.
struct CbfParams {
    double a_max = 3.0;   // m/s^2, maximum recoverable acceleration
    double gamma = 3.0;   // 1/s, relaxation coefficient
    int z_exp = 3;        // odd positive exponent of the invariance condition
    double lambda = 8.0;  // disturbance-rejection margin
    double d_s = 0.1;     // m, safe standoff distance
    double r = 0.5;       // m, bounding-region radius

    bool valid() const {
        return a_max > 0.0 && gamma > 0.0 && z_exp >= 1 && z_exp % 2 == 1 &&
               lambda >= 0.0 && d_s >= 0.0 && r > 0.0;
    }
};

namespace detail {

// Integer power; sign-preserving for odd exponents.
inline double ipow(double base, int e) {
    double out = 1.0;
    for (int i = 0; i < e; ++i) out *= base;
    return out;
}

// C1 continuation of sqrt used by the optimizer to extend barrier values
// past their domain boundary: exact above kSqrtExtLin, first-order Taylor
// below it. The constant slope in violation keeps constraint linearizations
// informative however deep a trial rollout cuts into a wall.
inline constexpr double kSqrtExtLin = 0.04;

inline double sqrt_ext(double q) {
    if (q >= kSqrtExtLin) return std::sqrt(q);
    const double s = std::sqrt(kSqrtExtLin);
    return s + (q - kSqrtExtLin) * 0.5 / s;
}

inline double sqrt_ext_deriv(double q) {
    if (q >= kSqrtExtLin) return 0.5 / std::sqrt(q);
    return 0.5 / std::sqrt(kSqrtExtLin);
}

}  // namespace detail

/// Barrier for a point obstacle: positive while the approach speed stays
/// within braking capability of the remaining clearance.
/// p_rel points from the obstacle to the vehicle.
inline double h_point_obstacle(const Vec3& p_rel, const Vec3& vel,
                               const CbfParams& params) {
    const double dist = p_rel.norm();
    if (!(dist > params.d_s)) {
        throw BarrierViolation("h_point_obstacle: inside standoff distance");
    }
    return std::sqrt(2.0 * params.a_max * (dist - params.d_s)) +
           p_rel.dot(vel) / dist;
}

/// Barrier bounding the vehicle inside a sphere of radius r around a moving
/// region center; vel_target is the center's velocity. p_rel points from the
/// center to the vehicle. At p_rel = 0 the radial direction is degenerate and
/// the velocity term is defined as zero.
inline double h_bounding(const Vec3& p_rel, const Vec3& vel, const Vec3& vel_target,
                         const CbfParams& params) {
    const double dist = p_rel.norm();
    if (!(dist < params.r)) {
        throw BarrierViolation("h_bounding: outside bounding region");
    }
    const double radial =
        dist > 0.0 ? p_rel.dot(vel - vel_target) / dist : 0.0;
    return std::sqrt(2.0 * params.a_max * (params.r - dist)) - radial;
}

/// Barrier against a wall; d is the perpendicular vector from the wall to
/// the vehicle. Same braking structure as the point-obstacle barrier.
inline double h_wall(const Vec3& d, const Vec3& vel, const CbfParams& params) {
    const double dist = d.norm();
    if (!(dist > params.d_s)) {
        throw BarrierViolation("h_wall: inside wall standoff distance");
    }
    return std::sqrt(2.0 * params.a_max * (dist - params.d_s)) + d.dot(vel) / dist;
}

/// Discrete invariance residual, (h_next - h_now)/dt + gamma (h_now^z - lambda).
/// The constraint is satisfied iff the residual is >= 0; lambda = 0 recovers
/// the plain relaxation condition.
inline double invariance_residual(double h_now, double h_next, double dt,
                                  const CbfParams& params) {
    return (h_next - h_now) / dt +
           params.gamma * (detail::ipow(h_now, params.z_exp) - params.lambda);
}

/// Continuous-time expansion of the point-obstacle invariance condition,
/// scaled by ||p_rel||. Analytic cross-check of the discrete residual; not
/// used by the optimizer.
inline double expanded_invariance_point(const Vec3& p_rel, const Vec3& vel,
                                        const Vec3& u, const CbfParams& params) {
    const double dist = p_rel.norm();
    if (!(dist > params.d_s)) {
        throw BarrierViolation("expanded_invariance_point: inside standoff distance");
    }
    const double brake = std::sqrt(2.0 * params.a_max * (dist - params.d_s));
    const double h = brake + p_rel.dot(vel) / dist;
    const double radial_speed = p_rel.dot(vel) / dist;
    return params.a_max * vel.dot(p_rel) / brake - radial_speed * radial_speed +
           vel.squaredNorm() + p_rel.dot(u) +
           params.gamma * detail::ipow(h, params.z_exp) * dist;
}

/// Barrier value with analytic gradients with respect to the relative
/// position and the vehicle velocity.
struct HGrad {
    double h = 0.0;
    Vec3 dh_dp = Vec3::Zero();
    Vec3 dh_dv = Vec3::Zero();
};

inline HGrad h_point_obstacle_grad(const Vec3& p_rel, const Vec3& vel,
                                   const CbfParams& params) {
    const double dist = p_rel.norm();
    if (!(dist > params.d_s)) {
        throw BarrierViolation("h_point_obstacle_grad: inside standoff distance");
    }
    HGrad g;
    const double brake = std::sqrt(2.0 * params.a_max * (dist - params.d_s));
    g.h = brake + p_rel.dot(vel) / dist;
    g.dh_dp = params.a_max / (brake * dist) * p_rel + vel / dist -
              p_rel.dot(vel) / (dist * dist * dist) * p_rel;
    g.dh_dv = p_rel / dist;
    return g;
}

inline HGrad h_wall_grad(const Vec3& d, const Vec3& vel, const CbfParams& params) {
    return h_point_obstacle_grad(d, vel, params);
}

inline HGrad h_bounding_grad(const Vec3& p_rel, const Vec3& vel, const Vec3& vel_target,
                             const CbfParams& params) {
    const double dist = p_rel.norm();
    if (!(dist < params.r)) {
        throw BarrierViolation("h_bounding_grad: outside bounding region");
    }
    HGrad g;
    const double brake = std::sqrt(2.0 * params.a_max * (params.r - dist));
    if (dist < 1e-12) {
        g.h = brake;
        return g;  // degenerate direction: zero radial term and gradient
    }
    const Vec3 rel_vel = vel - vel_target;
    g.h = brake - p_rel.dot(rel_vel) / dist;
    g.dh_dp = -params.a_max / (brake * dist) * p_rel - rel_vel / dist +
              p_rel.dot(rel_vel) / (dist * dist * dist) * p_rel;
    g.dh_dv = -p_rel / dist;
    return g;
}

/// Non-throwing continuations of the barriers for optimizer rollouts: the
/// square root is extended linearly past the boundary so predicted states
/// that transiently violate a barrier still produce informative values and
/// gradients. The public h_* functions above stay exact and throwing.
inline HGrad h_wall_extended(const Vec3& d, const Vec3& vel, const CbfParams& params) {
    HGrad g;
    const double dist = d.norm();
    if (dist < 1e-12) {
        g.h = detail::sqrt_ext(-2.0 * params.a_max * params.d_s);
        return g;
    }
    const double q = 2.0 * params.a_max * (dist - params.d_s);
    g.h = detail::sqrt_ext(q) + d.dot(vel) / dist;
    const double dbrake_ddist = 2.0 * params.a_max * detail::sqrt_ext_deriv(q);
    g.dh_dp = dbrake_ddist / dist * d + vel / dist -
              d.dot(vel) / (dist * dist * dist) * d;
    g.dh_dv = d / dist;
    return g;
}

/// Wall barrier continuation on the signed perpendicular distance (negative
/// past the wall plane) with the approach velocity resolved along the fixed
/// inward normal. Unlike the vector form, the value keeps decreasing behind
/// the wall, so the optimizer sees a consistent landscape there.
struct HGradSigned {
    double h = 0.0;
    double dh_ddist = 0.0;  // with respect to the signed distance
    double dh_dvn = 1.0;    // with respect to the inward-normal velocity
};

inline HGradSigned h_wall_signed_extended(double signed_dist, double v_normal,
                                          const CbfParams& params) {
    HGradSigned g;
    const double q = 2.0 * params.a_max * (signed_dist - params.d_s);
    g.h = detail::sqrt_ext(q) + v_normal;
    g.dh_ddist = 2.0 * params.a_max * detail::sqrt_ext_deriv(q);
    g.dh_dvn = 1.0;
    return g;
}

inline HGrad h_bounding_extended(const Vec3& p_rel, const Vec3& vel,
                                 const Vec3& vel_target, const CbfParams& params) {
    HGrad g;
    const double dist = p_rel.norm();
    const double q = 2.0 * params.a_max * (params.r - dist);
    if (dist < 1e-12) {
        g.h = detail::sqrt_ext(q);
        return g;
    }
    const Vec3 rel_vel = vel - vel_target;
    g.h = detail::sqrt_ext(q) - p_rel.dot(rel_vel) / dist;
    const double dbrake_ddist = -2.0 * params.a_max * detail::sqrt_ext_deriv(q);
    g.dh_dp = dbrake_ddist / dist * p_rel - rel_vel / dist +
              p_rel.dot(rel_vel) / (dist * dist * dist) * p_rel;
    g.dh_dv = -p_rel / dist;
    return g;
}

}  // namespace tunnelmpc
