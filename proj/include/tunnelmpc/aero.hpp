#pragma once

#include <cmath>
#include <string>

#include "tunnelmpc/dynamics.hpp"
#include "tunnelmpc/errors.hpp"
#include "tunnelmpc/math.hpp"

namespace tunnelmpc {

/// Ceiling-effect curve coefficients (experimentally fitted quantities;
/// configurable because published values vary by airframe).
struct CeilingCoeffs {
    double a1 = 2.0;   // dimensionless
    double a2 = 0.04;  // m

    bool valid() const { return a1 > 0.0 && a2 >= 0.0; }
};

/// Stochastic near-sidewall pull. mean/std values are whole-vehicle forces;
/// cutoff_mult scales the activation distance in units of one propeller
/// diameter (2R). hold_s > 0 makes the simulation hold each gust sample for
/// that long instead of redrawing per call.
struct SidewallParams {
    double mean_xy = 0.052;  // N, pull toward the wall
    double std_xy = 0.022;   // N
    double mean_z = 0.062;   // N, bound scale for the vertical component
    double std_z = 0.065;    // N
    double cutoff_mult = 2.0;
    double hold_s = 0.0;     // s

    double cutoff_distance(double prop_radius) const {
        return cutoff_mult * 2.0 * prop_radius;
    }

    bool valid() const {
        return std_xy >= 0.0 && std_z >= 0.0 && mean_xy >= 0.0 && mean_z >= 0.0 &&
               cutoff_mult > 0.0 && hold_s >= 0.0;
    }
};

/// Rectangular tunnel cross-section: floor at z = 0, ceiling at z = height,
/// sidewalls at y = 0 and y = width. Ends along x are open.
struct TunnelGeometry {
    double width = 2.0;   // m
    double height = 2.0;  // m
    double length = 20.0; // m

    bool valid() const { return width > 0.0 && height > 0.0 && length > 0.0; }

    /// Distances to (floor, ceiling, left wall y=0, right wall y=width).
    Vec4 wall_distances(const Vec3& position) const {
        return {position.z(), height - position.z(), position.y(),
                width - position.y()};
    }
};

/// Thrust ratio over a horizontal surface, 1 / (1 - (R/4z)^2).
/// Monotonically decreasing in z, approaches 1 far from the ground.
inline double ground_effect_ratio(double z, double prop_radius) {
    if (!(z > prop_radius / 4.0)) {
        throw SingularityError("ground_effect_ratio: inside ground-effect singularity (z <= R/4)");
    }
    const double q = prop_radius / (4.0 * z);
    return 1.0 / (1.0 - q * q);
}

/// Thrust ratio under a ceiling, 1 / (1 - (1/a1) (R/(a2+dz))^2), where dz is
/// the gap below the ceiling.
inline double ceiling_effect_ratio(double dz, double prop_radius,
                                   const CeilingCoeffs& coeffs) {
    const double q = prop_radius / (coeffs.a2 + dz);
    const double denom = 1.0 - q * q / coeffs.a1;
    if (!(denom > 0.0)) {
        throw SingularityError("ceiling_effect_ratio: inside ceiling-effect singularity");
    }
    return 1.0 / denom;
}

/// One draw of the sidewall force at the given distance from a wall whose
/// inward unit normal is wall_normal. Zero beyond the cutoff distance.
/// Inside it, the normal component points toward the wall with magnitude
/// N(mean_xy, std_xy) clamped to [0, mean_xy + 3 std_xy], plus an
/// independent N(0, std_z) vertical component clamped to
/// |.| <= mean_z + 3 std_z; both scale with a linear proximity ramp.
inline Vec3 sidewall_force(double wall_distance, const Vec3& wall_normal,
                           const SidewallParams& params, double prop_radius,
                           RandomStream& rng) {
    const double cutoff = params.cutoff_distance(prop_radius);
    if (wall_distance >= cutoff) {
        return Vec3::Zero();
    }
    const double ramp = 1.0 - wall_distance / cutoff;
    const double pull = clamp(rng.normal(params.mean_xy, params.std_xy), 0.0,
                              params.mean_xy + 3.0 * params.std_xy);
    const double vert_bound = params.mean_z + 3.0 * params.std_z;
    const double vert = clamp(rng.normal(0.0, params.std_z), -vert_bound, vert_bound);
    return ramp * (-pull * wall_normal + Vec3(0.0, 0.0, vert));
}

/// Aerodynamic model of the tunnel: toggles, coefficients, and the knobs
/// for the corner amplification and the random destabilizing torque.
struct AeroEffects {
    bool ground = true;
    bool ceiling = true;
    bool sidewall = true;
    CeilingCoeffs ceiling_coeffs;
    SidewallParams sidewall_params;
    /// Extra gain where a vertical and a lateral effect overlap (1 = pure
    /// superposition).
    double corner_gain = 1.0;
    /// Scales the random torque modeling per-rotor asymmetry of the
    /// active effects.
    double torque_noise_gain = 1.0;
    /// Fraction of the deterministic GE/CE force magnitude that feeds the
    /// torque-noise scale (those effects carry no published std).
    double asymmetry_fraction = 0.25;

    bool all_off() const { return !ground && !ceiling && !sidewall; }
};

namespace detail {

inline double proximity(double distance, double cutoff) {
    return clamp(1.0 - distance / cutoff, 0.0, 1.0);
}

}  // namespace detail

/// Composite disturbance wrench at the current state: ground push-away,
/// ceiling pull, sidewall pulls from both lateral walls (corners therefore
/// superpose two effects), and a random torque whose per-axis std is
/// proportional to the local force noise scale times the arm length.
/// Throws SingularityError when the state is inside a model singularity;
/// the simulation treats that as a collision.
inline Wrench tunnel_disturbance(const UavState& state, const TunnelGeometry& geometry,
                                 const UavParams& params, const AeroEffects& effects,
                                 double hover_thrust, RandomStream& rng) {
    const Vec4 d = geometry.wall_distances(state.position);
    if (!(d(0) > 0.0 && d(1) > 0.0 && d(2) > 0.0 && d(3) > 0.0)) {
        throw SingularityError("tunnel_disturbance: position outside tunnel cross-section");
    }

    Wrench w;
    double vertical_force = 0.0;  // magnitudes feeding the torque-noise scale
    if (effects.ground) {
        const double f = hover_thrust * (ground_effect_ratio(d(0), params.prop_radius) - 1.0);
        w.force.z() += f;  // push away from the floor
        vertical_force += f;
    }
    if (effects.ceiling) {
        const double f = hover_thrust *
                         (ceiling_effect_ratio(d(1), params.prop_radius, effects.ceiling_coeffs) - 1.0);
        w.force.z() += f;  // pull toward the ceiling
        vertical_force += f;
    }

    const double cutoff = effects.sidewall_params.cutoff_distance(params.prop_radius);
    double lateral_ramp = 0.0;
    if (effects.sidewall) {
        w.force += sidewall_force(d(2), Vec3(0.0, 1.0, 0.0), effects.sidewall_params,
                                  params.prop_radius, rng);
        w.force += sidewall_force(d(3), Vec3(0.0, -1.0, 0.0), effects.sidewall_params,
                                  params.prop_radius, rng);
        lateral_ramp = std::max(detail::proximity(d(2), cutoff),
                                detail::proximity(d(3), cutoff));
    }

    // Corner amplification beyond plain superposition (off at gain 1).
    if (effects.corner_gain != 1.0) {
        const double vertical_ramp = std::max(detail::proximity(d(0), cutoff),
                                              detail::proximity(d(1), cutoff));
        const double overlap = std::min(vertical_ramp, lateral_ramp);
        w.force *= 1.0 + (effects.corner_gain - 1.0) * overlap;
    }

    const double force_noise_scale =
        lateral_ramp * (effects.sidewall ? effects.sidewall_params.std_xy : 0.0) +
        effects.asymmetry_fraction * vertical_force;
    if (force_noise_scale > 0.0 && effects.torque_noise_gain > 0.0) {
        const double sigma = effects.torque_noise_gain * params.arm_length * force_noise_scale;
        w.torque = Vec3(sigma * rng.normal(), sigma * rng.normal(),
                        0.5 * sigma * rng.normal());
    }
    return w;
}

/// Deterministic part of the disturbance force field (GE + CE + mean
/// sidewall pull) at a cross-section point; used by the field dump.
inline Vec3 mean_disturbance_force(double y, double z, const TunnelGeometry& geometry,
                                   const UavParams& params, const AeroEffects& effects,
                                   double hover_thrust) {
    Vec3 f = Vec3::Zero();
    if (effects.ground) {
        f.z() += hover_thrust * (ground_effect_ratio(z, params.prop_radius) - 1.0);
    }
    if (effects.ceiling) {
        f.z() += hover_thrust * (ceiling_effect_ratio(geometry.height - z, params.prop_radius,
                                                      effects.ceiling_coeffs) -
                                 1.0);
    }
    if (effects.sidewall) {
        const double cutoff = effects.sidewall_params.cutoff_distance(params.prop_radius);
        f.y() -= detail::proximity(y, cutoff) * effects.sidewall_params.mean_xy;
        f.y() += detail::proximity(geometry.width - y, cutoff) * effects.sidewall_params.mean_xy;
    }
    return f;
}

/// Bounded ambient wind: a random acceleration held constant over fixed
/// intervals, direction uniform on the sphere, magnitude uniform on
/// [0, d_m]. Sampling times are deterministic in t, so a fixed seed
/// reproduces the sequence.
class WindModel {
public:
    WindModel(double d_m, double hold_s = 1.0) : d_m_(d_m), hold_s_(hold_s) {}

    Vec3 at(double t, RandomStream& rng) {
        if (d_m_ <= 0.0) {
            return Vec3::Zero();
        }
        if (t >= next_resample_) {
            current_ = rng.uniform(0.0, d_m_) * rng.unit_vector();
            next_resample_ = (next_resample_ < 0.0 ? t : next_resample_) + hold_s_;
            if (next_resample_ <= t) next_resample_ = t + hold_s_;
        }
        return current_;
    }

    double max_magnitude() const { return d_m_; }

private:
    double d_m_;
    double hold_s_;
    Vec3 current_ = Vec3::Zero();
    double next_resample_ = -1.0;
};

/// Simulation-facing disturbance source. Equivalent to calling
/// tunnel_disturbance every substep, except that with hold_s > 0 the
/// sidewall gust and torque draws are held for that long (and rescaled by
/// the current proximity ramp) to give the gusts temporal coherence.
class TunnelDisturbanceModel {
public:
    TunnelDisturbanceModel(const TunnelGeometry& geometry, const UavParams& params,
                           const AeroEffects& effects, double hover_thrust)
        : geometry_(geometry), params_(params), effects_(effects),
          hover_thrust_(hover_thrust) {}

    Wrench at(const UavState& state, double t, RandomStream& rng) {
        if (effects_.sidewall_params.hold_s <= 0.0) {
            return tunnel_disturbance(state, geometry_, params_, effects_, hover_thrust_, rng);
        }

        const Vec4 d = geometry_.wall_distances(state.position);
        if (!(d(0) > 0.0 && d(1) > 0.0 && d(2) > 0.0 && d(3) > 0.0)) {
            throw SingularityError("tunnel_disturbance: position outside tunnel cross-section");
        }

        if (t >= next_draw_) {
            pull_[0] = draw_pull(rng);
            pull_[1] = draw_pull(rng);
            vert_[0] = draw_vert(rng);
            vert_[1] = draw_vert(rng);
            for (auto& n : torque_unit_) n = rng.normal();
            next_draw_ = t + effects_.sidewall_params.hold_s;
        }

        Wrench w;
        double vertical_force = 0.0;
        if (effects_.ground) {
            const double f = hover_thrust_ * (ground_effect_ratio(d(0), params_.prop_radius) - 1.0);
            w.force.z() += f;
            vertical_force += f;
        }
        if (effects_.ceiling) {
            const double f = hover_thrust_ *
                             (ceiling_effect_ratio(d(1), params_.prop_radius,
                                                   effects_.ceiling_coeffs) -
                              1.0);
            w.force.z() += f;
            vertical_force += f;
        }

        const double cutoff = effects_.sidewall_params.cutoff_distance(params_.prop_radius);
        double lateral_ramp = 0.0;
        if (effects_.sidewall) {
            const double ramp_l = detail::proximity(d(2), cutoff);
            const double ramp_r = detail::proximity(d(3), cutoff);
            w.force += ramp_l * (Vec3(0.0, -pull_[0], 0.0) + Vec3(0.0, 0.0, vert_[0]));
            w.force += ramp_r * (Vec3(0.0, pull_[1], 0.0) + Vec3(0.0, 0.0, vert_[1]));
            lateral_ramp = std::max(ramp_l, ramp_r);
        }

        if (effects_.corner_gain != 1.0) {
            const double vertical_ramp = std::max(detail::proximity(d(0), cutoff),
                                                  detail::proximity(d(1), cutoff));
            const double overlap = std::min(vertical_ramp, lateral_ramp);
            w.force *= 1.0 + (effects_.corner_gain - 1.0) * overlap;
        }

        const double force_noise_scale =
            lateral_ramp * (effects_.sidewall ? effects_.sidewall_params.std_xy : 0.0) +
            effects_.asymmetry_fraction * vertical_force;
        if (force_noise_scale > 0.0 && effects_.torque_noise_gain > 0.0) {
            const double sigma = effects_.torque_noise_gain * params_.arm_length * force_noise_scale;
            w.torque = Vec3(sigma * torque_unit_[0], sigma * torque_unit_[1],
                            0.5 * sigma * torque_unit_[2]);
        }
        return w;
    }

private:
    double draw_pull(RandomStream& rng) const {
        const auto& sw = effects_.sidewall_params;
        return clamp(rng.normal(sw.mean_xy, sw.std_xy), 0.0, sw.mean_xy + 3.0 * sw.std_xy);
    }
    double draw_vert(RandomStream& rng) const {
        const auto& sw = effects_.sidewall_params;
        const double bound = sw.mean_z + 3.0 * sw.std_z;
        return clamp(rng.normal(0.0, sw.std_z), -bound, bound);
    }

    TunnelGeometry geometry_;
    UavParams params_;
    AeroEffects effects_;
    double hover_thrust_;
    double pull_[2] = {0.0, 0.0};
    double vert_[2] = {0.0, 0.0};
    double torque_unit_[3] = {0.0, 0.0, 0.0};
    double next_draw_ = -1.0;
};

}  // namespace tunnelmpc
