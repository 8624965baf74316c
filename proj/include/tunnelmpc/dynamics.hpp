#pragma once

#include <cmath>
#include <stdexcept>

#include "tunnelmpc/errors.hpp"
#include "tunnelmpc/math.hpp"

namespace tunnelmpc {

/// Physical parameters of the vehicle.
struct UavParams {
    double mass = 1.5;                      // kg
    Vec3 inertia_diag{0.1, 0.1, 0.2};       // kg m^2, body axes
    double arm_length = 0.20;               // m
    double prop_radius = 0.12;              // m
    double max_tilt = kPi / 10.0;           // rad, bound on |roll| and |pitch|
    double gravity = 9.81;                  // m/s^2, along -z inertial

    double hover_thrust() const { return mass * gravity; }
    // Thrust ceiling at a thrust-to-weight ratio of 2.
    double thrust_max() const { return 2.0 * mass * gravity; }

    bool valid() const {
        return mass > 0.0 && (inertia_diag.array() > 0.0).all() &&
               prop_radius > 0.0 && max_tilt > 0.0 && max_tilt < kPi / 2.0 &&
               arm_length > 0.0 && gravity > 0.0;
    }
};

/// Full plant state. Attitude is Euler ZYX (roll, pitch, yaw); body_rates
/// are angular rates in the body frame.
struct UavState {
    Vec3 position = Vec3::Zero();    // m, inertial
    Vec3 velocity = Vec3::Zero();    // m/s, inertial
    Vec3 attitude = Vec3::Zero();    // rad (roll, pitch, yaw)
    Vec3 body_rates = Vec3::Zero();  // rad/s
};

/// Disturbance carrier: force in the inertial frame, torque in the body frame.
struct Wrench {
    Vec3 force = Vec3::Zero();   // N
    Vec3 torque = Vec3::Zero();  // N m

    Wrench& operator+=(const Wrench& other) {
        force += other.force;
        torque += other.torque;
        return *this;
    }
};

/// Body-to-inertial rotation for ZYX (yaw-pitch-roll) Euler angles.
inline Mat3 rotation_matrix(const Vec3& attitude) {
    const double cr = std::cos(attitude.x()), sr = std::sin(attitude.x());
    const double cp = std::cos(attitude.y()), sp = std::sin(attitude.y());
    const double cy = std::cos(attitude.z()), sy = std::sin(attitude.z());
    Mat3 r;
    r << cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
         sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
         -sp,     cp * sr,                cp * cr;
    return r;
}

namespace detail {

// Euler ZYX kinematics: attitude rates from body rates.
inline Vec3 euler_rates(const Vec3& attitude, const Vec3& omega) {
    const double cr = std::cos(attitude.x()), sr = std::sin(attitude.x());
    const double cp = std::cos(attitude.y()), tp = std::tan(attitude.y());
    return {omega.x() + sr * tp * omega.y() + cr * tp * omega.z(),
            cr * omega.y() - sr * omega.z(),
            (sr * omega.y() + cr * omega.z()) / cp};
}

struct PlantDeriv {
    Vec3 dp, dv, datt, domega;
};

inline PlantDeriv plant_deriv(const UavState& s, double thrust, const Vec3& torque,
                              const Wrench& disturbance, const UavParams& params) {
    PlantDeriv d;
    d.dp = s.velocity;
    d.dv = Vec3(0.0, 0.0, -params.gravity) +
           rotation_matrix(s.attitude) * Vec3(0.0, 0.0, thrust) / params.mass +
           disturbance.force / params.mass;
    d.datt = euler_rates(s.attitude, s.body_rates);
    const Vec3 inertia = params.inertia_diag;
    const Vec3 i_omega = inertia.cwiseProduct(s.body_rates);
    d.domega = (torque + disturbance.torque - s.body_rates.cross(i_omega))
                   .cwiseQuotient(inertia);
    return d;
}

inline UavState advance(const UavState& s, const PlantDeriv& d, double dt) {
    UavState out;
    out.position = s.position + dt * d.dp;
    out.velocity = s.velocity + dt * d.dv;
    out.attitude = s.attitude + dt * d.datt;
    out.body_rates = s.body_rates + dt * d.domega;
    return out;
}

}  // namespace detail

/// One fixed-step RK4 integration of the rigid-body plant under constant
/// actuator commands and disturbance wrench.
inline UavState step_plant(const UavState& state, double thrust, const Vec3& torque,
                           const Wrench& disturbance, const UavParams& params,
                           double dt) {
    if (!(dt > 0.0)) {
        throw std::invalid_argument("step_plant: dt must be positive");
    }
    using detail::advance;
    using detail::plant_deriv;
    const auto k1 = plant_deriv(state, thrust, torque, disturbance, params);
    const auto k2 = plant_deriv(advance(state, k1, dt / 2), thrust, torque, disturbance, params);
    const auto k3 = plant_deriv(advance(state, k2, dt / 2), thrust, torque, disturbance, params);
    const auto k4 = plant_deriv(advance(state, k3, dt), thrust, torque, disturbance, params);

    UavState out;
    out.position = state.position +
                   dt / 6.0 * (k1.dp + 2 * k2.dp + 2 * k3.dp + k4.dp);
    out.velocity = state.velocity +
                   dt / 6.0 * (k1.dv + 2 * k2.dv + 2 * k3.dv + k4.dv);
    out.attitude = state.attitude +
                   dt / 6.0 * (k1.datt + 2 * k2.datt + 2 * k3.datt + k4.datt);
    out.body_rates = state.body_rates +
                     dt / 6.0 * (k1.domega + 2 * k2.domega + 2 * k3.domega + k4.domega);
    return out;
}

struct AttitudeThrustCmd {
    double roll = 0.0;    // rad
    double pitch = 0.0;   // rad
    double thrust = 0.0;  // N
};

/// Small-angle inversion of the translational dynamics: maps a commanded
/// inertial acceleration (gravity-compensated internally) and current yaw
/// to desired roll/pitch/thrust. Angles saturate at max_tilt, thrust at
/// [0, thrust_max].
inline AttitudeThrustCmd accel_to_attitude_thrust(const Vec3& accel_cmd, double yaw,
                                                  const UavParams& params) {
    const double cy = std::cos(yaw), sy = std::sin(yaw);
    // Rotate the horizontal command into the yawed frame.
    const double ax = cy * accel_cmd.x() + sy * accel_cmd.y();
    const double ay = -sy * accel_cmd.x() + cy * accel_cmd.y();

    AttitudeThrustCmd cmd;
    cmd.pitch = clamp(std::atan(ax / params.gravity), -params.max_tilt, params.max_tilt);
    cmd.roll = clamp(std::atan(-ay / params.gravity), -params.max_tilt, params.max_tilt);
    cmd.thrust = clamp(params.mass * (accel_cmd.z() + params.gravity), 0.0,
                       params.thrust_max());
    return cmd;
}

/// Forward counterpart of accel_to_attitude_thrust (small-angle thrust map);
/// exact inverse away from saturation.
inline Vec3 small_angle_accel(const AttitudeThrustCmd& cmd, double yaw,
                              const UavParams& params) {
    const double ax = params.gravity * std::tan(cmd.pitch);
    const double ay = -params.gravity * std::tan(cmd.roll);
    const double cy = std::cos(yaw), sy = std::sin(yaw);
    return {cy * ax - sy * ay, sy * ax + cy * ay,
            cmd.thrust / params.mass - params.gravity};
}

/// Inner-loop PID gains. Attitude gains are per axis (roll, pitch, yaw);
/// the *_t scalars drive the thrust channel, which corrects the vertical
/// acceleration loss under tilt. The attitude loop must settle well inside
/// one outer MPC period: the outer loop plans on an instantaneous-
/// acceleration model, and a slow attitude response turns that model error
/// into a limit cycle of the cascade. Torque saturation keeps large-error
/// transients at a physical differential-thrust scale.
struct PidGains {
    Vec3 kp{100.0, 100.0, 40.0};
    Vec3 ki{0.5, 0.5, 0.2};
    Vec3 kd{5.7, 5.7, 3.5};
    Vec3 torque_limit{5.0, 5.0, 2.0};
    double kp_t = 0.8;
    double ki_t = 0.0;
    double kd_t = 0.0;
    double integrator_limit = 0.5;

    bool valid() const {
        return (kp.array() >= 0.0).all() && (ki.array() >= 0.0).all() &&
               (kd.array() >= 0.0).all() && (torque_limit.array() > 0.0).all() &&
               kp_t >= 0.0 && ki_t >= 0.0 && kd_t >= 0.0 && integrator_limit > 0.0;
    }
};

/// Explicit inner-loop controller state. Values are carried between calls
/// by the caller; there is no hidden mutation.
struct PidState {
    Vec3 att_integral = Vec3::Zero();
    double thrust_integral = 0.0;
    double prev_thrust = -1.0;     // < 0 marks "no previous sample"
    double prev_thrust_err = 0.0;
    double yaw_setpoint = 0.0;
    double yaw_rate_setpoint = 0.0;
    bool initialized = false;
};

struct ActuatorCmd {
    double thrust = 0.0;  // N
    Vec3 torque = Vec3::Zero();
};

struct InnerLoopResult {
    ActuatorCmd cmd;
    PidState next;
};

inline double wrap_angle(double a) {
    while (a > kPi) a -= 2.0 * kPi;
    while (a < -kPi) a += 2.0 * kPi;
    return a;
}

/// One inner-loop step: converts the outer-loop command (3 translational
/// accelerations + yaw acceleration) to desired attitude/thrust and runs
/// the attitude and thrust PIDs.
inline InnerLoopResult inner_loop_step(const UavState& state, const Vec4& u_cmd,
                                       const PidGains& gains, const UavParams& params,
                                       double dt, PidState pid) {
    if (!pid.initialized) {
        pid.yaw_setpoint = state.attitude.z();
        pid.yaw_rate_setpoint = 0.0;
        pid.initialized = true;
    }

    // Yaw target integrates the commanded yaw acceleration.
    pid.yaw_setpoint += pid.yaw_rate_setpoint * dt + 0.5 * u_cmd(3) * dt * dt;
    pid.yaw_rate_setpoint += u_cmd(3) * dt;

    const AttitudeThrustCmd des =
        accel_to_attitude_thrust(u_cmd.head<3>(), pid.yaw_setpoint, params);

    const Vec3 att_err(des.roll - state.attitude.x(),
                       des.pitch - state.attitude.y(),
                       wrap_angle(pid.yaw_setpoint - state.attitude.z()));

    pid.att_integral += att_err * dt;
    pid.att_integral = pid.att_integral.cwiseMax(-gains.integrator_limit)
                           .cwiseMin(gains.integrator_limit);

    ActuatorCmd out;
    out.torque = gains.kp.cwiseProduct(att_err) +
                 gains.ki.cwiseProduct(pid.att_integral) -
                 gains.kd.cwiseProduct(state.body_rates);
    out.torque = out.torque.cwiseMax(-gains.torque_limit).cwiseMin(gains.torque_limit);

    // Thrust: feedforward plus correction of the vertical-acceleration
    // error left by the previously applied thrust at the current tilt.
    double thrust = des.thrust;
    if (pid.prev_thrust >= 0.0) {
        const double ct = std::cos(state.attitude.x()) * std::cos(state.attitude.y());
        const double az_real = pid.prev_thrust * ct / params.mass - params.gravity;
        const double err = u_cmd(2) - az_real;
        pid.thrust_integral = clamp(pid.thrust_integral + err * dt,
                                    -gains.integrator_limit, gains.integrator_limit);
        const double derr = (err - pid.prev_thrust_err) / dt;
        thrust += params.mass * (gains.kp_t * err + gains.ki_t * pid.thrust_integral +
                                 gains.kd_t * derr);
        pid.prev_thrust_err = err;
    }
    out.thrust = clamp(thrust, 0.0, params.thrust_max());
    pid.prev_thrust = out.thrust;

    return {out, pid};
}

}  // namespace tunnelmpc
