#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tunnelmpc/cbf.hpp"
#include "tunnelmpc/math.hpp"

namespace tunnelmpc {

/// Double-integrator test bed for the discrete invariance condition: a
/// single-axis vehicle in front of a wall, driven by a random controller
/// that projects its input onto the residual constraint each step, with a
/// bounded additive acceleration disturbance the controller cannot see.
struct HarnessConfig {
    CbfParams cbf;         // lambda is the quantity under test
    double d_m = 0.8;      // disturbance bound, m/s^2
    double dt = 0.1;       // step, s
    int steps = 200;
    // initial-state sampling box (distance beyond d_s, velocity)
    double init_gap_min = 0.3;
    double init_gap_max = 3.0;
    double init_speed = 1.0;

    HarnessConfig() {
        cbf.a_max = 3.0;
        cbf.gamma = 3.0;
        cbf.z_exp = 3;
        cbf.lambda = 0.0;
        cbf.d_s = 0.1;
    }
};

struct EpisodeResult {
    double min_h = kInf;
    bool violated = false;
};

namespace detail {

inline double harness_h(double dist, double vel, const CbfParams& p) {
    return std::sqrt(2.0 * p.a_max * std::fmax(0.0, dist - p.d_s)) + vel;
}

// Smallest input in [-a_max, a_max] no larger than u_des that satisfies the
// one-step residual; falls back to +a_max when even full braking fails.
inline double project_input(double dist, double vel, double u_des,
                            const HarnessConfig& cfg) {
    const CbfParams& p = cfg.cbf;
    const double h_now = harness_h(dist, vel, p);
    auto residual_at = [&](double u) {
        const double d1 = dist + vel * cfg.dt + 0.5 * u * cfg.dt * cfg.dt;
        const double v1 = vel + u * cfg.dt;
        return invariance_residual(h_now, harness_h(d1, v1, p), cfg.dt, p);
    };
    if (residual_at(u_des) >= 0.0) return u_des;
    if (residual_at(p.a_max) < 0.0) return p.a_max;  // best effort
    // residual is monotone in u (pushing away raises the next barrier value)
    double lo = u_des, hi = p.a_max;
    for (int i = 0; i < 40; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (residual_at(mid) >= 0.0) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return hi;
}

}  // namespace detail

/// One episode: returns the minimum true barrier value reached under the
/// disturbed dynamics.
inline EpisodeResult run_invariance_episode(const HarnessConfig& cfg, RandomStream& rng) {
    const CbfParams& p = cfg.cbf;
    double dist = p.d_s + rng.uniform(cfg.init_gap_min, cfg.init_gap_max);
    double vel = rng.uniform(-cfg.init_speed, cfg.init_speed);
    // start strictly inside the safe set
    if (detail::harness_h(dist, vel, p) <= 0.1) {
        vel = 0.0;
    }

    EpisodeResult out;
    for (int k = 0; k < cfg.steps; ++k) {
        const double u_des = rng.uniform(-p.a_max, p.a_max);
        const double u = detail::project_input(dist, vel, u_des, cfg);
        const double w = rng.uniform(-cfg.d_m, cfg.d_m);
        const double a = u + w;
        dist += vel * cfg.dt + 0.5 * a * cfg.dt * cfg.dt;
        vel += a * cfg.dt;
        const double h = dist > p.d_s
                             ? detail::harness_h(dist, vel, p)
                             : -std::sqrt(2.0 * p.a_max * (p.d_s - dist)) + vel;
        out.min_h = std::fmin(out.min_h, h);
    }
    out.violated = out.min_h < 0.0;
    return out;
}

struct HarnessSummary {
    int episodes = 0;
    int violations = 0;
    double min_h = kInf;
};

inline HarnessSummary run_invariance_harness(const HarnessConfig& cfg, int episodes,
                                             std::uint64_t seed) {
    HarnessSummary s;
    s.episodes = episodes;
    RandomStream rng(seed);
    for (int i = 0; i < episodes; ++i) {
        RandomStream ep = rng.fork("episode" + std::to_string(i));
        const EpisodeResult r = run_invariance_episode(cfg, ep);
        s.min_h = std::fmin(s.min_h, r.min_h);
        if (r.violated) ++s.violations;
    }
    return s;
}

struct LambdaCalibration {
    double lambda = 0.0;
    struct Probe {
        double lambda;
        int violations;
        double min_h;
    };
    std::vector<Probe> trace;
};

/// Smallest lambda (to `tol`) with zero violations across the harness at the
/// given disturbance bound; bisection over [0, lambda_hi].
inline LambdaCalibration calibrate_lambda(HarnessConfig cfg, int episodes,
                                          std::uint64_t seed, double lambda_hi = 4.0,
                                          double tol = 0.01) {
    LambdaCalibration out;
    auto probe = [&](double lambda) {
        cfg.cbf.lambda = lambda;
        const HarnessSummary s = run_invariance_harness(cfg, episodes, seed);
        out.trace.push_back({lambda, s.violations, s.min_h});
        return s.violations == 0;
    };
    if (probe(0.0)) {
        out.lambda = 0.0;
        return out;
    }
    double lo = 0.0, hi = lambda_hi;
    if (!probe(hi)) {
        out.lambda = hi;  // bound too small for this disturbance level
        return out;
    }
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        if (probe(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    out.lambda = hi;
    return out;
}

}  // namespace tunnelmpc
