#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tunnelmpc/aero.hpp"
#include "tunnelmpc/cbf.hpp"
#include "tunnelmpc/dynamics.hpp"
#include "tunnelmpc/math.hpp"
#include "tunnelmpc/optimizer.hpp"

namespace tunnelmpc {

/// Reduced prediction state: the outer loop plans over position, velocity,
/// yaw and yaw rate; roll/pitch are delegated to the inner loop.
struct MpcState {
    Vec3 position = Vec3::Zero();
    Vec3 velocity = Vec3::Zero();
    double yaw = 0.0;
    double yaw_rate = 0.0;

    static MpcState from_uav(const UavState& s) {
        MpcState m;
        m.position = s.position;
        m.velocity = s.velocity;
        m.yaw = s.attitude.z();
        m.yaw_rate = s.body_rates.z();  // equals yaw rate at small tilt
        return m;
    }

    bool finite() const {
        return position.allFinite() && velocity.allFinite() && std::isfinite(yaw) &&
               std::isfinite(yaw_rate);
    }
};

struct MpcInput {
    Vec3 accel = Vec3::Zero();
    double yaw_accel = 0.0;

    Vec4 as_vec4() const { return Vec4(accel.x(), accel.y(), accel.z(), yaw_accel); }
};

enum class ControllerMode { kNaive, kHardConstraint, kCbf };
enum class ScenarioCase { kBoundRegion, kMinStandoff, kCloseProximity };

inline const char* to_string(ControllerMode m) {
    switch (m) {
        case ControllerMode::kNaive: return "naive";
        case ControllerMode::kHardConstraint: return "hc";
        case ControllerMode::kCbf: return "cbf";
    }
    return "unknown";
}

inline const char* to_string(ScenarioCase c) {
    switch (c) {
        case ScenarioCase::kBoundRegion: return "bound_region";
        case ScenarioCase::kMinStandoff: return "min_standoff";
        case ScenarioCase::kCloseProximity: return "close_proximity";
    }
    return "unknown";
}

/// Outer-loop configuration. Weights follow the diagonal w * I convention;
/// state bounds with infinite entries are skipped when constraints are
/// assembled.
struct MpcConfig {
    int horizon = 10;
    double t_s = 0.1;
    Vec3 w1 = Vec3::Constant(10.0);    // stage position weight
    Vec3 ws1 = Vec3::Constant(50.0);   // terminal position weight
    Vec3 w2 = Vec3::Constant(2.0);     // stage velocity weight
    Vec3 ws2 = Vec3::Constant(10.0);   // terminal velocity weight
    Vec3 pos_min = Vec3::Constant(-kInf);
    Vec3 pos_max = Vec3::Constant(kInf);
    Vec3 vel_min = Vec3::Constant(-2.0);
    Vec3 vel_max = Vec3::Constant(2.0);
    double yaw_rate_min = -2.0;
    double yaw_rate_max = 2.0;
    Vec3 u_min = Vec3::Constant(-3.0);
    Vec3 u_max = Vec3::Constant(3.0);
    double yaw_accel_min = -2.0;
    double yaw_accel_max = 2.0;
    ControllerMode mode = ControllerMode::kNaive;
    ScenarioCase scenario = ScenarioCase::kBoundRegion;
    SolveOptions solver;

    bool valid() const {
        return horizon >= 1 && t_s > 0.0 && (w1.array() >= 0.0).all() &&
               (ws1.array() >= 0.0).all() && (w2.array() >= 0.0).all() &&
               (ws2.array() >= 0.0).all() && (u_min.array() <= u_max.array()).all() &&
               (vel_min.array() <= vel_max.array()).all() &&
               (pos_min.array() <= pos_max.array()).all() &&
               yaw_accel_min <= yaw_accel_max && yaw_rate_min <= yaw_rate_max;
    }
};

/// Desired trajectory samples over one horizon: N+1 positions, velocities
/// and yaws.
struct ReferenceWindow {
    std::vector<Vec3> positions;
    std::vector<Vec3> velocities;
    std::vector<double> yaws;

    bool sized(int n_plus_1) const {
        return static_cast<int>(positions.size()) == n_plus_1 &&
               static_cast<int>(velocities.size()) == n_plus_1 &&
               static_cast<int>(yaws.size()) == n_plus_1;
    }
};

/// Exact discrete double-integrator rollout under piecewise-constant inputs.
inline std::vector<MpcState> predict(const MpcState& state,
                                     const std::vector<MpcInput>& inputs, double t_s) {
    std::vector<MpcState> out;
    out.reserve(inputs.size() + 1);
    out.push_back(state);
    MpcState s = state;
    for (const MpcInput& u : inputs) {
        MpcState n;
        n.position = s.position + s.velocity * t_s + 0.5 * u.accel * t_s * t_s;
        n.velocity = s.velocity + u.accel * t_s;
        n.yaw = s.yaw + s.yaw_rate * t_s + 0.5 * u.yaw_accel * t_s * t_s;
        n.yaw_rate = s.yaw_rate + u.yaw_accel * t_s;
        out.push_back(n);
        s = n;
    }
    return out;
}

inline double weighted_sqnorm(const Vec3& v, const Vec3& w_diag) {
    return w_diag.x() * v.x() * v.x() + w_diag.y() * v.y() * v.y() +
           w_diag.z() * v.z() * v.z();
}

/// Stage + terminal position-error cost over a predicted rollout.
inline double tracking_cost(const std::vector<MpcState>& predicted,
                            const ReferenceWindow& reference, const MpcConfig& config) {
    const int n = static_cast<int>(predicted.size()) - 1;
    double cost = 0.0;
    for (int i = 0; i < n; ++i) {
        cost += weighted_sqnorm(predicted[i].position - reference.positions[i], config.w1);
    }
    cost += weighted_sqnorm(predicted[n].position - reference.positions[n], config.ws1);
    return cost;
}

/// Stage + terminal velocity magnitude cost over a predicted rollout.
inline double velocity_cost(const std::vector<MpcState>& predicted,
                            const MpcConfig& config) {
    const int n = static_cast<int>(predicted.size()) - 1;
    double cost = 0.0;
    for (int i = 0; i < n; ++i) {
        cost += weighted_sqnorm(predicted[i].velocity, config.w2);
    }
    cost += weighted_sqnorm(predicted[n].velocity, config.ws2);
    return cost;
}

namespace detail {

inline std::vector<MpcInput> unpack_inputs(const VecX& u, int n) {
    std::vector<MpcInput> inputs(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        inputs[static_cast<std::size_t>(j)].accel =
            Vec3(u(4 * j), u(4 * j + 1), u(4 * j + 2));
        inputs[static_cast<std::size_t>(j)].yaw_accel = u(4 * j + 3);
    }
    return inputs;
}

// Shared rollout for all cost/constraint callables of one NLP instance:
// recomputed only when the decision vector changes.
struct RolloutContext {
    MpcState x0;
    ReferenceWindow ref;
    MpcConfig cfg;
    CbfParams cbf;
    TunnelGeometry geom;

    VecX cached_u;
    std::vector<MpcState> states;

    // Barrier values/gradients per (barrier, state index).
    struct Barrier {
        // 0..3: floor/ceiling/left/right wall; 4: bounding sphere
        int kind = 0;
        std::vector<HGrad> at;  // N+1 entries
        bool stale = true;
    };
    std::vector<Barrier> barriers;

    void ensure(const VecX& u) {
        if (cached_u.size() == u.size() && cached_u == u) return;
        cached_u = u;
        states = predict(x0, unpack_inputs(u, cfg.horizon), cfg.t_s);
        for (auto& b : barriers) b.stale = true;
    }

    const std::vector<HGrad>& barrier_values(int b_idx) {
        Barrier& b = barriers[static_cast<std::size_t>(b_idx)];
        if (!b.stale) return b.at;
        const int n = cfg.horizon;
        b.at.resize(static_cast<std::size_t>(n) + 1);
        for (int i = 0; i <= n; ++i) {
            const MpcState& s = states[static_cast<std::size_t>(i)];
            b.at[static_cast<std::size_t>(i)] = eval_barrier(b.kind, s, i);
        }
        b.stale = false;
        return b.at;
    }

    HGrad eval_barrier(int kind, const MpcState& s, int step) const {
        // Axis-aligned walls use the signed-distance continuation: the
        // barrier keeps decreasing behind the wall plane and the inward
        // normal never flips, which keeps rollout gradients consistent
        // however deep a trial plan cuts in.
        auto wall = [&](double signed_dist, double v_axis, int axis, double normal_sign) {
            const HGradSigned sg = h_wall_signed_extended(signed_dist,
                                                          normal_sign * v_axis, cbf);
            HGrad g;
            g.h = sg.h;
            g.dh_dp(axis) = normal_sign * sg.dh_ddist;
            g.dh_dv(axis) = normal_sign * sg.dh_dvn;
            return g;
        };
        switch (kind) {
            case 0:
                return wall(s.position.z(), s.velocity.z(), 2, 1.0);
            case 1:
                return wall(geom.height - s.position.z(), s.velocity.z(), 2, -1.0);
            case 2:
                return wall(s.position.y(), s.velocity.y(), 1, 1.0);
            case 3:
                return wall(geom.width - s.position.y(), s.velocity.y(), 1, -1.0);
            case 4:
            default: {
                const std::size_t i = static_cast<std::size_t>(step);
                return h_bounding_extended(s.position - ref.positions[i], s.velocity,
                                           ref.velocities[i], cbf);
            }
        }
    }
};

using ContextPtr = std::shared_ptr<RolloutContext>;

// d position_i / d u_j = t_s^2 (i - j - 1/2), d velocity_i / d u_j = t_s,
// for j < i; both zero otherwise.
inline double dpos_du(int i, int j, double t_s) {
    return j < i ? t_s * t_s * (static_cast<double>(i - j) - 0.5) : 0.0;
}
inline double dvel_du(int i, int j, double t_s) { return j < i ? t_s : 0.0; }

inline double objective_value(const ContextPtr& ctx, const VecX& u) {
    ctx->ensure(u);
    return tracking_cost(ctx->states, ctx->ref, ctx->cfg) +
           velocity_cost(ctx->states, ctx->cfg);
}

inline VecX objective_gradient(const ContextPtr& ctx, const VecX& u) {
    ctx->ensure(u);
    const MpcConfig& cfg = ctx->cfg;
    const int n = cfg.horizon;
    VecX g = VecX::Zero(4 * n);
    for (int i = 1; i <= n; ++i) {
        const Vec3 w_pos = (i == n ? cfg.ws1 : cfg.w1);
        const Vec3 w_vel = (i == n ? cfg.ws2 : cfg.w2);
        const std::size_t si = static_cast<std::size_t>(i);
        const Vec3 pe = 2.0 * w_pos.cwiseProduct(ctx->states[si].position -
                                                 ctx->ref.positions[si]);
        const Vec3 ve = 2.0 * w_vel.cwiseProduct(ctx->states[si].velocity);
        for (int j = 0; j < i; ++j) {
            const double dp = dpos_du(i, j, cfg.t_s);
            const double dv = dvel_du(i, j, cfg.t_s);
            g(4 * j) += pe.x() * dp + ve.x() * dv;
            g(4 * j + 1) += pe.y() * dp + ve.y() * dv;
            g(4 * j + 2) += pe.z() * dp + ve.z() * dv;
        }
    }
    return g;
}

// Chain rule through the rollout for a barrier quantity with gradients
// (dh_dp, dh_dv) at state index i.
inline void accumulate_state_grad(VecX& g, const HGrad& hg, int i, double t_s,
                                  double scale, int n) {
    (void)n;
    for (int j = 0; j < i; ++j) {
        const double dp = dpos_du(i, j, t_s);
        const double dv = dvel_du(i, j, t_s);
        g(4 * j) += scale * (hg.dh_dp.x() * dp + hg.dh_dv.x() * dv);
        g(4 * j + 1) += scale * (hg.dh_dp.y() * dp + hg.dh_dv.y() * dv);
        g(4 * j + 2) += scale * (hg.dh_dp.z() * dp + hg.dh_dv.z() * dv);
    }
}

}  // namespace detail

/// Mode- and case-specific inequality constraints over a predicted rollout,
/// expressed on the stacked input vector. State box bounds are appended
/// separately by the controller. An infeasible-at-start flag is raised when
/// a barrier is violated at the measured state.
struct ConstraintSet {
    std::vector<NlpProblem::Constraint> inequalities;
    bool infeasible_at_start = false;
    std::string reason;
};

/// Shared evaluation context for one NLP instance (also usable directly by
/// tests that inspect the assembled constraint set).
inline detail::ContextPtr make_rollout_context(const MpcState& state,
                                               const ReferenceWindow& reference,
                                               const MpcConfig& config,
                                               const CbfParams& cbf,
                                               const TunnelGeometry& geometry) {
    auto ctx = std::make_shared<detail::RolloutContext>();
    ctx->x0 = state;
    ctx->ref = reference;
    ctx->cfg = config;
    ctx->cbf = cbf;
    ctx->geom = geometry;
    return ctx;
}

inline ConstraintSet assemble_constraints(const detail::ContextPtr& ctx) {
    const MpcConfig& cfg = ctx->cfg;
    const CbfParams& cbf = ctx->cbf;
    const TunnelGeometry& geom = ctx->geom;
    const int n = cfg.horizon;
    ConstraintSet set;

    if (cfg.mode == ControllerMode::kNaive) {
        return set;
    }

    if (cfg.mode == ControllerMode::kHardConstraint) {
        if (cfg.scenario == ScenarioCase::kBoundRegion) {
            // || p_i - center_i || <= r for every predicted step.
            for (int i = 1; i <= n; ++i) {
                set.inequalities.push_back(
                    {[ctx, i](const VecX& u) {
                         ctx->ensure(u);
                         const std::size_t si = static_cast<std::size_t>(i);
                         return ctx->cbf.r - (ctx->states[si].position -
                                              ctx->ref.positions[si])
                                                 .norm();
                     },
                     [ctx, i, n](const VecX& u) {
                         ctx->ensure(u);
                         const std::size_t si = static_cast<std::size_t>(i);
                         const Vec3 e =
                             ctx->states[si].position - ctx->ref.positions[si];
                         const double nn = e.norm();
                         VecX g = VecX::Zero(4 * n);
                         if (nn > 1e-12) {
                             HGrad hg;
                             hg.dh_dp = -e / nn;
                             hg.dh_dv = Vec3::Zero();
                             detail::accumulate_state_grad(g, hg, i, ctx->cfg.t_s, 1.0, n);
                         }
                         return g;
                     }});
            }
        } else {
            // Wall distances at least d_s at every predicted step (linear).
            for (int w = 0; w < 4; ++w) {
                for (int i = 1; i <= n; ++i) {
                    set.inequalities.push_back(
                        {[ctx, w, i](const VecX& u) {
                             ctx->ensure(u);
                             const Vec4 d = ctx->geom.wall_distances(
                                 ctx->states[static_cast<std::size_t>(i)].position);
                             return d(w) - ctx->cbf.d_s;
                         },
                         [ctx, w, i, n](const VecX& u) {
                             ctx->ensure(u);
                             VecX g = VecX::Zero(4 * n);
                             HGrad hg;
                             const double sign = (w == 0 || w == 2) ? 1.0 : -1.0;
                             const int axis = (w < 2) ? 2 : 1;
                             hg.dh_dp = Vec3::Zero();
                             hg.dh_dp(axis) = sign;
                             detail::accumulate_state_grad(g, hg, i, ctx->cfg.t_s, 1.0, n);
                             return g;
                         }});
                }
            }
        }
        return set;
    }

    // CBF mode: invariance residuals along the rollout for the active
    // barriers. Case I uses the bounding barrier around the moving
    // reference; Cases II/III use the four wall barriers.
    std::vector<int> kinds;
    if (cfg.scenario == ScenarioCase::kBoundRegion) {
        kinds = {4};
    } else {
        kinds = {0, 1, 2, 3};
    }

    // Domain check at the measured state.
    for (int kind : kinds) {
        if (kind == 4) {
            const double dist = (ctx->x0.position - ctx->ref.positions[0]).norm();
            if (dist >= cbf.r) {
                set.infeasible_at_start = true;
                set.reason = "bounding barrier violated at measured state";
                return set;
            }
        } else {
            const Vec4 d = geom.wall_distances(ctx->x0.position);
            if (d(kind) <= cbf.d_s) {
                set.infeasible_at_start = true;
                set.reason = "wall barrier violated at measured state";
                return set;
            }
        }
    }

    int b_idx = 0;
    ctx->barriers.clear();
    for (int kind : kinds) {
        detail::RolloutContext::Barrier b;
        b.kind = kind;
        ctx->barriers.push_back(b);
        for (int i = 0; i < n; ++i) {
            set.inequalities.push_back(
                {[ctx, b_idx, i](const VecX& u) {
                     ctx->ensure(u);
                     const auto& hs = ctx->barrier_values(b_idx);
                     return invariance_residual(hs[static_cast<std::size_t>(i)].h,
                                                hs[static_cast<std::size_t>(i + 1)].h,
                                                ctx->cfg.t_s, ctx->cbf);
                 },
                 [ctx, b_idx, i, n](const VecX& u) {
                     ctx->ensure(u);
                     const auto& hs = ctx->barrier_values(b_idx);
                     const double ts = ctx->cfg.t_s;
                     const double h_now = hs[static_cast<std::size_t>(i)].h;
                     VecX g = VecX::Zero(4 * n);
                     // d/du [ (h_{i+1} - h_i)/ts + gamma (h_i^z - lambda) ]
                     detail::accumulate_state_grad(g, hs[static_cast<std::size_t>(i + 1)],
                                                   i + 1, ts, 1.0 / ts, n);
                     const double dh_i_scale =
                         -1.0 / ts + ctx->cbf.gamma * ctx->cbf.z_exp *
                                         detail::ipow(h_now, ctx->cbf.z_exp - 1);
                     if (i > 0) {
                         detail::accumulate_state_grad(g, hs[static_cast<std::size_t>(i)],
                                                       i, ts, dh_i_scale, n);
                     }
                     return g;
                 }});
        }
        ++b_idx;
    }
    return set;
}

struct MpcDiagnostics {
    SolveStatus status = SolveStatus::kConverged;
    bool fallback = false;
    bool qp_relaxed = false;
    int iterations = 0;
    double objective = 0.0;
    double max_violation = 0.0;
};

/// Receding-horizon controller: builds the NLP over the stacked input
/// sequence, solves it, applies the first input, and carries the shifted
/// plan and the Hessian estimate to the next step. Falls back to maximal
/// braking when the problem is infeasible at the start or the solver
/// reports infeasibility.
class MpcController {
public:
    MpcController(const MpcConfig& config, const CbfParams& cbf,
                  const TunnelGeometry& geometry)
        : cfg_(config), cbf_(cbf), geom_(geometry) {
        // Each solve restarts from the exact cost Hessian: carrying the
        // BFGS estimate across steps lets stale constraint curvature poison
        // later solves when the active boundary set shifts.
        solver_.set_initial_hessian(cost_hessian());
    }

    /// Exact (constant) Hessian of the quadratic stage costs over the
    /// stacked input vector; the cost-free yaw block gets a small ridge to
    /// keep it positive definite.
    MatX cost_hessian() const {
        const int n = cfg_.horizon;
        MatX h = MatX::Zero(4 * n, 4 * n);
        for (int i = 1; i <= n; ++i) {
            const Vec3 w_pos = (i == n ? cfg_.ws1 : cfg_.w1);
            const Vec3 w_vel = (i == n ? cfg_.ws2 : cfg_.w2);
            for (int j = 0; j < i; ++j) {
                const double dpj = detail::dpos_du(i, j, cfg_.t_s);
                const double dvj = detail::dvel_du(i, j, cfg_.t_s);
                for (int k = 0; k < i; ++k) {
                    const double dpk = detail::dpos_du(i, k, cfg_.t_s);
                    const double dvk = detail::dvel_du(i, k, cfg_.t_s);
                    for (int a = 0; a < 3; ++a) {
                        h(4 * j + a, 4 * k + a) +=
                            2.0 * (w_pos(a) * dpj * dpk + w_vel(a) * dvj * dvk);
                    }
                }
            }
        }
        h.diagonal().array() += 1e-3;
        return h;
    }

    struct StepResult {
        MpcInput input;
        MpcDiagnostics diag;
    };

    /// Build the NLP for one step (exposed for tests and audits).
    NlpProblem make_problem(const MpcState& state, const ReferenceWindow& reference,
                            bool* infeasible_at_start = nullptr,
                            std::string* reason = nullptr) const {
        auto ctx = std::make_shared<detail::RolloutContext>();
        ctx->x0 = state;
        ctx->ref = reference;
        ctx->cfg = cfg_;
        ctx->cbf = cbf_;
        ctx->geom = geom_;

        NlpProblem p;
        const int n = cfg_.horizon;
        p.dim = 4 * n;
        p.objective = [ctx](const VecX& u) { return detail::objective_value(ctx, u); };
        p.objective_gradient = [ctx](const VecX& u) {
            return detail::objective_gradient(ctx, u);
        };
        p.lower.resize(4 * n);
        p.upper.resize(4 * n);
        for (int j = 0; j < n; ++j) {
            p.lower.segment<3>(4 * j) = cfg_.u_min;
            p.upper.segment<3>(4 * j) = cfg_.u_max;
            p.lower(4 * j + 3) = cfg_.yaw_accel_min;
            p.upper(4 * j + 3) = cfg_.yaw_accel_max;
        }

        ConstraintSet set = assemble_constraints(ctx);
        if (infeasible_at_start) *infeasible_at_start = set.infeasible_at_start;
        if (reason) *reason = set.reason;
        p.inequalities = std::move(set.inequalities);
        append_state_bounds(ctx, p);
        return p;
    }

    StepResult solve_step(const MpcState& state, const ReferenceWindow& reference) {
        if (!state.finite()) {
            throw std::invalid_argument("MpcController::solve_step: non-finite state");
        }
        if (!reference.sized(cfg_.horizon + 1)) {
            throw std::invalid_argument("MpcController::solve_step: reference window size");
        }

        bool infeasible_start = false;
        std::string reason;
        // Pursuit hysteresis: once the bounding barrier has been violated,
        // keep chasing the reference until safely back inside the region,
        // rather than flip-flopping at the boundary.
        if (pursuit_active_) {
            if ((state.position - reference.positions[0]).norm() > 0.7 * cbf_.r) {
                StepResult out;
                fallback_step(state, reference, out);
                return out;
            }
            pursuit_active_ = false;
        }
        const NlpProblem problem = make_problem(state, reference, &infeasible_start, &reason);

        StepResult out;
        if (infeasible_start) {
            if (cfg_.mode == ControllerMode::kCbf &&
                cfg_.scenario == ScenarioCase::kBoundRegion) {
                pursuit_active_ = true;
            }
            fallback_step(state, reference, out);
            return out;
        }

        VecX x0 = VecX::Zero(4 * cfg_.horizon);
        if (have_warm_) {
            x0.head(4 * (cfg_.horizon - 1)) = warm_.tail(4 * (cfg_.horizon - 1));
            x0.tail(4) = warm_.tail(4);
        }

        const NlpSolution sol = solver_.solve(problem, x0, cfg_.solver);
        out.diag.status = sol.status;
        out.diag.qp_relaxed = sol.qp_relaxed;
        out.diag.iterations = sol.iterations;
        out.diag.objective = sol.objective;
        out.diag.max_violation = sol.max_constraint_violation;

        if (sol.status == SolveStatus::kInfeasible) {
            fallback_step(state, reference, out);
            return out;
        }

        out.input.accel = sol.x.segment<3>(0);
        out.input.yaw_accel = sol.x(3);
        warm_ = sol.x;
        have_warm_ = true;
        last_plan_ = sol.x;
        return out;
    }

    /// Safety fallback. The Case I bounding barrier falls back to an
    /// unconstrained tracking step: braking while the region center moves on
    /// would lock the vehicle out of the moving safe sphere permanently.
    /// Wall barriers brake, with the component along the most-endangered
    /// wall axis replaced by a full escape push: velocity-opposing braking
    /// alone decays to zero input and leaves the vehicle to the wall's pull.
    void fallback_step(const MpcState& state, const ReferenceWindow& reference,
                       StepResult& out) {
        out.diag.status = SolveStatus::kInfeasible;
        out.diag.fallback = true;
        have_warm_ = false;
        if (cfg_.mode == ControllerMode::kCbf &&
            cfg_.scenario == ScenarioCase::kBoundRegion) {
            if (!pursuit_) {
                MpcConfig naive_cfg = cfg_;
                naive_cfg.mode = ControllerMode::kNaive;
                pursuit_ = std::make_unique<MpcController>(naive_cfg, cbf_, geom_);
            }
            const StepResult res = pursuit_->solve_step(state, reference);
            if (!res.diag.fallback) {
                out.input = res.input;
                return;
            }
        }
        if (cfg_.scenario == ScenarioCase::kBoundRegion) {
            out.input = braking_input(state);
            return;
        }
        // Escape along the axis of the wall with the smallest barrier value;
        // other axes keep a mild velocity damp so transverse cruise survives
        // the fallback step.
        const Vec4 d = geom_.wall_distances(state.position);
        double h_min = kInf;
        int wall = 0;
        for (int w = 0; w < 4; ++w) {
            const double v_axis = (w < 2) ? state.velocity.z() : state.velocity.y();
            const double sign = (w == 0 || w == 2) ? 1.0 : -1.0;
            const double h = h_wall_signed_extended(d(w), sign * v_axis, cbf_).h;
            if (h < h_min) {
                h_min = h;
                wall = w;
            }
        }
        const int axis = (wall < 2) ? 2 : 1;
        const double inward = (wall == 0 || wall == 2) ? 1.0 : -1.0;
        out.input.accel = -1.0 * state.velocity;
        out.input.accel(axis) = inward * cbf_.a_max;
        out.input.accel = out.input.accel.cwiseMax(cfg_.u_min).cwiseMin(cfg_.u_max);
        out.input.yaw_accel = 0.0;
    }

    void reset() {
        have_warm_ = false;
        solver_.reset_hessian();
        last_plan_.resize(0);
    }

    const VecX& last_plan() const { return last_plan_; }
    const MpcConfig& config() const { return cfg_; }
    const CbfParams& cbf_params() const { return cbf_; }

    MpcInput braking_input(const MpcState& state) const {
        MpcInput u;
        const double speed = state.velocity.norm();
        if (speed > 1e-9) {
            u.accel = (-cbf_.a_max / speed) * state.velocity;
        }
        u.accel = u.accel.cwiseMax(cfg_.u_min).cwiseMin(cfg_.u_max);
        u.yaw_accel = 0.0;
        return u;
    }

private:
    void append_state_bounds(const detail::ContextPtr& ctx, NlpProblem& p) const {
        const int n = cfg_.horizon;
        struct Axis {
            int axis;        // 0..2 position/velocity component, 3 = yaw rate
            bool is_velocity;
            double lo, hi;
        };
        std::vector<Axis> axes;
        for (int a = 0; a < 3; ++a) {
            axes.push_back({a, false, cfg_.pos_min(a), cfg_.pos_max(a)});
            axes.push_back({a, true, cfg_.vel_min(a), cfg_.vel_max(a)});
        }
        axes.push_back({3, true, cfg_.yaw_rate_min, cfg_.yaw_rate_max});

        for (const Axis& ax : axes) {
            for (int i = 1; i <= n; ++i) {
                auto value_of = [ax](const MpcState& s) {
                    if (ax.axis == 3) return s.yaw_rate;
                    return ax.is_velocity ? s.velocity(ax.axis) : s.position(ax.axis);
                };
                if (ax.lo > -kInf) {
                    p.inequalities.push_back(
                        {[ctx, i, value_of, lo = ax.lo](const VecX& u) {
                             ctx->ensure(u);
                             return value_of(ctx->states[static_cast<std::size_t>(i)]) - lo;
                         },
                         bound_gradient(ctx, i, ax, 1.0)});
                }
                if (ax.hi < kInf) {
                    p.inequalities.push_back(
                        {[ctx, i, value_of, hi = ax.hi](const VecX& u) {
                             ctx->ensure(u);
                             return hi - value_of(ctx->states[static_cast<std::size_t>(i)]);
                         },
                         bound_gradient(ctx, i, ax, -1.0)});
                }
            }
        }
    }

    template <typename AxisT>
    std::function<VecX(const VecX&)> bound_gradient(const detail::ContextPtr& ctx, int i,
                                                    const AxisT& ax, double sign) const {
        const int n = cfg_.horizon;
        const double ts = cfg_.t_s;
        return [ctx, i, ax, sign, n, ts](const VecX&) {
            VecX g = VecX::Zero(4 * n);
            if (ax.axis == 3) {
                for (int j = 0; j < i; ++j) g(4 * j + 3) = sign * ts;
                return g;
            }
            for (int j = 0; j < i; ++j) {
                const double d = ax.is_velocity ? detail::dvel_du(i, j, ts)
                                                : detail::dpos_du(i, j, ts);
                g(4 * j + ax.axis) = sign * d;
            }
            return g;
        };
    }

    MpcConfig cfg_;
    CbfParams cbf_;
    TunnelGeometry geom_;
    SqpSolver solver_;
    VecX warm_;
    bool have_warm_ = false;
    VecX last_plan_;
    std::unique_ptr<MpcController> pursuit_;  // Case I re-entry fallback
    bool pursuit_active_ = false;
};

}  // namespace tunnelmpc
