#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "tunnelmpc/math.hpp"

namespace tunnelmpc {

/// Dense nonlinear program: minimize objective(x) subject to
/// inequality(x) >= 0 for every constraint and lower <= x <= upper.
/// Gradients are optional; missing ones fall back to central finite
/// differences of the callable.
struct NlpProblem {
    struct Constraint {
        std::function<double(const VecX&)> value;
        std::function<VecX(const VecX&)> gradient;  // optional
    };

    int dim = 0;
    std::function<double(const VecX&)> objective;
    std::function<VecX(const VecX&)> objective_gradient;  // optional
    std::vector<Constraint> inequalities;
    VecX lower;  // empty means unbounded
    VecX upper;
};

enum class SolveStatus { kConverged, kMaxIterations, kInfeasible };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::kConverged: return "converged";
        case SolveStatus::kMaxIterations: return "max_iterations";
        case SolveStatus::kInfeasible: return "infeasible";
    }
    return "unknown";
}

struct NlpSolution {
    VecX x;
    double objective = std::numeric_limits<double>::quiet_NaN();
    SolveStatus status = SolveStatus::kMaxIterations;
    int iterations = 0;
    double max_constraint_violation = 0.0;
    bool qp_relaxed = false;
    std::string diagnostic;
};

struct SolveOptions {
    int max_iter = 50;
    double tol_opt = 1e-6;
    double tol_feas = 1e-6;
    double fd_step = 1e-7;
    int max_line_search = 30;
    /// Throw std::logic_error if an accepted step increases the merit
    /// function (enabled by tests).
    bool check_merit_monotone = false;
    /// Print one line per iteration to stderr.
    bool trace = false;
};

/// Central finite differences with per-coordinate step max(step, step*|x_i|).
inline VecX finite_difference_gradient(const std::function<double(const VecX&)>& f,
                                       const VecX& x, double step) {
    VecX g(x.size());
    VecX xp = x;
    for (int i = 0; i < x.size(); ++i) {
        const double h = std::fmax(step, step * std::fabs(x(i)));
        xp(i) = x(i) + h;
        const double fp = f(xp);
        xp(i) = x(i) - h;
        const double fm = f(xp);
        xp(i) = x(i);
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw std::runtime_error(
                "finite_difference_gradient: non-finite sample at coordinate " +
                std::to_string(i));
        }
        g(i) = (fp - fm) / (2.0 * h);
    }
    return g;
}

struct QpOptions {
    double tol = 1e-8;
    int max_iterations = 0;  // 0 = automatic from problem size
    double elastic_rho = 0.0;  // 0 = automatic
};

struct QpResult {
    VecX step;
    VecX multipliers;  // one per general constraint row, >= 0
    bool relaxed = false;
    bool solved = false;
    int iterations = 0;
};

namespace detail {

// Dual active-set method for strictly convex QPs (Goldfarb-Idnani scheme
// with dense refactorization, adequate at this problem scale):
//   minimize 1/2 d' B d + g' d   s.t.  rows(i)' d >= rhs(i).
// Starts from the unconstrained minimizer and adds violated constraints one
// at a time; reports infeasibility when no primal step can satisfy a
// violated constraint.
class DualActiveSetQp {
public:
    DualActiveSetQp(const MatX& hessian, const VecX& grad, MatX rows, VecX rhs,
                    double tol)
        : b_(hessian), rows_(std::move(rows)), rhs_(std::move(rhs)), tol_(tol) {
        llt_.compute(b_);
        if (llt_.info() != Eigen::Success) {
            // BFGS keeps the Hessian positive definite; a tiny ridge guards
            // against accumulated roundoff.
            MatX reg = b_;
            reg.diagonal().array() += 1e-10 * (1.0 + b_.diagonal().cwiseAbs().maxCoeff());
            llt_.compute(reg);
        }
        x_ = llt_.solve(-grad);
    }

    bool run(int max_iterations) {
        const int m = static_cast<int>(rows_.rows());
        active_.clear();
        duals_.clear();
        if (max_iterations <= 0) max_iterations = 10 * (static_cast<int>(x_.size()) + m) + 20;

        for (int iter = 0; iter < max_iterations; ++iter) {
            iterations_ = iter + 1;
            // Most violated inactive constraint.
            int p = -1;
            double worst = -tol_;
            for (int k = 0; k < m; ++k) {
                if (is_active(k)) continue;
                const double s = rows_.row(k).dot(x_) - rhs_(k);
                if (s < worst) {
                    worst = s;
                    p = k;
                }
            }
            if (p < 0) return true;  // primal feasible => optimal

            double u_p = 0.0;
            for (;;) {
                const VecX n_plus = rows_.row(p).transpose();
                VecX z, r;
                step_directions(n_plus, z, r);

                // Partial step: first active dual driven to zero.
                double t1 = kInf;
                int drop = -1;
                for (std::size_t j = 0; j < active_.size(); ++j) {
                    if (r(static_cast<int>(j)) > tol_) {
                        const double t = duals_[j] / r(static_cast<int>(j));
                        if (t < t1) {
                            t1 = t;
                            drop = static_cast<int>(j);
                        }
                    }
                }
                // Full step: violated constraint reaches feasibility.
                const double s_p = rows_.row(p).dot(x_) - rhs_(p);
                const double zn = n_plus.dot(z);
                const double t2 = zn > tol_ ? -s_p / zn : kInf;

                const double t = std::fmin(t1, t2);
                if (!std::isfinite(t)) return false;  // inconsistent constraints

                if (t2 == kInf) {
                    // Dual-only step.
                    for (std::size_t j = 0; j < active_.size(); ++j) {
                        duals_[j] -= t * r(static_cast<int>(j));
                    }
                    u_p += t;
                    remove_active(drop);
                    continue;
                }

                x_ += t * z;
                for (std::size_t j = 0; j < active_.size(); ++j) {
                    duals_[j] -= t * r(static_cast<int>(j));
                }
                u_p += t;

                if (t == t2) {
                    active_.push_back(p);
                    duals_.push_back(u_p);
                    break;
                }
                remove_active(drop);
            }
        }
        return max_violation() <= 1e3 * tol_;  // iteration cap: accept if near-feasible
    }

    const VecX& solution() const { return x_; }
    int iterations() const { return iterations_; }

    double max_violation() const {
        double v = 0.0;
        for (int k = 0; k < rows_.rows(); ++k) {
            v = std::fmax(v, rhs_(k) - rows_.row(k).dot(x_));
        }
        return v;
    }

    VecX all_duals(int m) const {
        VecX u = VecX::Zero(m);
        for (std::size_t j = 0; j < active_.size(); ++j) {
            u(active_[j]) = duals_[j];
        }
        return u;
    }

private:
    bool is_active(int k) const {
        return std::find(active_.begin(), active_.end(), k) != active_.end();
    }

    void remove_active(int j) {
        active_.erase(active_.begin() + j);
        duals_.erase(duals_.begin() + j);
    }

    // z: primal direction, r: rate of change of the active duals when the
    // incoming normal is added with unit dual.
    void step_directions(const VecX& n_plus, VecX& z, VecX& r) const {
        const VecX bn = llt_.solve(n_plus);
        const int q = static_cast<int>(active_.size());
        if (q == 0) {
            z = bn;
            r.resize(0);
            return;
        }
        MatX n_mat(x_.size(), q);
        for (int j = 0; j < q; ++j) {
            n_mat.col(j) = rows_.row(active_[static_cast<std::size_t>(j)]).transpose();
        }
        const MatX z_mat = llt_.solve(n_mat);
        MatX m_mat = n_mat.transpose() * z_mat;
        m_mat.diagonal().array() += 1e-14;
        r = m_mat.ldlt().solve(n_mat.transpose() * bn);
        z = bn - z_mat * r;
    }

    MatX b_;
    Eigen::LLT<MatX> llt_;
    MatX rows_;
    VecX rhs_;
    double tol_;
    VecX x_;
    std::vector<int> active_;
    std::vector<double> duals_;
    int iterations_ = 0;
};

// Assemble normalized constraint rows for the QP: general rows a_i' d >= -c_i
// followed by finite bound rows on d.
inline void build_qp_rows(const MatX& jac, const VecX& cvals, const VecX& lower,
                          const VecX& upper, MatX& rows, VecX& rhs,
                          VecX& row_scale, int& n_general) {
    const int n = static_cast<int>(jac.cols() > 0 ? jac.cols() : lower.size());
    const int mg = static_cast<int>(jac.rows());
    int nb = 0;
    for (int i = 0; i < lower.size(); ++i) {
        if (lower(i) > -kInf) ++nb;
    }
    for (int i = 0; i < upper.size(); ++i) {
        if (upper(i) < kInf) ++nb;
    }
    rows.setZero(mg + nb, n);
    rhs.setZero(mg + nb);
    row_scale.setOnes(mg + nb);
    for (int i = 0; i < mg; ++i) {
        double s = jac.row(i).norm();
        if (s < 1e-14) s = 1.0;
        rows.row(i) = jac.row(i) / s;
        rhs(i) = -cvals(i) / s;
        row_scale(i) = s;
    }
    int k = mg;
    for (int i = 0; i < lower.size(); ++i) {
        if (lower(i) > -kInf) {
            rows(k, i) = 1.0;
            rhs(k) = lower(i);
            ++k;
        }
    }
    for (int i = 0; i < upper.size(); ++i) {
        if (upper(i) < kInf) {
            rows(k, i) = -1.0;
            rhs(k) = -upper(i);
            ++k;
        }
    }
    n_general = mg;
}

}  // namespace detail

/// Solve the convex QP  min 1/2 d' H d + grad' d  subject to
/// jac d + cvals >= 0 and lower <= d <= upper (elementwise; pass empty
/// vectors for no bounds). If the linearized constraints are inconsistent,
/// re-solves a relaxed problem with elastic slack variables and flags it.
inline QpResult qp_subproblem(const MatX& hessian, const VecX& grad, const MatX& jac,
                              const VecX& cvals, const VecX& lower, const VecX& upper,
                              const QpOptions& opts = {}) {
    const int n = static_cast<int>(hessian.rows());
    MatX rows;
    VecX rhs, row_scale;
    int mg = 0;
    detail::build_qp_rows(jac, cvals, lower, upper, rows, rhs, row_scale, mg);

    QpResult out;
    {
        detail::DualActiveSetQp qp(hessian, grad, rows, rhs, opts.tol);
        if (qp.run(opts.max_iterations)) {
            out.step = qp.solution();
            const VecX duals = qp.all_duals(static_cast<int>(rows.rows()));
            out.multipliers = VecX::Zero(mg);
            for (int i = 0; i < mg; ++i) out.multipliers(i) = duals(i) / row_scale(i);
            out.solved = true;
            out.iterations = qp.iterations();
            return out;
        }
        out.iterations = qp.iterations();
    }

    // Elastic relaxation: slack variables on the constraints violated at
    // d = 0 (the rows a consistent linearization could fail on),
    // min 1/2 d'Hd + g'd + rho/2 ||s||^2 with a_i d + c_i + s_i >= 0,
    // s >= 0. Always feasible; signals near-infeasibility upstream.
    const double rho = opts.elastic_rho > 0.0
                           ? opts.elastic_rho
                           : 1e4 * (1.0 + grad.cwiseAbs().maxCoeff());
    std::vector<int> slack_rows;
    for (int i = 0; i < mg; ++i) {
        if (rhs(i) > 0.0) slack_rows.push_back(i);  // c_i < 0
    }
    const int ms = static_cast<int>(slack_rows.size());
    const int dim = n + ms;
    MatX h2 = MatX::Zero(dim, dim);
    h2.topLeftCorner(n, n) = hessian;
    h2.bottomRightCorner(ms, ms) = rho * MatX::Identity(ms, ms);
    VecX g2 = VecX::Zero(dim);
    g2.head(n) = grad;

    const int total = static_cast<int>(rows.rows());
    MatX rows2 = MatX::Zero(total + ms, dim);
    VecX rhs2 = VecX::Zero(total + ms);
    rows2.topLeftCorner(total, n) = rows;
    rhs2.head(total) = rhs;
    for (int k = 0; k < ms; ++k) {
        rows2(slack_rows[static_cast<std::size_t>(k)], n + k) =
            1.0 / row_scale(slack_rows[static_cast<std::size_t>(k)]);
        rows2(total + k, n + k) = 1.0;  // s_k >= 0
    }

    detail::DualActiveSetQp qp2(h2, g2, rows2, rhs2, opts.tol);
    if (!qp2.run(opts.max_iterations)) {
        out.solved = false;
        return out;
    }
    out.step = qp2.solution().head(n);
    const VecX duals = qp2.all_duals(static_cast<int>(rows2.rows()));
    out.multipliers = VecX::Zero(mg);
    for (int i = 0; i < mg; ++i) out.multipliers(i) = duals(i) / row_scale(i);
    out.relaxed = true;
    out.solved = true;
    out.iterations += qp2.iterations();
    return out;
}

/// SQP solver in the SLSQP mold: BFGS-approximated Hessian, linearized
/// inequality constraints, box bounds, and an l1-merit backtracking line
/// search. Instances hold per-solve scratch state (and optionally carry the
/// Hessian estimate across solves); a single instance is not re-entrant.
class SqpSolver {
public:
    /// Keep the BFGS matrix across solve() calls with matching dimension.
    /// Useful for receding-horizon re-solves of the same problem family.
    void set_hessian_carryover(bool on) { carry_hessian_ = on; }
    void reset_hessian() { bfgs_.resize(0, 0); }

    /// Seed for the BFGS approximation (must be positive definite); used
    /// whenever no carried estimate is available. Callers with quadratic
    /// objectives can pass the exact Hessian.
    void set_initial_hessian(const MatX& b0) { initial_hessian_ = b0; }

    NlpSolution solve(const NlpProblem& problem, const VecX& x0,
                      const SolveOptions& opts = {}) {
        const int n = problem.dim;
        if (x0.size() != n) {
            throw std::invalid_argument("SqpSolver::solve: x0 has wrong dimension");
        }
        const VecX lo = problem.lower.size() == n
                            ? problem.lower
                            : VecX::Constant(n, -kInf);
        const VecX hi = problem.upper.size() == n ? problem.upper : VecX::Constant(n, kInf);

        NlpSolution sol;
        VecX x = x0.cwiseMax(lo).cwiseMin(hi);

        double f = 0.0;
        VecX c;
        std::string domain_msg;
        if (!eval_point(problem, x, f, c, &domain_msg)) {
            sol.x = x;
            sol.status = SolveStatus::kInfeasible;
            sol.diagnostic = "domain error at x0: " + domain_msg;
            sol.max_constraint_violation = kInf;
            return sol;
        }
        if (!std::isfinite(f)) {
            throw std::invalid_argument("SqpSolver::solve: objective non-finite at x0");
        }

        VecX g = objective_gradient(problem, x, opts);
        MatX jac = constraint_jacobian(problem, x, opts);

        const int m = static_cast<int>(problem.inequalities.size());
        if (!carry_hessian_ || bfgs_.rows() != n) {
            bfgs_ = (initial_hessian_.rows() == n) ? initial_hessian_
                                                   : MatX::Identity(n, n);
        }

        double mu = 1.0;
        VecX best_x = x;
        double best_f = f;
        double best_viol = viol_inf(c);
        sol.status = SolveStatus::kMaxIterations;

        int it = 0;
        for (it = 1; it <= opts.max_iter; ++it) {
            QpOptions qp_opts;
            const QpResult qp =
                qp_subproblem(bfgs_, g, jac, c, lo - x, hi - x, qp_opts);
            if (!qp.solved) {
                sol.status = SolveStatus::kInfeasible;
                sol.diagnostic = "QP subproblem unsolved";
                break;
            }
            sol.qp_relaxed = sol.qp_relaxed || qp.relaxed;

            const VecX& d = qp.step;
            const double viol = viol_inf(c);
            // First-order stop: at the QP optimum, B d equals the NLP
            // stationarity residual under the QP multipliers, so either a
            // vanishing step or a vanishing B d certifies a KKT point.
            const double step_norm = d.cwiseAbs().maxCoeff();
            const double stat_norm = (bfgs_ * d).cwiseAbs().maxCoeff();
            if (viol <= opts.tol_feas &&
                (step_norm <= opts.tol_opt * (1.0 + x.cwiseAbs().maxCoeff()) ||
                 (!qp.relaxed &&
                  stat_norm <= opts.tol_opt * (1.0 + g.cwiseAbs().maxCoeff())))) {
                sol.status = SolveStatus::kConverged;
                break;
            }

            // Multipliers from a relaxed QP carry the elastic penalty scale,
            // not a dual estimate; they must not inflate the merit penalty.
            if (qp.multipliers.size() > 0 && !qp.relaxed) {
                mu = std::fmax(mu, 1.5 * qp.multipliers.cwiseAbs().maxCoeff() + 1e-2);
            }
            const double phi0 = f + mu * viol_l1(c);
            const double descent = g.dot(d) - mu * viol_l1(c);
            if (opts.trace) {
                std::fprintf(
                    stderr,
                    "sqp it=%d f=%.6e viol=%.3e mu=%.3e |d|=%.3e |Bd|=%.3e D=%.3e relaxed=%d\n",
                    it, f, viol, mu, step_norm, stat_norm, descent,
                    static_cast<int>(qp.relaxed));
            }

            double alpha = 1.0;
            bool accepted = false;
            VecX x_t;
            double f_t = 0.0;
            VecX c_t;
            for (int ls = 0; ls < opts.max_line_search; ++ls) {
                x_t = (x + alpha * d).cwiseMax(lo).cwiseMin(hi);
                if (eval_point(problem, x_t, f_t, c_t, nullptr) && std::isfinite(f_t)) {
                    const double phi_t = f_t + mu * viol_l1(c_t);
                    if (phi_t <= phi0 + 1e-4 * alpha * std::fmin(descent, 0.0)) {
                        if (opts.check_merit_monotone && phi_t > phi0 + 1e-12 * (1.0 + std::fabs(phi0))) {
                            throw std::logic_error("SqpSolver: merit increased on accepted step");
                        }
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if (!accepted) {
                sol.status = viol <= opts.tol_feas ? SolveStatus::kConverged
                                                   : SolveStatus::kInfeasible;
                if (sol.status == SolveStatus::kInfeasible) {
                    sol.diagnostic = "line search failed at infeasible point";
                }
                break;
            }

            VecX g_t = objective_gradient(problem, x_t, opts);
            MatX jac_t = constraint_jacobian(problem, x_t, opts);

            // Damped BFGS on the Lagrangian gradient difference.
            const VecX s = x_t - x;
            VecX y = g_t - g;
            if (m > 0 && qp.multipliers.size() == m) {
                y -= (jac_t - jac).transpose() * qp.multipliers;
            }
            update_bfgs(s, y);

            x = x_t;
            f = f_t;
            c = c_t;
            g = g_t;
            jac = jac_t;

            const double v_now = viol_inf(c);
            const bool feas_now = v_now <= opts.tol_feas;
            const bool feas_best = best_viol <= opts.tol_feas;
            if ((feas_now && (!feas_best || f < best_f)) ||
                (!feas_now && !feas_best && v_now < best_viol)) {
                best_x = x;
                best_f = f;
                best_viol = v_now;
            }
        }

        if (sol.status == SolveStatus::kConverged) {
            sol.x = x;
            sol.objective = f;
        } else {
            // Best feasible-or-least-infeasible iterate seen.
            const bool current_better =
                (viol_inf(c) <= opts.tol_feas && best_viol > opts.tol_feas) ||
                (viol_inf(c) <= opts.tol_feas && best_viol <= opts.tol_feas && f <= best_f) ||
                (viol_inf(c) > opts.tol_feas && best_viol > opts.tol_feas &&
                 viol_inf(c) <= best_viol);
            sol.x = current_better ? x : best_x;
            double f_out = 0.0;
            VecX c_out;
            if (eval_point(problem, sol.x, f_out, c_out, nullptr)) {
                sol.objective = f_out;
            }
        }
        sol.iterations = std::min(it, opts.max_iter);
        // Exact violation at the returned point.
        double f_chk = 0.0;
        VecX c_chk;
        if (eval_point(problem, sol.x, f_chk, c_chk, nullptr)) {
            sol.max_constraint_violation = viol_inf(c_chk);
        } else {
            sol.max_constraint_violation = kInf;
        }
        return sol;
    }

private:
    static double viol_l1(const VecX& c) {
        double v = 0.0;
        for (int i = 0; i < c.size(); ++i) v += std::fmax(0.0, -c(i));
        return v;
    }
    static double viol_inf(const VecX& c) {
        double v = 0.0;
        for (int i = 0; i < c.size(); ++i) v = std::fmax(v, -c(i));
        return v;
    }

    static bool eval_point(const NlpProblem& p, const VecX& x, double& f, VecX& c,
                           std::string* err) {
        try {
            f = p.objective(x);
            c.resize(static_cast<int>(p.inequalities.size()));
            for (std::size_t i = 0; i < p.inequalities.size(); ++i) {
                c(static_cast<int>(i)) = p.inequalities[i].value(x);
            }
        } catch (const std::domain_error& e) {
            if (err) *err = e.what();
            return false;
        }
        return true;
    }

    static VecX objective_gradient(const NlpProblem& p, const VecX& x,
                                   const SolveOptions& opts) {
        if (p.objective_gradient) return p.objective_gradient(x);
        return finite_difference_gradient(p.objective, x, opts.fd_step);
    }

    static MatX constraint_jacobian(const NlpProblem& p, const VecX& x,
                                    const SolveOptions& opts) {
        const int m = static_cast<int>(p.inequalities.size());
        MatX jac(m, x.size());
        for (int i = 0; i < m; ++i) {
            const auto& con = p.inequalities[static_cast<std::size_t>(i)];
            jac.row(i) = con.gradient
                             ? con.gradient(x).transpose()
                             : finite_difference_gradient(con.value, x, opts.fd_step)
                                   .transpose();
        }
        return jac;
    }

    MatX reset_matrix() const {
        return initial_hessian_.rows() == bfgs_.rows() ? initial_hessian_
                                                       : MatX::Identity(bfgs_.rows(),
                                                                        bfgs_.cols());
    }

    void update_bfgs(const VecX& s, const VecX& y) {
        const double s_norm = s.norm();
        if (s_norm < 1e-14) return;
        const VecX bs = bfgs_ * s;
        const double sbs = s.dot(bs);
        if (!(sbs > 0.0) || !std::isfinite(sbs)) {
            bfgs_ = reset_matrix();
            return;
        }
        double sy = s.dot(y);
        VecX y_t = y;
        if (sy < 0.2 * sbs) {
            // Powell damping keeps the update positive definite.
            const double theta = 0.8 * sbs / (sbs - sy);
            y_t = theta * y + (1.0 - theta) * bs;
            sy = s.dot(y_t);
        }
        if (!(sy > 1e-14 * sbs) || !std::isfinite(sy)) {
            bfgs_ = reset_matrix();
            return;
        }
        bfgs_ += y_t * y_t.transpose() / sy - bs * bs.transpose() / sbs;
        if (!bfgs_.allFinite()) {
            bfgs_ = reset_matrix();
        }
    }

    MatX bfgs_;
    MatX initial_hessian_;
    bool carry_hessian_ = false;
};

}  // namespace tunnelmpc
