// Acceptance suite: one pass/fail line per benchmark criterion.
//
// Groups (selectable by argument, default all):
//   case1        criteria 1-2   boundary and tracking trends, Case I
//   case2        criterion  3   minimum stable standoff trend, Case II
//   case3        criteria 4-5   collision and control-effort trends, Case III
//   harness      criterion  6   disturbance-margin invariance property
//   units        criteria 7-9   aero values, optimizer oracle, gradients
//   determinism  criterion 10   byte-identical reruns

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include "../test_support.hpp"
#include "tunnelmpc/bench.hpp"
#include "tunnelmpc/config.hpp"
#include "tunnelmpc/invariance_harness.hpp"
#include "tunnelmpc/io.hpp"

using namespace tunnelmpc;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion,
                what.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

ScenarioConfig bench_base() {
    ScenarioConfig base;
    apply_benchmark_world(base);
    return base;
}

struct CaseRun {
    RunMetrics metrics;
    double max_error = 0.0;
    std::vector<StepRecord> records;
};

CaseRun run_case(ScenarioCase sc, ControllerMode ctrl, TargetWall wall, std::uint64_t seed,
                 bool keep_records = false) {
    const ScenarioConfig cfg = bench_scenario(bench_base(), sc, ctrl, wall, seed);
    RunResult res = run_scenario(cfg);
    CaseRun out;
    out.metrics = res.metrics;
    for (const auto& r : res.records) {
        out.max_error =
            std::fmax(out.max_error, (r.plant.position - r.reference_position).norm());
    }
    if (keep_records) out.records = std::move(res.records);
    return out;
}

// --- criteria 1-2: Case I trends --------------------------------------------

void group_case1() {
    const auto t0 = std::chrono::steady_clock::now();
    int naive_viol_seeds = 0;
    int cbf_viol_runs = 0;
    std::vector<double> te_naive, te_cbf, te_hc;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const CaseRun naive =
            run_case(ScenarioCase::kBoundRegion, ControllerMode::kNaive, TargetWall::kFloor, seed);
        const CaseRun cbf =
            run_case(ScenarioCase::kBoundRegion, ControllerMode::kCbf, TargetWall::kFloor, seed);
        naive_viol_seeds += naive.metrics.boundary_violations >= 1 ? 1 : 0;
        cbf_viol_runs += cbf.metrics.boundary_violations >= 1 ? 1 : 0;
        te_naive.push_back(naive.metrics.tracking_rms);
        te_cbf.push_back(cbf.metrics.tracking_rms);
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    {
        std::ostringstream d;
        d << "naive violated in " << naive_viol_seeds << "/10 seeds, cbf in "
          << cbf_viol_runs << "/10, runtime " << static_cast<int>(elapsed) << " s";
        report(1, cbf_viol_runs == 0 && naive_viol_seeds >= 8 && elapsed <= 300.0,
               "Case I boundary trend at d_m = 0.8", d.str());
    }

    int order_ok = 0;
    double mean_naive = 0.0, mean_cbf = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const CaseRun hc = run_case(ScenarioCase::kBoundRegion,
                                    ControllerMode::kHardConstraint, TargetWall::kFloor, seed);
        te_hc.push_back(hc.metrics.tracking_rms);
        if (te_naive[seed] > te_hc[seed] && te_hc[seed] > te_cbf[seed]) ++order_ok;
        mean_naive += te_naive[seed] / 10.0;
        mean_cbf += te_cbf[seed] / 10.0;
    }
    const double improvement = 1.0 - mean_cbf / mean_naive;
    {
        std::ostringstream d;
        d << "naive > hc > cbf in " << order_ok << "/10 seeds, mean T_e "
          << mean_naive << " -> " << mean_cbf << " (" << static_cast<int>(improvement * 100)
          << "% better)";
        report(2, order_ok >= 8 && improvement >= 0.30, "Case I tracking-error ordering",
               d.str());
    }
}

// --- criterion 3: Case II standoff trend -------------------------------------

void group_case2() {
    static constexpr TargetWall kWalls[] = {TargetWall::kFloor, TargetWall::kCeiling,
                                            TargetWall::kLeft};
    static constexpr const char* kNames[] = {"ground", "ceiling", "sidewall"};
    bool all_ok = true;
    std::ostringstream d;
    for (int w = 0; w < 3; ++w) {
        double naive_mean = 0.0, cbf_mean = 0.0;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const ScenarioConfig ncfg = bench_scenario(
                bench_base(), ScenarioCase::kMinStandoff, ControllerMode::kNaive, kWalls[w], seed);
            const RunResult nres = run_scenario(ncfg);
            naive_mean += min_stable_standoff(nres.records, ncfg) / 5.0;
            const ScenarioConfig ccfg = bench_scenario(
                bench_base(), ScenarioCase::kMinStandoff, ControllerMode::kCbf, kWalls[w], seed);
            const RunResult cres = run_scenario(ccfg);
            cbf_mean += min_stable_standoff(cres.records, ccfg) / 5.0;
        }
        const bool ok = cbf_mean <= 0.70 * naive_mean;
        all_ok = all_ok && ok;
        d << kNames[w] << ": naive " << naive_mean << " m, cbf " << cbf_mean << " m ("
          << (ok ? "ok" : "short") << "); ";
    }
    report(3, all_ok, "Case II standoff trend (cbf at least 30% closer per wall)", d.str());
}

// --- criteria 4-5: Case III trends -------------------------------------------

void group_case3() {
    int naive_collisions = 0, hc_collisions = 0, cbf_completions = 0;
    bool cbf_te_ok = true;
    double ratio_sum = 0.0;
    int ratio_n = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const CaseRun naive = run_case(ScenarioCase::kCloseProximity, ControllerMode::kNaive,
                                       TargetWall::kFloor, seed, true);
        const CaseRun hc = run_case(ScenarioCase::kCloseProximity,
                                    ControllerMode::kHardConstraint, TargetWall::kFloor, seed);
        const CaseRun cbf = run_case(ScenarioCase::kCloseProximity, ControllerMode::kCbf,
                                     TargetWall::kFloor, seed, true);
        naive_collisions += naive.metrics.collided ? 1 : 0;
        hc_collisions += hc.metrics.collided ? 1 : 0;
        if (!cbf.metrics.collided) {
            ++cbf_completions;
            cbf_te_ok = cbf_te_ok && cbf.metrics.tracking_rms < 1.0;
        }
        // control effort per step over the window both controllers completed
        const std::size_t window = std::min(naive.records.size(), cbf.records.size());
        if (window > 0) {
            double ce_n = 0.0, ce_c = 0.0;
            for (std::size_t k = 0; k < window; ++k) {
                ce_n += naive.records[k].input.as_vec4().squaredNorm();
                ce_c += cbf.records[k].input.as_vec4().squaredNorm();
            }
            if (ce_n > 0.0) {
                ratio_sum += ce_c / ce_n;
                ++ratio_n;
            }
        }
    }
    {
        std::ostringstream d;
        d << "collisions naive " << naive_collisions << "/10, hc " << hc_collisions
          << "/10; cbf completed " << cbf_completions << "/10 with T_e < 1 m "
          << (cbf_te_ok ? "everywhere" : "violated");
        report(4,
               naive_collisions == 10 && hc_collisions == 10 && cbf_completions == 10 &&
                   cbf_te_ok,
               "Case III collision trend", d.str());
    }
    {
        const double mean_ratio = ratio_n > 0 ? ratio_sum / ratio_n : 1e9;
        std::ostringstream d;
        d << "mean cbf/naive control effort over the common window = " << mean_ratio;
        report(5, mean_ratio <= 0.90, "Case III control-effort trend", d.str());
    }
}

// --- criterion 6: invariance property suite -----------------------------------

void group_harness() {
    const auto t0 = std::chrono::steady_clock::now();
    HarnessConfig with;
    with.d_m = 0.8;
    with.cbf.lambda = 0.35;  // margin calibrated for d_m = 0.8 (see calibrate-lambda)
    HarnessConfig without = with;
    without.cbf.lambda = 0.0;

    const HarnessSummary margin = run_invariance_harness(with, 10000, 2024);
    const HarnessSummary plain = run_invariance_harness(without, 10000, 2024);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::ostringstream d;
    d << "violations " << margin.violations << "/10000 episodes, min h " << margin.min_h
      << " (vs " << plain.min_h << " without margin), runtime "
      << static_cast<int>(elapsed) << " s";
    report(6,
           margin.violations == 0 && margin.min_h >= 0.0 && margin.min_h > plain.min_h &&
               elapsed <= 60.0,
           "CBF invariance under bounded disturbance", d.str());
}

// --- criteria 7-9: unit-level oracles -----------------------------------------

void group_units() {
    // criterion 7: aero model values
    {
        bool ok = std::fabs(ground_effect_ratio(0.24, 0.12) - 1.0158730158730158) < 1e-6;
        ok = ok && std::fabs(ground_effect_ratio(1e6 * 0.12, 0.12) - 1.0) < 1e-9;
        ok = ok && std::fabs(ceiling_effect_ratio(1e6 * 0.12, 0.12, CeilingCoeffs{}) - 1.0) < 1e-9;
        bool threw = false;
        try {
            ground_effect_ratio(0.03, 0.12);
        } catch (const SingularityError&) {
            threw = true;
        }
        ok = ok && threw;
        bool threw_above = true;
        try {
            ground_effect_ratio(0.03 + 1e-12, 0.12);
        } catch (const SingularityError&) {
            threw_above = false;
        }
        ok = ok && threw_above;
        threw = false;
        try {
            ceiling_effect_ratio(0.12, 0.12, CeilingCoeffs{1.0, 0.0});
        } catch (const SingularityError&) {
            threw = true;
        }
        ok = ok && threw;
        report(7, ok, "aero thrust-ratio values and singularity thresholds",
               "ratio(0.24 m, R = 0.12 m), far fields, domain boundaries");
    }

    // criterion 8: optimizer vs closed-form KKT, plus Rosenbrock-with-box
    {
        RandomStream rng(90210);
        SolveOptions opts;
        opts.max_iter = 400;
        opts.tol_opt = 1e-10;
        opts.tol_feas = 1e-10;
        int matched = 0;
        const int total = 100;
        for (int t = 0; t < total; ++t) {
            const int n = 2 + static_cast<int>(rng.uniform01() * 19);  // up to 20
            const int m = 1 + static_cast<int>(rng.uniform01() * 10);  // up to 10
            const auto qp = testing::make_random_qp(n, m, rng);
            const auto oracle =
                testing::kkt_enumeration_solve(qp.hessian, qp.grad, qp.a_mat, qp.b_vec);
            if (!oracle) continue;
            NlpProblem p;
            p.dim = n;
            const MatX h = qp.hessian;
            const VecX g = qp.grad;
            p.objective = [h, g](const VecX& x) { return 0.5 * x.dot(h * x) + g.dot(x); };
            p.objective_gradient = [h, g](const VecX& x) { return VecX(h * x + g); };
            for (int i = 0; i < m; ++i) {
                const VecX row = qp.a_mat.row(i).transpose();
                const double bi = qp.b_vec(i);
                p.inequalities.push_back({[row, bi](const VecX& x) { return row.dot(x) - bi; },
                                          [row](const VecX&) { return row; }});
            }
            SqpSolver solver;
            const NlpSolution sol = solver.solve(p, VecX::Zero(n), opts);
            if ((sol.x - *oracle).cwiseAbs().maxCoeff() < 1e-6) ++matched;
        }

        NlpProblem rosen;
        rosen.dim = 2;
        rosen.objective = [](const VecX& x) {
            const double a = 1.0 - x(0);
            const double b = x(1) - x(0) * x(0);
            return a * a + 100.0 * b * b;
        };
        rosen.objective_gradient = [](const VecX& x) {
            VecX g(2);
            const double b = x(1) - x(0) * x(0);
            g(0) = -2.0 * (1.0 - x(0)) - 400.0 * x(0) * b;
            g(1) = 200.0 * b;
            return g;
        };
        rosen.lower = VecX::Constant(2, -1.5);
        rosen.upper = VecX::Constant(2, 0.8);
        SqpSolver solver;
        VecX x0(2);
        x0 << -1.2, 0.5;
        const NlpSolution sol = solver.solve(rosen, x0, opts);
        const bool rosen_ok = std::fabs(sol.x(0) - 0.8) < 1e-4 &&
                              std::fabs(sol.x(1) - 0.64) < 1e-4;

        std::ostringstream d;
        d << matched << "/" << total << " random QPs matched the KKT enumeration, "
          << "Rosenbrock box optimum " << (rosen_ok ? "reached" : "missed");
        report(8, matched == total && rosen_ok, "optimizer oracle equivalence", d.str());
    }

    // criterion 9: analytic gradients vs central differences
    {
        CbfParams params;
        params.a_max = 3.0;
        params.d_s = 0.1;
        params.r = 2.0;
        RandomStream rng(4711);
        const double fd = 1e-6;
        bool ok = true;
        for (int t = 0; t < 100 && ok; ++t) {
            const Vec3 dir = rng.unit_vector();
            const double dist = rng.uniform(params.d_s + 0.15, 1.8);
            const Vec3 pr = dist * dir;
            const Vec3 v(rng.normal(), rng.normal(), rng.normal());
            const Vec3 vt(0.2 * rng.normal(), 0.2 * rng.normal(), 0.2 * rng.normal());
            const HGrad gp = h_point_obstacle_grad(pr, v, params);
            const HGrad gb = h_bounding_grad(pr, v, vt, params);
            for (int k = 0; k < 3 && ok; ++k) {
                Vec3 e = Vec3::Zero();
                e(k) = fd;
                const double fp =
                    (h_point_obstacle(pr + e, v, params) - h_point_obstacle(pr - e, v, params)) /
                    (2 * fd);
                const double fv =
                    (h_point_obstacle(pr, v + e, params) - h_point_obstacle(pr, v - e, params)) /
                    (2 * fd);
                ok = ok && std::fabs(gp.dh_dp(k) - fp) <= 1e-4 * std::fmax(1.0, std::fabs(fp));
                ok = ok && std::fabs(gp.dh_dv(k) - fv) <= 1e-4 * std::fmax(1.0, std::fabs(fv));
                const double bp =
                    (h_bounding(pr + e, v, vt, params) - h_bounding(pr - e, v, vt, params)) /
                    (2 * fd);
                const double bv =
                    (h_bounding(pr, v + e, vt, params) - h_bounding(pr, v - e, vt, params)) /
                    (2 * fd);
                ok = ok && std::fabs(gb.dh_dp(k) - bp) <= 1e-4 * std::fmax(1.0, std::fabs(bp));
                ok = ok && std::fabs(gb.dh_dv(k) - bv) <= 1e-4 * std::fmax(1.0, std::fabs(bv));
            }
        }

        // quadratic cost gradient over the stacked-input vector
        MpcConfig cfg;
        MpcState s;
        s.position = Vec3(9.0, 1.2, 0.9);
        s.velocity = Vec3(0.4, -0.1, 0.2);
        ReferenceWindow ref;
        for (int i = 0; i <= cfg.horizon; ++i) {
            ref.positions.push_back(Vec3(9.5 + 0.08 * i, 1.0, 1.0));
            ref.velocities.push_back(Vec3(0.8, 0.0, 0.0));
            ref.yaws.push_back(0.0);
        }
        MpcController ctrl(cfg, CbfParams{}, TunnelGeometry{});
        const NlpProblem p = ctrl.make_problem(s, ref);
        for (int t = 0; t < 100 && ok; ++t) {
            VecX u(p.dim);
            for (int i = 0; i < p.dim; ++i) u(i) = rng.uniform(-2.5, 2.5);
            const VecX ga = p.objective_gradient(u);
            const VecX gf = finite_difference_gradient(p.objective, u, 1e-6);
            const double scale = std::fmax(1.0, gf.cwiseAbs().maxCoeff());
            ok = ok && (ga - gf).cwiseAbs().maxCoeff() / scale < 1e-4;
        }
        report(9, ok, "analytic gradients match central finite differences",
               "barrier functions and quadratic costs, 100 interior points each");
    }
}

// --- criterion 10: determinism ------------------------------------------------

void group_determinism() {
    ScenarioConfig cfg = bench_scenario(bench_base(), ScenarioCase::kBoundRegion,
                                        ControllerMode::kCbf, TargetWall::kFloor, 7);
    cfg.total_time = 20.0;
    const RunResult a = run_scenario(cfg);
    const RunResult b = run_scenario(cfg);
    std::ostringstream sa, sb;
    write_records_csv(sa, a.records);
    write_records_csv(sb, b.records);
    std::ostringstream d;
    d << a.records.size() << " records, " << sa.str().size() << " bytes";
    report(10, sa.str() == sb.str() && !a.records.empty(),
           "byte-identical records for identical config and seed", d.str());
}

}  // namespace

int main(int argc, char** argv) {
    const std::string group = argc > 1 ? argv[1] : "all";
    const bool all = group == "all";
    if (all || group == "case1") group_case1();
    if (all || group == "case2") group_case2();
    if (all || group == "case3") group_case3();
    if (all || group == "harness") group_harness();
    if (all || group == "units") group_units();
    if (all || group == "determinism") group_determinism();
    if (g_failures > 0) {
        std::printf("%d criterion(s) failed\n", g_failures);
    }
    return g_failures == 0 ? 0 : 1;
}
