#include <doctest.h>

#include <cmath>

#include "tunnelmpc/cbf.hpp"
#include "tunnelmpc/optimizer.hpp"

using namespace tunnelmpc;

namespace {

CbfParams params(double a_max, double d_s, double gamma = 3.0, int z = 3,
                 double lambda = 0.0, double r = 0.5) {
    CbfParams p;
    p.a_max = a_max;
    p.d_s = d_s;
    p.gamma = gamma;
    p.z_exp = z;
    p.lambda = lambda;
    p.r = r;
    return p;
}

}  // namespace

TEST_CASE("h_point_obstacle: static point at unit distance") {
    const CbfParams p = params(2.0, 0.5);
    const double h = h_point_obstacle(Vec3(1, 0, 0), Vec3::Zero(), p);
    CHECK(h == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("h_point_obstacle: zero at the braking-limit approach speed") {
    const CbfParams p = params(2.0, 0.5);
    const double h = h_point_obstacle(Vec3(1, 0, 0), Vec3(-std::sqrt(2.0), 0, 0), p);
    CHECK(h == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("h_point_obstacle: approaches zero at the standoff boundary") {
    const CbfParams p = params(3.0, 0.0);
    CHECK(h_point_obstacle(Vec3(1e-19, 0, 0), Vec3::Zero(), p) <= 1e-9);
    double prev = 1e9;
    for (double d = 1e-2; d > 1e-10; d *= 0.1) {
        const double h = h_point_obstacle(Vec3(d, 0, 0), Vec3::Zero(), p);
        CHECK(h < prev);
        prev = h;
    }
}

TEST_CASE("h_point_obstacle: violated inside the standoff") {
    const CbfParams p = params(2.0, 0.5);
    CHECK_THROWS_AS(h_point_obstacle(Vec3(0.4, 0, 0), Vec3::Zero(), p), BarrierViolation);
    CHECK_THROWS_AS(h_point_obstacle(Vec3(0.5, 0, 0), Vec3::Zero(), p), BarrierViolation);
}

TEST_CASE("h_bounding: center value and boundary limit") {
    CbfParams p = params(3.0, 0.0);
    p.r = 0.5;
    CHECK(h_bounding(Vec3::Zero(), Vec3(1, 2, 3), Vec3(1, 2, 3), p) ==
          doctest::Approx(std::sqrt(2.0 * 3.0 * 0.5)).epsilon(1e-12));

    CbfParams tiny = p;
    tiny.r = 1e-19;
    CHECK(h_bounding(Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), tiny) <= 1e-9);
}

TEST_CASE("h_bounding: reflected braking form with relative velocity") {
    CbfParams p = params(2.0, 0.0);
    p.r = 1.0;
    const double h = h_bounding(Vec3(0.5, 0, 0), Vec3(1, 0, 0), Vec3::Zero(), p);
    CHECK(h == doctest::Approx(std::sqrt(2.0) - 1.0).epsilon(1e-12));
}

TEST_CASE("h_bounding: violated at or outside the radius") {
    CbfParams p = params(2.0, 0.0);
    p.r = 1.0;
    CHECK_THROWS_AS(h_bounding(Vec3(1.0, 0, 0), Vec3::Zero(), Vec3::Zero(), p),
                    BarrierViolation);
}

TEST_CASE("h_wall: direct evaluation and parallel-velocity invariance") {
    const CbfParams p = params(2.0, 0.25);
    CHECK(h_wall(Vec3(0, 0, 0.5), Vec3::Zero(), p) == doctest::Approx(1.0).epsilon(1e-12));

    const double base = h_wall(Vec3(0, 0, 0.5), Vec3(0.7, -1.3, 0), p);
    CHECK(base == doctest::Approx(1.0).epsilon(1e-12));  // parallel velocity drops out
    CHECK_THROWS_AS(h_wall(Vec3(0, 0, 0.2), Vec3::Zero(), p), BarrierViolation);
}

TEST_CASE("invariance_residual: direct evaluations") {
    CHECK(invariance_residual(1.0, 1.0, 0.1, params(3, 0, 3.0, 3, 0.0)) ==
          doctest::Approx(3.0).epsilon(1e-12));
    CHECK(invariance_residual(0.0, 0.0, 0.1, params(3, 0, 3.0, 3, 0.0)) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(invariance_residual(0.0, 0.0, 0.1, params(3, 0, 3.0, 3, 8.0)) ==
          doctest::Approx(-24.0).epsilon(1e-12));
}

TEST_CASE("expanded_invariance_point: static interior point") {
    const CbfParams p = params(2.0, 0.5, 3.0, 1);
    const Vec3 pr(1.2, -0.3, 0.4);
    const double h = std::sqrt(2.0 * p.a_max * (pr.norm() - p.d_s));
    const double e = expanded_invariance_point(pr, Vec3::Zero(), Vec3::Zero(), p);
    CHECK(e == doctest::Approx(p.gamma * h * pr.norm()).epsilon(1e-12));
    CHECK(e > 0.0);
}

TEST_CASE("expanded_invariance_point: direct evaluation") {
    const CbfParams p = params(2.0, 0.5, 3.0, 1);
    const double e =
        expanded_invariance_point(Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3::Zero(), p);
    CHECK(e == doctest::Approx(1.0 + 3.0 * std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("expanded_invariance_point: sign-consistent with the discrete residual") {
    const CbfParams p = params(2.0, 0.3, 3.0, 1);
    RandomStream rng(21);
    const double dt = 1e-4;
    int agree = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const Vec3 dir = rng.unit_vector();
        const Vec3 pr = dir * rng.uniform(p.d_s + 0.2, 3.0);
        const Vec3 v(rng.normal(), rng.normal(), rng.normal());
        const Vec3 u(rng.normal(), rng.normal(), rng.normal());

        const double expanded = expanded_invariance_point(pr, v, u, p);

        const Vec3 pr_next = pr + v * dt + 0.5 * u * dt * dt;
        const Vec3 v_next = v + u * dt;
        const double h_now = h_point_obstacle(pr, v, p);
        const double h_next = h_point_obstacle(pr_next, v_next, p);
        const double discrete = invariance_residual(h_now, h_next, dt, p);
        if ((expanded >= 0.0) == (discrete >= 0.0)) ++agree;
    }
    CHECK(agree >= n * 99 / 100);
}

TEST_CASE("monotonicity: h_point increasing, h_bounding decreasing in distance") {
    CbfParams p = params(3.0, 0.1);
    p.r = 2.0;
    const Vec3 dir(0.36, -0.48, 0.8);
    const Vec3 v(0.3, 0.1, -0.2);
    double prev_point = -1e9;
    double prev_bound = 1e9;
    for (int i = 1; i <= 100; ++i) {
        const double d = p.d_s + 1.8 * i / 100.0;
        const double hp = h_point_obstacle(d * dir, v, p);
        CHECK(hp > prev_point);
        prev_point = hp;
        if (d < p.r) {
            const double hb = h_bounding(d * dir, v, Vec3::Zero(), p);
            CHECK(hb < prev_bound);
            prev_bound = hb;
        }
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    CbfParams p = params(3.0, 0.1);
    p.r = 2.0;
    RandomStream rng(33);
    const double fd_step = 1e-6;
    int checked = 0;
    while (checked < 100) {
        const Vec3 dir = rng.unit_vector();
        const double dist = rng.uniform(p.d_s + 0.15, 1.8);
        const Vec3 pr = dist * dir;
        const Vec3 v(rng.normal(), rng.normal(), rng.normal());
        const Vec3 vt(0.2 * rng.normal(), 0.2 * rng.normal(), 0.2 * rng.normal());
        ++checked;

        {
            const HGrad g = h_point_obstacle_grad(pr, v, p);
            for (int k = 0; k < 3; ++k) {
                Vec3 e = Vec3::Zero();
                e(k) = fd_step;
                const double fd_p =
                    (h_point_obstacle(pr + e, v, p) - h_point_obstacle(pr - e, v, p)) /
                    (2 * fd_step);
                const double fd_v =
                    (h_point_obstacle(pr, v + e, p) - h_point_obstacle(pr, v - e, p)) /
                    (2 * fd_step);
                CHECK(std::fabs(g.dh_dp(k) - fd_p) <=
                      1e-4 * std::fmax(1.0, std::fabs(fd_p)));
                CHECK(std::fabs(g.dh_dv(k) - fd_v) <=
                      1e-4 * std::fmax(1.0, std::fabs(fd_v)));
            }
        }
        if (dist < p.r - 0.15) {
            const HGrad g = h_bounding_grad(pr, v, vt, p);
            for (int k = 0; k < 3; ++k) {
                Vec3 e = Vec3::Zero();
                e(k) = fd_step;
                const double fd_p =
                    (h_bounding(pr + e, v, vt, p) - h_bounding(pr - e, v, vt, p)) /
                    (2 * fd_step);
                const double fd_v =
                    (h_bounding(pr, v + e, vt, p) - h_bounding(pr, v - e, vt, p)) /
                    (2 * fd_step);
                CHECK(std::fabs(g.dh_dp(k) - fd_p) <=
                      1e-4 * std::fmax(1.0, std::fabs(fd_p)));
                CHECK(std::fabs(g.dh_dv(k) - fd_v) <=
                      1e-4 * std::fmax(1.0, std::fabs(fd_v)));
            }
        }
    }
}

TEST_CASE("extended barriers agree with the exact ones inside the domain") {
    CbfParams p = params(3.0, 0.1);
    p.r = 1.0;
    const Vec3 d(0, 0, 0.7);
    const Vec3 v(0.2, -0.1, 0.4);
    CHECK(h_wall_extended(d, v, p).h == doctest::Approx(h_wall(d, v, p)).epsilon(1e-12));
    const Vec3 pr(0.3, 0.2, -0.1);
    CHECK(h_bounding_extended(pr, v, Vec3::Zero(), p).h ==
          doctest::Approx(h_bounding(pr, v, Vec3::Zero(), p)).epsilon(1e-12));

    // continuation past the boundary stays finite and decreasing
    const double inside = h_wall_extended(Vec3(0, 0, 0.12), Vec3::Zero(), p).h;
    const double past = h_wall_extended(Vec3(0, 0, 0.05), Vec3::Zero(), p).h;
    CHECK(std::isfinite(past));
    CHECK(past < inside);
    CHECK(past < 0.0);
}
