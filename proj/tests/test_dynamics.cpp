#include "cpais/dynamics.hpp"

#include "cpais/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace cpais;

namespace {

AirplaneParams default_params(double dt = 0.129) {
    AirplaneParams p;
    p.dt = dt;
    p.alpha0 = p.trim_alpha(10.0);
    return p;
}

// Straight-and-level trim: lift balances weight, thrust balances drag.
AirplaneState trim_state(const AirplaneParams& p, double v, double psi = 0.0) {
    AirplaneState s;
    s.v = v;
    s.psi = psi;
    s.alpha = p.trim_alpha(v);
    return s;
}

AirplaneControl trim_control(const AirplaneParams& p, const AirplaneState& s) {
    AirplaneControl u;
    u.accel = p.trim_accel(s.v, s.alpha);
    return u;
}

AirplaneState random_near_trim(RngStream& rng, const AirplaneParams& p) {
    AirplaneState s = trim_state(p, 10.0);
    s.x += rng.next_normal();
    s.y += rng.next_normal();
    s.z += rng.next_normal();
    s.v += 0.5 * rng.next_normal();
    s.psi += 0.2 * rng.next_normal();
    s.gamma += 0.05 * rng.next_normal();
    s.phi += 0.1 * rng.next_normal();
    s.alpha += 0.01 * rng.next_normal();
    return s;
}

}  // namespace

TEST_CASE("continuous derivative vanishes at straight level trim") {
    const AirplaneParams p = default_params();
    const AirplaneState s = trim_state(p, 10.0, 0.3);
    const AirplaneControl u = trim_control(p, s);
    const Vector d = continuous_derivative(p, s, u);

    REQUIRE_THAT(d[0], Catch::Matchers::WithinAbs(10.0 * std::cos(0.3), 1e-12));
    REQUIRE_THAT(d[1], Catch::Matchers::WithinAbs(10.0 * std::sin(0.3), 1e-12));
    REQUIRE_THAT(d[2], Catch::Matchers::WithinAbs(0.0, 1e-12));  // zdot
    REQUIRE_THAT(d[3], Catch::Matchers::WithinAbs(0.0, 1e-12));  // vdot
    REQUIRE_THAT(d[4], Catch::Matchers::WithinAbs(0.0, 1e-12));  // psidot
    REQUIRE_THAT(d[5], Catch::Matchers::WithinAbs(0.0, 1e-12));  // gammadot
}

TEST_CASE("zero roll gives zero course rate") {
    const AirplaneParams p = default_params();
    AirplaneState s = trim_state(p, 14.0);
    s.gamma = 0.2;
    s.alpha = 0.12;
    AirplaneControl u{2.0, 0.0, 0.1};
    REQUIRE(continuous_derivative(p, s, u)[4] == 0.0);
}

TEST_CASE("lift and drag contributions scale with v^2") {
    const AirplaneParams p = default_params();
    AirplaneState s = trim_state(p, 8.0);
    s.phi = 0.3;
    const AirplaneControl u{};

    auto lift_term = [&](double v) {
        AirplaneState sv = s;
        sv.v = v;
        // gammadot + g cos(gamma)/v isolates F_lift cos(phi)/(m v).
        const Vector d = continuous_derivative(p, sv, u);
        return (d[5] + p.gravity * std::cos(sv.gamma) / v) * v;
    };
    auto drag_term = [&](double v) {
        AirplaneState sv = s;
        sv.v = v;
        const Vector d = continuous_derivative(p, sv, u);
        return -(d[3] + p.gravity * std::sin(sv.gamma));  // F_drag / m
    };
    REQUIRE_THAT(lift_term(16.0) / lift_term(8.0), Catch::Matchers::WithinRel(4.0, 1e-9));
    REQUIRE_THAT(drag_term(16.0) / drag_term(8.0), Catch::Matchers::WithinRel(4.0, 1e-9));
}

TEST_CASE("domain violations raise singularity errors") {
    const AirplaneParams p = default_params();
    AirplaneState s = trim_state(p, 10.0);
    const AirplaneControl u = trim_control(p, s);

    s.v = 0.0;
    REQUIRE_THROWS_AS(continuous_derivative(p, s, u), SingularStateError);
    s.v = 10.0;
    s.gamma = M_PI / 2;
    REQUIRE_THROWS_AS(continuous_derivative(p, s, u), SingularStateError);
    // A hard decelerating step drives v through zero inside the integrator.
    AirplaneState slow = trim_state(p, 0.05);
    slow.alpha = p.trim_alpha(10.0);
    REQUIRE_THROWS_AS(step_nominal(p, slow, AirplaneControl{-100.0, 0, 0}), SingularStateError);
}

TEST_CASE("trim step advances position only") {
    const AirplaneParams p = default_params();
    const AirplaneState s = trim_state(p, 10.0, 1.1);
    const AirplaneControl u = trim_control(p, s);
    const AirplaneState next = step_nominal(p, s, u);

    REQUIRE_THAT(next.x - s.x, Catch::Matchers::WithinAbs(10.0 * p.dt * std::cos(1.1), 1e-9));
    REQUIRE_THAT(next.y - s.y, Catch::Matchers::WithinAbs(10.0 * p.dt * std::sin(1.1), 1e-9));
    REQUIRE_THAT(next.z, Catch::Matchers::WithinAbs(s.z, 1e-9));
    REQUIRE_THAT(next.v, Catch::Matchers::WithinAbs(s.v, 1e-9));
    REQUIRE_THAT(next.psi, Catch::Matchers::WithinAbs(s.psi, 1e-9));
    REQUIRE_THAT(next.gamma, Catch::Matchers::WithinAbs(s.gamma, 1e-9));
}

TEST_CASE("RK4 shows 4th-order error reduction under step halving") {
    AirplaneParams p = default_params();
    AirplaneState s = trim_state(p, 10.0);
    s.phi = 0.2;
    s.gamma = 0.05;
    const AirplaneControl u{1.0, 0.05, -0.02};
    const double horizon = 0.4;

    auto integrate = [&](double dt) {
        AirplaneParams pp = p;
        pp.dt = dt;
        AirplaneState state = s;
        const int steps = static_cast<int>(std::round(horizon / dt));
        for (int i = 0; i < steps; ++i) state = step_nominal(pp, state, u);
        return state.to_vector();
    };

    const Vector reference = integrate(1e-4);
    const double e1 = (integrate(0.1) - reference).norm();
    const double e2 = (integrate(0.05) - reference).norm();
    const double e3 = (integrate(0.025) - reference).norm();
    REQUIRE(e1 / e2 > 10.0);
    REQUIRE(e1 / e2 < 25.0);
    REQUIRE(e2 / e3 > 10.0);
    REQUIRE(e2 / e3 < 25.0);
}

TEST_CASE("no lift at alpha=0 means the flight path drops") {
    const AirplaneParams p = default_params();
    AirplaneState s = trim_state(p, 30.0);
    s.alpha = 0.0;
    const AirplaneState next = step_nominal(p, s, AirplaneControl{});
    REQUIRE(next.gamma < s.gamma);
}

TEST_CASE("finite-difference jacobians agree with an independent stencil") {
    const AirplaneParams p = default_params();
    const AirplanePlant plant(p);
    RngStream rng(31, 0);

    for (int trial = 0; trial < 100; ++trial) {
        const AirplaneState s = random_near_trim(rng, p);
        AirplaneControl u = trim_control(p, s);
        u.roll_rate = 0.05 * rng.next_normal();
        u.pitch_rate = 0.05 * rng.next_normal();
        const Vector sv = s.to_vector();
        const Vector uv = u.to_vector();
        const auto [A, B] = plant.jacobians(sv, uv);

        // Independent check with a different step size.
        const double h = 1e-5;
        for (int i = 0; i < 8; ++i) {
            Vector xp = sv, xm = sv;
            xp[i] += h;
            xm[i] -= h;
            const Vector col = (plant.step(xp, uv) - plant.step(xm, uv)) / (2 * h);
            REQUIRE((A.col(i) - col).norm() <= 1e-3 * std::max(1.0, col.norm()));
        }
        for (int i = 0; i < 3; ++i) {
            Vector up = uv, um = uv;
            up[i] += h;
            um[i] -= h;
            const Vector col = (plant.step(sv, up) - plant.step(sv, um)) / (2 * h);
            REQUIRE((B.col(i) - col).norm() <= 1e-3 * std::max(1.0, col.norm()));
        }
    }
}

TEST_CASE("jacobian approaches identity as dt -> 0") {
    AirplaneParams p = default_params(1e-6);
    const AirplanePlant plant(p);
    const AirplaneState s = trim_state(p, 10.0);
    const auto [A, B] = plant.jacobians(s.to_vector(), trim_control(p, s).to_vector());
    REQUIRE((A - Matrix::Identity(8, 8)).norm() < 1e-4);
}

TEST_CASE("roll-rate control column integrates into the roll row") {
    AirplaneParams p = default_params(0.01);
    const AirplanePlant plant(p);
    const AirplaneState s = trim_state(p, 10.0);
    const auto [A, B] = plant.jacobians(s.to_vector(), trim_control(p, s).to_vector());
    REQUIRE_THAT(B(6, 1), Catch::Matchers::WithinAbs(p.dt, 1e-6));  // phi row, u_phidot column
    for (int r = 0; r < 8; ++r)
        if (r != 6) REQUIRE(std::abs(B(r, 1)) < std::abs(B(6, 1)));
}

TEST_CASE("configuration mapping matches the Euler ZYX product") {
    const AirplaneParams p = default_params();

    AirplaneState level = trim_state(p, 10.0);
    level.alpha = p.alpha0;
    const Pose identity_pose = configuration(p, level);
    REQUIRE(identity_pose.rotation.angularDistance(Eigen::Quaterniond::Identity()) < 1e-12);

    AirplaneState yawed = level;
    yawed.psi = M_PI / 2;
    const Pose yaw_pose = configuration(p, yawed);
    const Eigen::Vector3d mapped = yaw_pose.rotation * Eigen::Vector3d::UnitX();
    REQUIRE((mapped - Eigen::Vector3d::UnitY()).norm() < 1e-12);

    RngStream rng(37, 0);
    for (int trial = 0; trial < 100; ++trial) {
        const AirplaneState s = random_near_trim(rng, p);
        const Pose pose = configuration(p, s);
        REQUIRE_THAT(pose.rotation.norm(), Catch::Matchers::WithinAbs(1.0, 1e-9));
        const double theta = p.alpha0 - s.alpha - s.gamma;
        const Matrix R =
            (Eigen::AngleAxisd(s.psi, Eigen::Vector3d::UnitZ()) *
             Eigen::AngleAxisd(theta, Eigen::Vector3d::UnitY()) *
             Eigen::AngleAxisd(s.phi, Eigen::Vector3d::UnitX()))
                .toRotationMatrix();
        REQUIRE((pose.rotation.toRotationMatrix() - R).norm() < 1e-9);
        REQUIRE((pose.translation - Eigen::Vector3d(s.x, s.y, s.z)).norm() < 1e-12);
    }
}

TEST_CASE("observation is the identity with an 8-dim measurement") {
    const AirplanePlant plant(default_params());
    REQUIRE(plant.measurement_dim() == 8);
    Vector x = trim_state(plant.params(), 10.0).to_vector();
    REQUIRE(plant.observe(x) == x);
}

TEST_CASE("double integrator and translation plants step exactly") {
    const DoubleIntegratorPlant di(0.1);
    Vector x(4);
    x << 1.0, 2.0, 3.0, -1.0;
    Vector u(2);
    u << 10.0, 4.0;
    const Vector next = di.step(x, u);
    REQUIRE_THAT(next[0], Catch::Matchers::WithinAbs(1.0 + 0.3 + 0.05, 1e-15));
    REQUIRE_THAT(next[2], Catch::Matchers::WithinAbs(3.0 + 0.1 * 10.0, 1e-15));  // vx
    const auto [A, B] = di.jacobians(x, u);
    Matrix A_exact = Matrix::Identity(4, 4);
    A_exact(0, 2) = 0.1;
    A_exact(1, 3) = 0.1;
    REQUIRE((A - A_exact).norm() < 1e-9);

    const TranslationPlant tp(0.5);
    Vector p0(3);
    p0 << 1, 2, 3;
    Vector v(3);
    v << 2, 0, -2;
    REQUIRE((tp.step(p0, v) - (p0 + 0.5 * v)).norm() == 0.0);
}
