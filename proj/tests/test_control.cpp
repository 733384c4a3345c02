#include "cpais/control.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace cpais;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

LinearizedPlant scalar_plant(double a, double b, int T) {
    LinearizedPlant lin;
    for (int t = 0; t < T; ++t) {
        lin.A.push_back(scalar(a));
        lin.B.push_back(scalar(b));
        lin.H.push_back(scalar(1.0));
    }
    return lin;
}

AirplaneParams airplane_params() {
    AirplaneParams p;
    p.alpha0 = p.trim_alpha(10.0);
    return p;
}

NominalTrajectory trim_nominal(const AirplanePlant& plant, int T, double v = 10.0) {
    AirplaneState s;
    s.v = v;
    s.alpha = plant.params().trim_alpha(v);
    AirplaneControl u;
    u.accel = plant.params().trim_accel(v, s.alpha);
    return NominalTrajectory::from_controls(plant, s.to_vector(),
                                            std::vector<Vector>(T, u.to_vector()));
}

}  // namespace

TEST_CASE("nominal trajectory consistency checking") {
    const AirplanePlant plant(airplane_params());
    NominalTrajectory traj = trim_nominal(plant, 5);
    REQUIRE_NOTHROW(traj.validate(plant));

    traj.states[3][1] += 1e-6;
    REQUIRE_THROWS_WITH(traj.validate(plant),
                        Catch::Matchers::ContainsSubstring("not consistent"));
}

TEST_CASE("linearization along a trim nominal is time-invariant") {
    const AirplanePlant plant(airplane_params());
    const NominalTrajectory traj = trim_nominal(plant, 4);
    const LinearizedPlant lin = linearize_trajectory(plant, traj);
    REQUIRE(lin.horizon() == 4);
    for (int t = 1; t < 4; ++t) {
        REQUIRE((lin.A[t] - lin.A[0]).cwiseAbs().maxCoeff() < 1e-9);
        REQUIRE((lin.B[t] - lin.B[0]).cwiseAbs().maxCoeff() < 1e-9);
        REQUIRE(lin.H[t] == Matrix::Identity(8, 8));
    }
}

TEST_CASE("discrete linearization approaches I + dt * continuous jacobian") {
    auto error_at = [&](double dt) {
        AirplaneParams p = airplane_params();
        p.dt = dt;
        const AirplanePlant plant(p);
        const NominalTrajectory traj = trim_nominal(plant, 1);
        const LinearizedPlant lin = linearize_trajectory(plant, traj);

        // Continuous jacobian by finite differences of the derivative.
        const Vector s0 = traj.states[0];
        Matrix Jc(8, 8);
        for (int i = 0; i < 8; ++i) {
            const double h = 1e-6 * std::max(1.0, std::abs(s0[i]));
            Vector sp = s0, sm = s0;
            sp[i] += h;
            sm[i] -= h;
            const AirplaneControl u = AirplaneControl::from_vector(traj.controls[0]);
            Jc.col(i) = (continuous_derivative(p, AirplaneState::from_vector(sp), u) -
                         continuous_derivative(p, AirplaneState::from_vector(sm), u)) /
                        (2 * h);
        }
        return (lin.A[0] - Matrix::Identity(8, 8) - dt * Jc).norm();
    };
    // Second-order remainder: halving dt cuts the error by ~4.
    const double e1 = error_at(0.02);
    const double e2 = error_at(0.01);
    REQUIRE(e1 / e2 > 2.5);
    REQUIRE(e1 / e2 < 6.0);
}

TEST_CASE("LQR gains match the scalar Riccati oracle") {
    // T=1, a=b=q=r=1, Qfinal=1: L1 = -P/(1+P) with P=1.
    CostWeights cost{scalar(1), scalar(1), scalar(1)};
    const auto L = lqr_gains(scalar_plant(1, 1, 1), cost);
    REQUIRE_THAT(L[0](0, 0), Catch::Matchers::WithinAbs(-0.5, 1e-12));

    // Longer horizon against a hand-written scalar recursion.
    const double a = 1.2, b = 0.7, q = 2.0, r = 0.5, qf = 3.0;
    const int T = 6;
    CostWeights cost2{scalar(q), scalar(r), scalar(qf)};
    const auto gains = lqr_gains(scalar_plant(a, b, T), cost2);
    double P = qf;
    std::vector<double> expected(T);
    for (int t = T; t >= 1; --t) {
        const double l = -(b * P * a) / (r + b * P * b);
        expected[t - 1] = l;
        P = q + a * P * a - (a * P * b) * (a * P * b) / (r + b * P * b);
    }
    for (int t = 0; t < T; ++t)
        REQUIRE_THAT(gains[t](0, 0), Catch::Matchers::WithinAbs(expected[t], 1e-9));
}

TEST_CASE("expensive control drives gains to zero") {
    CostWeights cost{scalar(1), scalar(1e9), scalar(1)};
    const auto L = lqr_gains(scalar_plant(1, 1, 3), cost);
    for (const auto& l : L) REQUIRE(std::abs(l(0, 0)) < 1e-6);
}

TEST_CASE("finite-horizon gains converge to the stationary gain") {
    CostWeights cost{scalar(1), scalar(1), scalar(1)};
    const auto L = lqr_gains(scalar_plant(1, 1, 200), cost);
    REQUIRE(std::abs(L[0](0, 0) - L[1](0, 0)) < 1e-6);
}

TEST_CASE("Kalman recursion matches the scalar oracle") {
    // a=1, lumped process noise 1, w=1, p0=1.
    const auto res = kalman_gains(scalar_plant(1, 1, 2), scalar(1.0), {scalar(0.0), scalar(0.0)},
                                  {scalar(1.0), scalar(1.0)}, {scalar(1.0), scalar(1.0)});
    REQUIRE_THAT(res.sigma_pred[0](0, 0), Catch::Matchers::WithinAbs(2.0, 1e-12));
    REQUIRE_THAT(res.K[0](0, 0), Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
    // Sigma+_1 = 2/3, so the next prediction is 2/3 + 1.
    REQUIRE_THAT(res.sigma_pred[1](0, 0), Catch::Matchers::WithinAbs(2.0 / 3.0 + 1.0, 1e-9));
}

TEST_CASE("Kalman limits: useless and perfect measurements") {
    const auto noisy = kalman_gains(scalar_plant(1, 1, 3), scalar(1.0),
                                    {scalar(0.1), scalar(0.1), scalar(0.1)},
                                    {scalar(0.5), scalar(0.5), scalar(0.5)},
                                    {scalar(1e12), scalar(1e12), scalar(1e12)});
    for (const auto& K : noisy.K) REQUIRE(std::abs(K(0, 0)) < 1e-9);

    const auto sharp = kalman_gains(scalar_plant(1, 1, 3), scalar(1.0),
                                    {scalar(0.1), scalar(0.1), scalar(0.1)},
                                    {scalar(0.5), scalar(0.5), scalar(0.5)},
                                    {scalar(1e-12), scalar(1e-12), scalar(1e-12)});
    for (const auto& K : sharp.K) REQUIRE_THAT(K(0, 0), Catch::Matchers::WithinAbs(1.0, 1e-9));
}

TEST_CASE("closed loop with zero gains decouples into the open loop") {
    const int T = 5;
    LinearizedPlant lin = scalar_plant(0.9, 1.0, T);
    LqgGains gains;
    gains.L.assign(T, scalar(0.0));
    gains.K.assign(T, scalar(0.0));
    const std::vector<Matrix> Vu(T, scalar(0.2)), Vx(T, scalar(0.3)), W(T, scalar(1.0));
    const auto sys = closed_loop_system(lin, gains, scalar(1.0), Vu, Vx, W);

    double open_loop = 1.0;
    for (int t = 1; t <= T; ++t) {
        open_loop = 0.9 * open_loop * 0.9 + 1.0 * 0.2 * 1.0 + 0.3;
        REQUIRE_THAT(sys.Sigma[t](0, 0), Catch::Matchers::WithinAbs(open_loop, 1e-12));
    }
}

TEST_CASE("scalar closed loop: joint covariance matches a hand iteration and stays bounded") {
    const int T = 200;
    const double a = 1.05, b = 1.0, p0 = 1.0, vu = 0.02, vx = 0.05, w = 0.1;
    LinearizedPlant lin = scalar_plant(a, b, T);
    CostWeights cost{scalar(1), scalar(1), scalar(1)};
    LqgGains gains;
    gains.L = lqr_gains(lin, cost);
    gains.K = kalman_gains(lin, scalar(p0), std::vector<Matrix>(T, scalar(vu)),
                           std::vector<Matrix>(T, scalar(vx)), std::vector<Matrix>(T, scalar(w)))
                  .K;
    const auto sys = closed_loop_system(lin, gains, scalar(p0), std::vector<Matrix>(T, scalar(vu)),
                                        std::vector<Matrix>(T, scalar(vx)),
                                        std::vector<Matrix>(T, scalar(w)));

    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    cov(0, 0) = p0;
    for (int t = 1; t <= T; ++t) {
        const double l = gains.L[t - 1](0, 0), k = gains.K[t - 1](0, 0);
        Eigen::Matrix2d F;
        F << a, b * l, k * a, k * b * l + (1 - k) * (a + b * l);
        Eigen::Matrix2d G;
        G << 1, 0, k, 1;
        Eigen::Matrix2d R;
        R << b * vu * b + vx, 0, 0, k * w * k;
        cov = F * cov * F.transpose() + G * R * G.transpose();
        REQUIRE_THAT(sys.Sigma[t](0, 0), Catch::Matchers::WithinAbs(cov(0, 0), 1e-12));
        REQUIRE(sys.Sigma[t](0, 0) < 10.0);  // stabilized despite a > 1
    }
}

TEST_CASE("joint covariance blocks stay symmetric PSD") {
    const int T = 20;
    RngStream rng(41, 0);
    LinearizedPlant lin;
    for (int t = 0; t < T; ++t) {
        Matrix A(2, 2), B(2, 1);
        for (int i = 0; i < 4; ++i) A(i / 2, i % 2) = 0.5 * rng.next_normal();
        A += Matrix::Identity(2, 2);
        B << 0.1, 1.0;
        lin.A.push_back(A);
        lin.B.push_back(B);
        lin.H.push_back(Matrix::Identity(2, 2));
    }
    CostWeights cost = CostWeights::identity(2, 1);
    LqgGains gains;
    gains.L = lqr_gains(lin, cost);
    const std::vector<Matrix> Vu(T, scalar(0.1)), Vx(T, 0.05 * Matrix::Identity(2, 2)),
        W(T, 0.2 * Matrix::Identity(2, 2));
    gains.K = kalman_gains(lin, 0.3 * Matrix::Identity(2, 2), Vu, Vx, W).K;
    const auto sys = closed_loop_system(lin, gains, 0.3 * Matrix::Identity(2, 2), Vu, Vx, W);
    for (const auto& S : sys.Sigma) {
        REQUIRE(is_symmetric(S, 1e-9));
        const Eigen::SelfAdjointEigenSolver<Matrix> eig(S);
        REQUIRE(eig.eigenvalues().minCoeff() >= -1e-10);
    }
}

TEST_CASE("mean response matrix: causality and the p0 block") {
    const int T = 3;
    LinearizedPlant lin = scalar_plant(1.1, 0.8, T);
    CostWeights cost{scalar(1), scalar(1), scalar(1)};
    LqgGains gains;
    gains.L = lqr_gains(lin, cost);
    gains.K = kalman_gains(lin, scalar(1.0), std::vector<Matrix>(T, scalar(0.1)),
                           std::vector<Matrix>(T, scalar(0.1)), std::vector<Matrix>(T, scalar(0.1)))
                  .K;
    const auto sys =
        closed_loop_system(lin, gains, scalar(1.0), std::vector<Matrix>(T, scalar(0.1)),
                           std::vector<Matrix>(T, scalar(0.1)), std::vector<Matrix>(T, scalar(0.1)));
    const NoiseLayout layout{1, 1, 1, 1, T};

    const Matrix C0 = mean_response_matrix(sys, lin, gains, layout, 0);
    REQUIRE(C0(0, 0) == 1.0);
    REQUIRE(C0.rightCols(layout.dim() - 1).cwiseAbs().maxCoeff() == 0.0);

    const Matrix C2 = mean_response_matrix(sys, lin, gains, layout, 2);
    for (int b = 1; b < layout.block_count(); ++b) {
        const int step = (b - 1) / 3 + 1;
        const double col_norm =
            C2.middleCols(layout.block_offset(b), layout.block_dim(b)).cwiseAbs().maxCoeff();
        if (step > 2) REQUIRE(col_norm == 0.0);
    }
}

TEST_CASE("mean response matrix matches shifted-mean linear simulations") {
    const int T = 3, dx = 2, du = 1, dz = 2;
    RngStream rng(43, 0);
    LinearizedPlant lin;
    for (int t = 0; t < T; ++t) {
        Matrix A(dx, dx), B(dx, du);
        A << 1.0, 0.1, -0.05, 0.95;
        B << 0.0, 0.12;
        lin.A.push_back(A);
        lin.B.push_back(B);
        lin.H.push_back(Matrix::Identity(dz, dx));
    }
    CostWeights cost = CostWeights::identity(dx, du);
    LqgGains gains;
    gains.L = lqr_gains(lin, cost);
    const Matrix P0 = 0.4 * Matrix::Identity(dx, dx);
    const std::vector<Matrix> Vu(T, scalar(0.2)), Vx(T, 0.1 * Matrix::Identity(dx, dx)),
        W(T, 0.3 * Matrix::Identity(dz, dz));
    gains.K = kalman_gains(lin, P0, Vu, Vx, W).K;
    const auto sys = closed_loop_system(lin, gains, P0, Vu, Vx, W);
    const NoiseLayout layout{dx, du, dx, dz, T};

    Vector mu(layout.dim());
    for (int i = 0; i < mu.size(); ++i) mu[i] = 0.3 * rng.next_normal();

    const int t_query = T;
    const Matrix C = mean_response_matrix(sys, lin, gains, layout, t_query);
    const Vector predicted = C * mu;

    // Simulate the linearized closed loop directly with shifted noise means.
    const int n_sims = 1000000;
    Vector acc = Vector::Zero(dx);
    Vector acc2 = Vector::Zero(dx);
    for (int sim = 0; sim < n_sims; ++sim) {
        RngStream sim_rng(900, static_cast<std::uint64_t>(sim));
        Vector xbar(dx), xhat = Vector::Zero(dx);
        for (int i = 0; i < dx; ++i) xbar[i] = mu[i] + std::sqrt(0.4) * sim_rng.next_normal();
        for (int t = 1; t <= t_query; ++t) {
            Vector vu(du), vx(dx), w(dz);
            const int off = layout.block_offset(layout.ctrl_block(t));
            for (int i = 0; i < du; ++i) vu[i] = mu[off + i] + std::sqrt(0.2) * sim_rng.next_normal();
            const int off_x = layout.block_offset(layout.proc_block(t));
            for (int i = 0; i < dx; ++i)
                vx[i] = mu[off_x + i] + std::sqrt(0.1) * sim_rng.next_normal();
            const int off_w = layout.block_offset(layout.meas_block(t));
            for (int i = 0; i < dz; ++i)
                w[i] = mu[off_w + i] + std::sqrt(0.3) * sim_rng.next_normal();

            const Vector ubar = gains.L[t - 1] * xhat;
            xbar = lin.A[t - 1] * xbar + lin.B[t - 1] * ubar + lin.B[t - 1] * vu + vx;
            const Vector zbar = lin.H[t - 1] * xbar + w;
            xhat = gains.K[t - 1] * zbar +
                   (Matrix::Identity(dx, dx) - gains.K[t - 1] * lin.H[t - 1]) *
                       (lin.A[t - 1] * xhat + lin.B[t - 1] * ubar);
        }
        acc += xbar;
        acc2 += xbar.cwiseProduct(xbar);
    }
    const Vector mean = acc / n_sims;
    for (int i = 0; i < dx; ++i) {
        const double variance = acc2[i] / n_sims - mean[i] * mean[i];
        const double se = std::sqrt(variance / n_sims);
        REQUIRE(std::abs(mean[i] - predicted[i]) <= 3.0 * se);
    }
}

TEST_CASE("rollout tracks a consistent nominal exactly under zero noise") {
    const AirplanePlant plant(airplane_params());
    const int T = 10;
    const NominalTrajectory traj = trim_nominal(plant, T);
    const LinearizedPlant lin = linearize_trajectory(plant, traj);
    CostWeights cost = CostWeights::identity(8, 3);
    LqgGains gains;
    gains.L = lqr_gains(lin, cost);
    const std::vector<Matrix> Vu(T, 0.01 * Matrix::Identity(3, 3)),
        Vx(T, 0.01 * Matrix::Identity(8, 8)), W(T, 0.01 * Matrix::Identity(8, 8));
    gains.K = kalman_gains(lin, 0.01 * Matrix::Identity(8, 8), Vu, Vx, W).K;

    TrajectoryNoise zero;
    zero.init = Vector::Zero(8);
    zero.ctrl.assign(T, Vector::Zero(3));
    zero.proc.assign(T, Vector::Zero(8));
    zero.meas.assign(T, Vector::Zero(8));

    const RolloutResult result = rollout(plant, traj, lin, gains, zero);
    REQUIRE_FALSE(result.domain_exit);
    REQUIRE(result.states.size() == static_cast<std::size_t>(T + 1));
    for (int t = 0; t <= T; ++t)
        REQUIRE((result.states[t] - traj.states[t]).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("LQG regulates an initial deviation on the trim scenario") {
    const AirplanePlant plant(airplane_params());
    const int T = 40;
    const NominalTrajectory traj = trim_nominal(plant, T);
    const LinearizedPlant lin = linearize_trajectory(plant, traj);
    CostWeights cost = CostWeights::identity(8, 3);
    LqgGains gains;
    gains.L = lqr_gains(lin, cost);
    const std::vector<Matrix> Vu(T, 0.01 * Matrix::Identity(3, 3)),
        Vx(T, 1e-4 * Matrix::Identity(8, 8)), W(T, 1e-4 * Matrix::Identity(8, 8));
    gains.K = kalman_gains(lin, 1e-2 * Matrix::Identity(8, 8), Vu, Vx, W).K;

    TrajectoryNoise noise;
    noise.init = Vector::Zero(8);
    noise.init[1] = 0.5;   // lateral offset
    noise.init[2] = -0.3;  // altitude offset
    noise.ctrl.assign(T, Vector::Zero(3));
    noise.proc.assign(T, Vector::Zero(8));
    noise.meas.assign(T, Vector::Zero(8));

    const RolloutResult result = rollout(plant, traj, lin, gains, noise);
    REQUIRE_FALSE(result.domain_exit);
    const double initial = (result.states[0] - traj.states[0]).norm();
    const double final_dev = (result.states[T] - traj.states[T]).norm();
    REQUIRE(final_dev < initial);
}

TEST_CASE("double-integrator rollout reproduces the linear joint recursion exactly") {
    const double dt = 0.2;
    const DoubleIntegratorPlant plant(dt);
    const int T = 8;
    Vector x0(4);
    x0 << 0, 0, 1.0, 0.5;
    NominalTrajectory traj =
        NominalTrajectory::from_controls(plant, x0, std::vector<Vector>(T, Vector::Zero(2)));
    const LinearizedPlant lin = linearize_trajectory(plant, traj);
    CostWeights cost = CostWeights::identity(4, 2);
    LqgGains gains;
    gains.L = lqr_gains(lin, cost);
    const Matrix P0 = 0.2 * Matrix::Identity(4, 4);
    const std::vector<Matrix> Vu(T, 0.1 * Matrix::Identity(2, 2)),
        Vx(T, 0.05 * Matrix::Identity(4, 4)), W(T, 0.1 * Matrix::Identity(4, 4));
    gains.K = kalman_gains(lin, P0, Vu, Vx, W).K;

    RngStream rng(47, 0);
    TrajectoryNoise noise;
    noise.init = Vector::Zero(4);
    for (int i = 0; i < 4; ++i) noise.init[i] = 0.3 * rng.next_normal();
    for (int t = 0; t < T; ++t) {
        Vector vu(2), vx(4), w(4);
        for (int i = 0; i < 2; ++i) vu[i] = 0.2 * rng.next_normal();
        for (int i = 0; i < 4; ++i) vx[i] = 0.1 * rng.next_normal();
        for (int i = 0; i < 4; ++i) w[i] = 0.2 * rng.next_normal();
        noise.ctrl.push_back(vu);
        noise.proc.push_back(vx);
        noise.meas.push_back(w);
    }

    const RolloutResult result = rollout(plant, traj, lin, gains, noise);

    // The plant is exactly linear, so the stacked recursion is exact.
    Vector xbar = noise.init, xhat = Vector::Zero(4);
    for (int t = 1; t <= T; ++t) {
        const Vector ubar = gains.L[t - 1] * xhat;
        xbar = lin.A[t - 1] * xbar + lin.B[t - 1] * (ubar + noise.ctrl[t - 1]) + noise.proc[t - 1];
        const Vector zbar = xbar + noise.meas[t - 1];
        xhat = gains.K[t - 1] * zbar + (Matrix::Identity(4, 4) - gains.K[t - 1]) *
                                           (lin.A[t - 1] * xhat + lin.B[t - 1] * ubar);
        REQUIRE((result.states[t] - (traj.states[t] + xbar)).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("first-order consistency of the mean response on the airplane") {
    const AirplanePlant plant(airplane_params());
    const int T = 5;
    const NominalTrajectory traj = trim_nominal(plant, T);
    const LinearizedPlant lin = linearize_trajectory(plant, traj);
    CostWeights cost = CostWeights::identity(8, 3);
    LqgGains gains;
    gains.L = lqr_gains(lin, cost);
    const std::vector<Matrix> Vu(T, 0.01 * Matrix::Identity(3, 3)),
        Vx(T, 0.01 * Matrix::Identity(8, 8)), W(T, 0.01 * Matrix::Identity(8, 8));
    const Matrix P0 = 0.01 * Matrix::Identity(8, 8);
    gains.K = kalman_gains(lin, P0, Vu, Vx, W).K;
    const auto sys = closed_loop_system(lin, gains, P0, Vu, Vx, W);
    const NoiseLayout layout{8, 3, 8, 8, T};

    RngStream rng(53, 0);
    Vector mu(layout.dim());
    for (int i = 0; i < mu.size(); ++i) mu[i] = rng.next_normal();

    const Matrix C = mean_response_matrix(sys, lin, gains, layout, T);
    auto residual = [&](double eps) {
        TrajectoryNoise noise;
        const Vector scaled = eps * mu;
        noise.init = scaled.head(8);
        for (int t = 1; t <= T; ++t) {
            noise.ctrl.push_back(scaled.segment(layout.block_offset(layout.ctrl_block(t)), 3));
            noise.proc.push_back(scaled.segment(layout.block_offset(layout.proc_block(t)), 8));
            noise.meas.push_back(scaled.segment(layout.block_offset(layout.meas_block(t)), 8));
        }
        const RolloutResult r = rollout(plant, traj, lin, gains, noise);
        return ((r.states[T] - traj.states[T]) - eps * (C * mu)).norm() / eps;
    };
    const double r1 = residual(1e-2);
    const double r2 = residual(1e-3);
    const double r3 = residual(1e-4);
    REQUIRE(r2 < 0.2 * r1);
    REQUIRE(r3 < 0.2 * r2);
}
