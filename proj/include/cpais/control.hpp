// LQG trajectory tracking: linearization along a nominal trajectory,
// finite-horizon LQR feedback gains, time-varying Kalman gains, the full
// nonlinear closed-loop rollout, and the linearized joint system
//   y_t = F_t y_{t-1} + G_t r_t,  y_t = [xbar_t; xhat_t]
// used to design importance-sampling components.
#pragma once

#include "cpais/common.hpp"
#include "cpais/dynamics.hpp"
#include "cpais/gauss.hpp"

#include <vector>

namespace cpais {

struct NominalTrajectory {
    std::vector<Vector> states;    // x*_0 .. x*_T
    std::vector<Vector> controls;  // u*_0 .. u*_{T-1}

    int horizon() const { return static_cast<int>(controls.size()); }

    // x*_t must be the noise-free propagation of x*_{t-1}.
    void validate(const Plant& plant, double tol = 1e-9) const {
        require(states.size() == controls.size() + 1,
                "NominalTrajectory: need one more state than controls");
        require(!controls.empty(), "NominalTrajectory: horizon must be at least 1");
        double max_residual = 0.0;
        for (int t = 1; t <= horizon(); ++t) {
            const Vector predicted = plant.step(states[t - 1], controls[t - 1]);
            max_residual = std::max(max_residual, (states[t] - predicted).cwiseAbs().maxCoeff());
        }
        if (max_residual > tol)
            throw std::invalid_argument("NominalTrajectory: states are not consistent with "
                                        "the dynamics (max residual " +
                                        std::to_string(max_residual) + ")");
    }

    static NominalTrajectory from_controls(const Plant& plant, const Vector& x0,
                                           std::vector<Vector> controls) {
        NominalTrajectory traj;
        traj.controls = std::move(controls);
        traj.states.reserve(traj.controls.size() + 1);
        traj.states.push_back(x0);
        for (const auto& u : traj.controls) traj.states.push_back(plant.step(traj.states.back(), u));
        return traj;
    }
};

struct LinearizedPlant {
    std::vector<Matrix> A;  // t = 1..T at index t-1
    std::vector<Matrix> B;
    std::vector<Matrix> H;

    int horizon() const { return static_cast<int>(A.size()); }
};

inline LinearizedPlant linearize_trajectory(const Plant& plant, const NominalTrajectory& nominal) {
    LinearizedPlant lin;
    const int T = nominal.horizon();
    lin.A.reserve(T);
    lin.B.reserve(T);
    lin.H.reserve(T);
    const Matrix identity = Matrix::Identity(plant.state_dim(), plant.state_dim());
    for (int t = 1; t <= T; ++t) {
        auto [A, B] = plant.jacobians(nominal.states[t - 1], nominal.controls[t - 1]);
        lin.A.push_back(std::move(A));
        lin.B.push_back(std::move(B));
        lin.H.push_back(identity);  // full state observation
    }
    return lin;
}

struct CostWeights {
    Matrix Q;       // state regulation
    Matrix R;       // control effort
    Matrix Qfinal;  // terminal state

    static CostWeights identity(int dx, int du) {
        return {Matrix::Identity(dx, dx), Matrix::Identity(du, du), Matrix::Identity(dx, dx)};
    }
};

struct LqgGains {
    std::vector<Matrix> L;  // LQR feedback, t = 1..T at index t-1 (d_u x d_x)
    std::vector<Matrix> K;  // Kalman gains, t = 1..T at index t-1 (d_x x d_z)

    int horizon() const { return static_cast<int>(L.size()); }
};

// Backward Riccati recursion with terminal cost Qfinal; the control law is
// ubar_{t-1} = L_t xhat_{t-1}.
inline std::vector<Matrix> lqr_gains(const LinearizedPlant& plant, const CostWeights& cost) {
    require(is_positive_definite(cost.R), "lqr_gains: control penalty must be SPD");
    const int T = plant.horizon();
    std::vector<Matrix> gains(T);
    Matrix P = cost.Qfinal;
    for (int t = T; t >= 1; --t) {
        const Matrix& A = plant.A[t - 1];
        const Matrix& B = plant.B[t - 1];
        const Matrix gram = cost.R + B.transpose() * P * B;
        Eigen::LDLT<Matrix> solver(gram);
        require(solver.info() == Eigen::Success, "lqr_gains: control Gram matrix not invertible");
        gains[t - 1] = -solver.solve(B.transpose() * P * A);
        P = cost.Q + A.transpose() * P * (A + B * gains[t - 1]);
        P = 0.5 * (P + P.transpose());
    }
    return gains;
}

struct KalmanResult {
    std::vector<Matrix> K;            // t = 1..T
    std::vector<Matrix> sigma_pred;   // filter a-priori covariances, t = 1..T
};

inline KalmanResult kalman_gains(const LinearizedPlant& plant, const Matrix& P0,
                                 const std::vector<Matrix>& Vu, const std::vector<Matrix>& Vx,
                                 const std::vector<Matrix>& W) {
    const int T = plant.horizon();
    require(static_cast<int>(Vu.size()) == T && static_cast<int>(Vx.size()) == T &&
                static_cast<int>(W.size()) == T,
            "kalman_gains: per-step covariance lists must match the horizon");
    KalmanResult out;
    out.K.reserve(T);
    out.sigma_pred.reserve(T);
    Matrix sigma = P0;  // posterior error covariance, starts at P0
    const Matrix identity = Matrix::Identity(P0.rows(), P0.cols());
    for (int t = 1; t <= T; ++t) {
        const Matrix& A = plant.A[t - 1];
        const Matrix& B = plant.B[t - 1];
        const Matrix& H = plant.H[t - 1];
        Matrix pred = A * sigma * A.transpose() + B * Vu[t - 1] * B.transpose() + Vx[t - 1];
        pred = 0.5 * (pred + pred.transpose());
        const Matrix innovation = H * pred * H.transpose() + W[t - 1];
        Eigen::LDLT<Matrix> solver(innovation);
        require(solver.info() == Eigen::Success,
                "kalman_gains: innovation covariance not invertible");
        const Matrix K = (solver.solve(H * pred.transpose())).transpose();
        sigma = (identity - K * H) * pred;
        sigma = 0.5 * (sigma + sigma.transpose());
        out.K.push_back(K);
        out.sigma_pred.push_back(std::move(pred));
    }
    return out;
}

// The linearized closed loop in stacked form. Sigma holds the a-priori
// covariances of the true deviation xbar_t (top-left block of Cov(y_t)),
// with Sigma[0] = P0.
struct ClosedLoopLinearSystem {
    std::vector<Matrix> F;      // t = 1..T, (2dx x 2dx)
    std::vector<Matrix> G;      // t = 1..T
    std::vector<Matrix> Rt;     // lumped noise covariance of r_t
    std::vector<Matrix> Sigma;  // t = 0..T, (dx x dx)

    int horizon() const { return static_cast<int>(F.size()); }
};

inline ClosedLoopLinearSystem closed_loop_system(const LinearizedPlant& plant, const LqgGains& gains,
                                                 const Matrix& P0, const std::vector<Matrix>& Vu,
                                                 const std::vector<Matrix>& Vx,
                                                 const std::vector<Matrix>& W) {
    const int T = plant.horizon();
    require(gains.horizon() == T, "closed_loop_system: gains/linearization horizon mismatch");
    const int dx = static_cast<int>(P0.rows());
    ClosedLoopLinearSystem sys;
    sys.F.reserve(T);
    sys.G.reserve(T);
    sys.Rt.reserve(T);
    sys.Sigma.reserve(T + 1);

    const Matrix identity = Matrix::Identity(dx, dx);
    Matrix cov_y = Matrix::Zero(2 * dx, 2 * dx);
    cov_y.topLeftCorner(dx, dx) = P0;
    sys.Sigma.push_back(P0);

    for (int t = 1; t <= T; ++t) {
        const Matrix& A = plant.A[t - 1];
        const Matrix& B = plant.B[t - 1];
        const Matrix& H = plant.H[t - 1];
        const Matrix& L = gains.L[t - 1];
        const Matrix& K = gains.K[t - 1];
        const Matrix KH = K * H;
        const Matrix BL = B * L;

        Matrix F = Matrix::Zero(2 * dx, 2 * dx);
        F.topLeftCorner(dx, dx) = A;
        F.topRightCorner(dx, dx) = BL;
        F.bottomLeftCorner(dx, dx) = KH * A;
        F.bottomRightCorner(dx, dx) = KH * BL + (identity - KH) * (A + BL);

        Matrix G = Matrix::Zero(2 * dx, 2 * dx);
        G.topLeftCorner(dx, dx) = identity;
        G.bottomLeftCorner(dx, dx) = KH;
        G.bottomRightCorner(dx, dx) = identity;

        Matrix R = Matrix::Zero(2 * dx, 2 * dx);
        R.topLeftCorner(dx, dx) = B * Vu[t - 1] * B.transpose() + Vx[t - 1];
        R.bottomRightCorner(dx, dx) = K * W[t - 1] * K.transpose();

        cov_y = F * cov_y * F.transpose() + G * R * G.transpose();
        cov_y = 0.5 * (cov_y + cov_y.transpose());
        sys.Sigma.push_back(cov_y.topLeftCorner(dx, dx));

        sys.F.push_back(std::move(F));
        sys.G.push_back(std::move(G));
        sys.Rt.push_back(std::move(R));
    }
    return sys;
}

// C_t maps the stacked raw noise means (p0, then per-step v^u, v^x, w) to
// E[xbar_t] under the linearized closed loop. Columns for steps s > t are
// zero; the p0 block at t = 0 is the identity.
inline Matrix mean_response_matrix(const ClosedLoopLinearSystem& sys, const LinearizedPlant& plant,
                                   const LqgGains& gains, const NoiseLayout& layout, int t) {
    require(t >= 0 && t <= sys.horizon(), "mean_response_matrix: step index out of range");
    const int dx = layout.d0;
    Matrix M = Matrix::Zero(2 * dx, layout.dim());
    M.block(0, 0, dx, dx) = Matrix::Identity(dx, dx);  // y_0 = [p0; 0]

    for (int s = 1; s <= t; ++s) {
        M = sys.F[s - 1] * M;
        const Matrix& B = plant.B[s - 1];
        const Matrix& H = plant.H[s - 1];
        const Matrix& K = gains.K[s - 1];
        const Matrix KH = K * H;
        // G_s J_s with J_s injecting (v^u, v^x, w) into r_s.
        M.block(0, layout.block_offset(layout.ctrl_block(s)), dx, layout.du) += B;
        M.block(dx, layout.block_offset(layout.ctrl_block(s)), dx, layout.du) += KH * B;
        M.block(0, layout.block_offset(layout.proc_block(s)), dx, layout.dx) +=
            Matrix::Identity(dx, dx);
        M.block(dx, layout.block_offset(layout.proc_block(s)), dx, layout.dx) += KH;
        M.block(dx, layout.block_offset(layout.meas_block(s)), dx, layout.dz) += K;
    }
    return M.topRows(dx);
}

struct RolloutResult {
    std::vector<Vector> states;     // x_0 .. x_T (truncated on domain exit)
    std::vector<Vector> estimates;  // xhat_0 .. xhat_{T-1} (deviation estimates)
    std::vector<Vector> applied_controls;  // commanded u_0 .. u_{T-1}
    bool domain_exit = false;
    int exit_step = -1;  // first step whose propagation failed, if any
};

// Closed-loop simulation under the TRUE nonlinear dynamics with the
// precomputed linearization-based LQG gains. Domain exits are recorded, not
// thrown; the caller treats them as collisions.
inline RolloutResult rollout(const Plant& plant, const NominalTrajectory& nominal,
                             const LinearizedPlant& lin, const LqgGains& gains,
                             const TrajectoryNoise& noise) {
    const int T = nominal.horizon();
    require(noise.horizon() == T, "rollout: noise horizon mismatch");
    const int dx = plant.state_dim();

    RolloutResult result;
    result.states.reserve(T + 1);
    result.estimates.reserve(T);
    result.applied_controls.reserve(T);

    result.states.push_back(nominal.states[0] + noise.init);
    Vector xhat = Vector::Zero(dx);

    for (int t = 1; t <= T; ++t) {
        const Matrix& A = lin.A[t - 1];
        const Matrix& B = lin.B[t - 1];
        const Matrix& H = lin.H[t - 1];
        const Matrix& K = gains.K[t - 1];

        result.estimates.push_back(xhat);
        const Vector ubar = gains.L[t - 1] * xhat;
        const Vector u = nominal.controls[t - 1] + ubar;
        result.applied_controls.push_back(u);

        Vector x_next;
        try {
            x_next = plant.step(result.states.back(), u + noise.ctrl[t - 1]) + noise.proc[t - 1];
            if (!x_next.allFinite()) throw SingularStateError("non-finite state");
        } catch (const SingularStateError&) {
            result.domain_exit = true;
            result.exit_step = t;
            result.estimates.pop_back();
            result.applied_controls.pop_back();
            break;
        }
        result.states.push_back(x_next);

        const Vector zbar = plant.observe(x_next) - plant.observe(nominal.states[t]) +
                            noise.meas[t - 1];
        xhat = K * zbar + (Matrix::Identity(dx, dx) - K * H) * (A * xhat + B * ubar);
    }
    return result;
}

}  // namespace cpais
