// Importance-sampling mixture construction. For each collision mode, solve
//   min_{mu, S}  mu' (2S-R)^{-1} mu - 1/2 log(|2S-R||R| / |S|^2)
//   s.t.         C_t mu = x_obs - x*_t
// over the raw noise blocks (p0 and per-step v^u, v^x, w), then assemble the
// defensive mixture with the nominal distribution as the last component.
//
// The objective is the order-2 Renyi divergence D2(P || q) of two Gaussians;
// S = R with the constrained-least-squares mean is both the mean-shift
// special case and the optimizer's starting point.
#pragma once

#include "cpais/closepoint.hpp"
#include "cpais/control.hpp"
#include "cpais/gauss.hpp"

#include <memory>
#include <optional>

namespace cpais {

class IsOptError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

using BlockList = std::vector<Matrix>;  // one SPD matrix per layout block

inline BlockList noise_blocks(const TrajectoryNoiseSpec& spec) {
    BlockList blocks;
    const int n = spec.layout().block_count();
    blocks.reserve(n);
    for (int b = 0; b < n; ++b) blocks.push_back(spec.block(b).cov());
    return blocks;
}

// mu = R C' (C R C')^{-1} b: the minimum-R^{-1}-norm mean moving E[xbar_t]
// to b. Blocks for steps beyond t are zero because C's columns there are.
inline Vector mean_shift_ls(const Matrix& C, const BlockList& R, const NoiseLayout& layout,
                            const Vector& b) {
    require(C.cols() == layout.dim() && static_cast<int>(R.size()) == layout.block_count(),
            "mean_shift_ls: constraint/covariance layout mismatch");
    require(C.rows() == b.size(), "mean_shift_ls: constraint rows must match target");

    Matrix CR(C.rows(), C.cols());
    for (int blk = 0; blk < layout.block_count(); ++blk) {
        const int off = layout.block_offset(blk);
        const int dim = layout.block_dim(blk);
        CR.middleCols(off, dim) = C.middleCols(off, dim) * R[blk];
    }
    const Matrix gram = CR * C.transpose();
    const Eigen::LDLT<Matrix> solver(gram);
    Vector y = solver.solve(b);
    if (solver.info() != Eigen::Success || !y.allFinite() ||
        (gram * y - b).norm() > 1e-6 * std::max(1.0, b.norm()))
        throw IsOptError("mean_shift_ls: constraint matrix is rank deficient");
    return CR.transpose() * y;
}

// Renyi objective over block-diagonal (mu, S); +inf when 2S - R loses
// positive definiteness (linesearch rejection sentinel).
inline double renyi_objective(const Vector& mu, const BlockList& S, const BlockList& R,
                              const NoiseLayout& layout) {
    double quad = 0.0, logdet = 0.0;
    for (int blk = 0; blk < layout.block_count(); ++blk) {
        const Matrix A = 2.0 * S[blk] - R[blk];
        const Eigen::LLT<Matrix> llt_A(A);
        if (llt_A.info() != Eigen::Success) return kInf;
        const Eigen::LLT<Matrix> llt_S(S[blk]);
        if (llt_S.info() != Eigen::Success) return kInf;
        const Eigen::LLT<Matrix> llt_R(R[blk]);
        require(llt_R.info() == Eigen::Success, "renyi_objective: R blocks must be SPD");

        const Vector mu_b = mu.segment(layout.block_offset(blk), layout.block_dim(blk));
        quad += mu_b.dot(llt_A.solve(mu_b));
        const auto log_det = [](const Eigen::LLT<Matrix>& llt) {
            double acc = 0.0;
            const Matrix L = llt.matrixL();
            for (int i = 0; i < L.rows(); ++i) acc += std::log(L(i, i));
            return 2.0 * acc;
        };
        logdet += log_det(llt_A) + log_det(llt_R) - 2.0 * log_det(llt_S);
    }
    return quad - 0.5 * logdet;
}

struct IsOptOptions {
    int max_alternations = 50;
    double objective_tol = 1e-8;
    double constraint_tol = 1e-8;
};

struct ComponentParams {
    std::shared_ptr<const TrajectoryNoiseSpec> spec;
    CollisionMode mode;
    double objective_value = 0.0;
    double initial_objective = 0.0;
    double constraint_residual = 0.0;
    Vector mu;  // raw-block mean, layout order
};

namespace isopt_detail {

// Constrained least squares mean under metric (2S-R)^{-1}.
inline Vector mu_step(const Matrix& C, const BlockList& S, const BlockList& R,
                      const NoiseLayout& layout, const Vector& b) {
    BlockList A(S.size());
    for (std::size_t blk = 0; blk < S.size(); ++blk) A[blk] = 2.0 * S[blk] - R[blk];
    return mean_shift_ls(C, A, layout, b);
}

// Analytic gradient of the objective with respect to each S block:
//   -2 A^{-1} mu mu' A^{-1} - A^{-1} + S^{-1},  A = 2S - R.
inline BlockList s_gradient(const Vector& mu, const BlockList& S, const BlockList& R,
                            const NoiseLayout& layout) {
    BlockList grad(S.size());
    for (int blk = 0; blk < static_cast<int>(S.size()); ++blk) {
        const Matrix A = 2.0 * S[blk] - R[blk];
        const Eigen::LLT<Matrix> llt_A(A);
        const Matrix A_inv = llt_A.solve(Matrix::Identity(A.rows(), A.cols()));
        const Matrix S_inv =
            Eigen::LLT<Matrix>(S[blk]).solve(Matrix::Identity(A.rows(), A.cols()));
        const Vector mu_b = mu.segment(layout.block_offset(blk), layout.block_dim(blk));
        const Vector Amu = llt_A.solve(mu_b);
        grad[blk] = -2.0 * (Amu * Amu.transpose()) - A_inv + S_inv;
        grad[blk] = 0.5 * (grad[blk] + grad[blk].transpose());
    }
    return grad;
}

}  // namespace isopt_detail

// Block coordinate descent: closed-form mu updates alternate with a
// backtracking first-order step on the covariance blocks. The final
// objective never exceeds the S = R initialization.
inline ComponentParams optimize_component(const CollisionMode& mode, const Matrix& C,
                                          const Vector& b, const TrajectoryNoiseSpec& nominal_spec,
                                          const IsOptOptions& opts = {}) {
    const NoiseLayout layout = nominal_spec.layout();
    const BlockList R = noise_blocks(nominal_spec);

    Vector mu = mean_shift_ls(C, R, layout, b);
    BlockList S = R;
    const double initial_objective = renyi_objective(mu, S, R, layout);
    double objective = initial_objective;

    double step = 1.0;
    for (int iter = 0; iter < opts.max_alternations; ++iter) {
        const double previous = objective;

        // S-step: first-order descent, halving the step until the iterate
        // keeps 2S - R positive definite and the objective decreases.
        const BlockList grad = isopt_detail::s_gradient(mu, S, R, layout);
        for (int backtrack = 0; backtrack < 60; ++backtrack) {
            BlockList S_trial(S.size());
            for (std::size_t blk = 0; blk < S.size(); ++blk)
                S_trial[blk] = S[blk] - step * grad[blk];
            const double trial = renyi_objective(mu, S_trial, R, layout);
            if (trial < objective) {
                S = std::move(S_trial);
                objective = trial;
                step *= 2.0;
                break;
            }
            step /= 2.0;
        }

        // mu-step: exact constrained least squares under the current metric.
        const Vector mu_new = isopt_detail::mu_step(C, S, R, layout, b);
        const double after_mu = renyi_objective(mu_new, S, R, layout);
        if (after_mu < objective) {
            mu = mu_new;
            objective = after_mu;
        }

        if (previous - objective < opts.objective_tol) break;
    }

    ComponentParams out;
    out.mode = mode;
    out.mu = mu;
    out.objective_value = objective;
    out.initial_objective = initial_objective;
    out.constraint_residual = (C * mu - b).norm();
    if (out.constraint_residual > opts.constraint_tol * std::max(1.0, b.norm()) &&
        out.constraint_residual > opts.constraint_tol)
        throw IsOptError("optimize_component: constraint residual " +
                         std::to_string(out.constraint_residual));

    // Reassemble the component distribution in raw-block form.
    auto block_spec = [&](int blk) {
        return GaussianSpec(mu.segment(layout.block_offset(blk), layout.block_dim(blk)), S[blk]);
    };
    std::vector<TrajectoryNoiseSpec::StepSpec> steps;
    steps.reserve(layout.horizon);
    for (int t = 1; t <= layout.horizon; ++t)
        steps.push_back({block_spec(layout.ctrl_block(t)), block_spec(layout.proc_block(t)),
                         block_spec(layout.meas_block(t))});
    out.spec = std::make_shared<TrajectoryNoiseSpec>(block_spec(0), std::move(steps));
    return out;
}

// Probability that the Gaussian marginal deviation at step t crosses the
// obstacle half-space through x_obs. n points out of free space (against
// the distance gradient).
inline double halfspace_weight(const CollisionMode& mode, const Vector& x_star,
                               const Matrix& sigma_t, const Vector& distance_grad) {
    const double norm = distance_grad.norm();
    if (norm < 1e-12) return normal_tail(mode.maha);  // degenerate gradient fallback
    const Vector n = -distance_grad / norm;
    const double denom = std::sqrt(n.dot(sigma_t * n));
    if (denom < 1e-15) return normal_tail(mode.maha);
    return normal_tail(n.dot(mode.x_obs - x_star) / denom);
}

enum class WeightInit { Uniform, Halfspace };

struct MixtureSpec {
    std::vector<std::shared_ptr<const TrajectoryNoiseSpec>> components;  // last one is nominal
    Vector weights;
    double defensive_floor = 0.1;
    std::vector<ComponentParams> params;         // per non-nominal component
    std::vector<double> halfspace_weights;       // per non-nominal component

    int size() const { return static_cast<int>(components.size()); }

    bool pure_nominal() const { return size() == 1; }

    void validate() const {
        require(!components.empty(), "MixtureSpec: no components");
        require(weights.size() == size(), "MixtureSpec: weight/component count mismatch");
        require(std::abs(weights.sum() - 1.0) < 1e-9, "MixtureSpec: weights must sum to 1");
        require(weights.minCoeff() >= 0.0, "MixtureSpec: weights must be nonnegative");
        if (size() > 1)
            require(weights[size() - 1] >= defensive_floor - 1e-12,
                    "MixtureSpec: defensive weight below floor");
    }
};

struct MixtureBuildOptions {
    int components = 10;               // D, including the nominal term
    double defensive_floor = 0.1;
    double alpha_nominal_init = 0.5;
    WeightInit weight_init = WeightInit::Uniform;
    IsOptOptions isopt;
};

// Optimizes a component for each of the top D-1 modes and appends the
// nominal as the defensive term. Modes whose optimization fails are dropped
// (D shrinks); zero modes give the pure nominal mixture.
inline MixtureSpec build_mixture(const std::vector<CollisionMode>& modes,
                                 const Plant& plant, const NominalTrajectory& nominal,
                                 const LinearizedPlant& lin, const LqgGains& gains,
                                 const ClosedLoopLinearSystem& sys,
                                 const std::shared_ptr<const TrajectoryNoiseSpec>& nominal_spec,
                                 const RobotBody& robot, const Environment& env,
                                 const MixtureBuildOptions& opts = {}) {
    require(opts.components >= 1, "build_mixture: need at least one component");
    require(opts.defensive_floor >= 0.0 && opts.defensive_floor < 1.0,
            "build_mixture: defensive floor must lie in [0, 1)");
    const NoiseLayout layout = nominal_spec->layout();

    MixtureSpec mix;
    mix.defensive_floor = opts.defensive_floor;

    const int budget = std::min<int>(opts.components - 1, static_cast<int>(modes.size()));
    for (int d = 0; d < budget; ++d) {
        const CollisionMode& mode = modes[d];
        const Matrix C = mean_response_matrix(sys, lin, gains, layout, mode.t);
        const Vector b = mode.x_obs - nominal.states[mode.t];
        try {
            ComponentParams comp = optimize_component(mode, C, b, *nominal_spec, opts.isopt);
            const DistanceGradient grad =
                distance_gradient(plant, robot, mode.part, env, mode.obstacle, mode.x_obs);
            mix.halfspace_weights.push_back(
                halfspace_weight(mode, nominal.states[mode.t], sys.Sigma[mode.t], grad.gradient));
            mix.components.push_back(comp.spec);
            mix.params.push_back(std::move(comp));
        } catch (const IsOptError&) {
            // dropped mode shrinks the mixture
        }
    }
    mix.components.push_back(nominal_spec);

    const int D = mix.size();
    mix.weights = Vector::Zero(D);
    if (D == 1) {
        mix.weights[0] = 1.0;
        return mix;
    }

    const double alpha_nominal = std::max(opts.defensive_floor, opts.alpha_nominal_init);
    mix.weights[D - 1] = alpha_nominal;
    if (opts.weight_init == WeightInit::Uniform) {
        for (int d = 0; d < D - 1; ++d) mix.weights[d] = (1.0 - alpha_nominal) / (D - 1);
    } else {
        double total = 0.0;
        for (double w : mix.halfspace_weights) total += w;
        for (int d = 0; d < D - 1; ++d) {
            mix.weights[d] = total > 0 ? (1.0 - alpha_nominal) * mix.halfspace_weights[d] / total
                                       : (1.0 - alpha_nominal) / (D - 1);
        }
    }
    mix.validate();
    return mix;
}

}  // namespace cpais
