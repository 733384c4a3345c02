// Multivariate Gaussian primitives and the joint trajectory-noise
// distribution: sampling, log-densities, Mahalanobis distance.
//
// All density work happens in log space; likelihood ratios are only
// exponentiated at aggregation time. A horizon of T = 100 steps gives joint
// densities far below the double-precision underflow threshold otherwise.
#pragma once

#include "cpais/common.hpp"
#include "cpais/rng.hpp"

#include <memory>
#include <utility>

namespace cpais {

// Immutable Gaussian block with a cached Cholesky factor. Covariances are
// never mutated in place; build a new spec instead.
class GaussianSpec {
  public:
    GaussianSpec(Vector mean, Matrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
        require(cov_.rows() == cov_.cols(), "GaussianSpec: covariance must be square");
        require(mean_.size() == cov_.rows(), "GaussianSpec: mean/covariance dimension mismatch");
        require(is_symmetric(cov_), "GaussianSpec: covariance must be symmetric");
        Eigen::LLT<Matrix> llt(cov_);
        require(llt.info() == Eigen::Success, "GaussianSpec: covariance is not positive definite");
        chol_ = llt.matrixL();
        log_norm_ = -0.5 * static_cast<double>(dim()) * std::log(2.0 * M_PI);
        for (int i = 0; i < dim(); ++i) log_norm_ -= std::log(chol_(i, i));
    }

    // Test-only: a point mass (zero covariance). sample() returns the mean
    // exactly; densities are undefined and throw.
    static GaussianSpec deterministic(Vector mean) {
        GaussianSpec spec;
        spec.mean_ = std::move(mean);
        spec.cov_ = Matrix::Zero(spec.mean_.size(), spec.mean_.size());
        spec.chol_ = spec.cov_;
        spec.degenerate_ = true;
        spec.log_norm_ = -kInf;
        return spec;
    }

    int dim() const { return static_cast<int>(mean_.size()); }
    const Vector& mean() const { return mean_; }
    const Matrix& cov() const { return cov_; }
    const Matrix& chol() const { return chol_; }
    bool degenerate() const { return degenerate_; }

    double log_density(const Vector& x) const {
        require(x.size() == mean_.size(), "log_density: dimension mismatch");
        require(!degenerate_, "log_density: undefined for a point-mass spec");
        Vector y = chol_.triangularView<Eigen::Lower>().solve(x - mean_);
        return log_norm_ - 0.5 * y.squaredNorm();
    }

    Vector sample(RngStream& rng) const {
        Vector z(dim());
        for (int i = 0; i < dim(); ++i) z[i] = rng.next_normal();
        if (degenerate_) return mean_;
        return mean_ + chol_ * z;
    }

  private:
    GaussianSpec() = default;

    Vector mean_;
    Matrix cov_;
    Matrix chol_;  // lower triangular, cov = chol * chol^T
    double log_norm_ = 0.0;
    bool degenerate_ = false;
};

inline double mahalanobis(const Vector& x, const Vector& center, const Matrix& cov) {
    require(x.size() == center.size() && x.size() == cov.rows() && cov.rows() == cov.cols(),
            "mahalanobis: dimension mismatch");
    Eigen::LLT<Matrix> llt(cov);
    require(llt.info() == Eigen::Success, "mahalanobis: covariance is not positive definite");
    Vector y = Matrix(llt.matrixL()).triangularView<Eigen::Lower>().solve(x - center);
    return y.norm();
}

// Index arithmetic for the stacked noise vector
//   X = (p0, v^u_1, v^x_1, w_1, ..., v^u_T, v^x_T, w_T).
// Block 0 is p0; blocks 3(t-1)+{1,2,3} are (v^u_t, v^x_t, w_t).
struct NoiseLayout {
    int d0 = 0;  // initial-state block (state dimension)
    int du = 0;  // control-noise block
    int dx = 0;  // process-noise block
    int dz = 0;  // measurement-noise block
    int horizon = 0;

    int block_count() const { return 1 + 3 * horizon; }
    int dim() const { return d0 + horizon * (du + dx + dz); }

    int block_dim(int b) const {
        if (b == 0) return d0;
        switch ((b - 1) % 3) {
            case 0: return du;
            case 1: return dx;
            default: return dz;
        }
    }

    int block_offset(int b) const {
        if (b == 0) return 0;
        const int t = (b - 1) / 3;  // zero-based step
        int off = d0 + t * (du + dx + dz);
        switch ((b - 1) % 3) {
            case 0: return off;
            case 1: return off + du;
            default: return off + du + dx;
        }
    }

    int ctrl_block(int t) const { return 3 * (t - 1) + 1; }  // t in 1..T
    int proc_block(int t) const { return 3 * (t - 1) + 2; }
    int meas_block(int t) const { return 3 * (t - 1) + 3; }

    bool operator==(const NoiseLayout&) const = default;
};

// One realization of the stacked noise vector.
struct TrajectoryNoise {
    Vector init;                 // p0
    std::vector<Vector> ctrl;    // v^u_1..T
    std::vector<Vector> proc;    // v^x_1..T
    std::vector<Vector> meas;    // w_1..T

    int horizon() const { return static_cast<int>(ctrl.size()); }
};

// Joint distribution of the trajectory noise: independent Gaussian blocks.
// The nominal spec P has all-zero means; importance-sampling components are
// reparameterized copies with shifted means and scaled covariances.
class TrajectoryNoiseSpec {
  public:
    struct StepSpec {
        GaussianSpec ctrl;
        GaussianSpec proc;
        GaussianSpec meas;
    };

    TrajectoryNoiseSpec(GaussianSpec init, std::vector<StepSpec> per_step)
        : init_(std::move(init)), per_step_(std::move(per_step)) {
        require(!per_step_.empty(), "TrajectoryNoiseSpec: horizon must be at least 1");
        for (const auto& s : per_step_) {
            require(s.ctrl.dim() == per_step_.front().ctrl.dim() &&
                        s.proc.dim() == per_step_.front().proc.dim() &&
                        s.meas.dim() == per_step_.front().meas.dim(),
                    "TrajectoryNoiseSpec: inconsistent block dimensions across steps");
        }
    }

    int horizon() const { return static_cast<int>(per_step_.size()); }
    const GaussianSpec& init() const { return init_; }
    const StepSpec& step(int t) const { return per_step_.at(t - 1); }  // t in 1..T

    NoiseLayout layout() const {
        return NoiseLayout{init_.dim(), per_step_.front().ctrl.dim(),
                           per_step_.front().proc.dim(), per_step_.front().meas.dim(),
                           horizon()};
    }

    const GaussianSpec& block(int b) const {
        if (b == 0) return init_;
        const auto& s = per_step_[(b - 1) / 3];
        switch ((b - 1) % 3) {
            case 0: return s.ctrl;
            case 1: return s.proc;
            default: return s.meas;
        }
    }

    void check_compatible(const TrajectoryNoise& noise) const {
        require(noise.horizon() == horizon() && noise.init.size() == init_.dim(),
                "TrajectoryNoise: horizon/dimension mismatch");
        for (int t = 1; t <= horizon(); ++t) {
            const auto& s = step(t);
            require(noise.ctrl[t - 1].size() == s.ctrl.dim() &&
                        noise.proc[t - 1].size() == s.proc.dim() &&
                        noise.meas[t - 1].size() == s.meas.dim(),
                    "TrajectoryNoise: block dimension mismatch");
        }
    }

    double joint_log_density(const TrajectoryNoise& noise) const {
        check_compatible(noise);
        double acc = init_.log_density(noise.init);
        for (int t = 1; t <= horizon(); ++t) {
            const auto& s = step(t);
            acc += s.ctrl.log_density(noise.ctrl[t - 1]);
            acc += s.proc.log_density(noise.proc[t - 1]);
            acc += s.meas.log_density(noise.meas[t - 1]);
        }
        return acc;
    }

    TrajectoryNoise sample(RngStream& rng) const {
        TrajectoryNoise noise;
        noise.init = init_.sample(rng);
        noise.ctrl.reserve(horizon());
        noise.proc.reserve(horizon());
        noise.meas.reserve(horizon());
        for (int t = 1; t <= horizon(); ++t) {
            const auto& s = step(t);
            noise.ctrl.push_back(s.ctrl.sample(rng));
            noise.proc.push_back(s.proc.sample(rng));
            noise.meas.push_back(s.meas.sample(rng));
        }
        return noise;
    }

    // Stacks a realization into layout() order.
    Vector stack(const TrajectoryNoise& noise) const {
        check_compatible(noise);
        const NoiseLayout lay = layout();
        Vector x(lay.dim());
        x.head(lay.d0) = noise.init;
        for (int t = 1; t <= horizon(); ++t) {
            x.segment(lay.block_offset(lay.ctrl_block(t)), lay.du) = noise.ctrl[t - 1];
            x.segment(lay.block_offset(lay.proc_block(t)), lay.dx) = noise.proc[t - 1];
            x.segment(lay.block_offset(lay.meas_block(t)), lay.dz) = noise.meas[t - 1];
        }
        return x;
    }

    TrajectoryNoise unstack(const Vector& x) const {
        const NoiseLayout lay = layout();
        require(x.size() == lay.dim(), "unstack: dimension mismatch");
        TrajectoryNoise noise;
        noise.init = x.head(lay.d0);
        for (int t = 1; t <= horizon(); ++t) {
            noise.ctrl.push_back(x.segment(lay.block_offset(lay.ctrl_block(t)), lay.du));
            noise.proc.push_back(x.segment(lay.block_offset(lay.proc_block(t)), lay.dx));
            noise.meas.push_back(x.segment(lay.block_offset(lay.meas_block(t)), lay.dz));
        }
        return noise;
    }

  private:
    GaussianSpec init_;
    std::vector<StepSpec> per_step_;
};

// log sum_d alpha_d q_d(noise) via log-sum-exp; zero-weight components are
// skipped so they may be degenerate or dimension-incompatible.
inline double mixture_log_density(const std::vector<std::shared_ptr<const TrajectoryNoiseSpec>>& components,
                                  const Vector& weights, const TrajectoryNoise& noise) {
    require(!components.empty(), "mixture_log_density: empty component list");
    require(static_cast<int>(components.size()) == weights.size(),
            "mixture_log_density: component/weight count mismatch");
    require(std::abs(weights.sum() - 1.0) < 1e-9 && weights.minCoeff() >= 0.0,
            "mixture_log_density: weights must lie on the simplex");
    std::vector<double> terms;
    terms.reserve(components.size());
    for (int d = 0; d < weights.size(); ++d) {
        if (weights[d] == 0.0) continue;
        terms.push_back(std::log(weights[d]) + components[d]->joint_log_density(noise));
    }
    return log_sum_exp(terms);
}

}  // namespace cpais
