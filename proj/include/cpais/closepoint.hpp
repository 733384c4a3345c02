// Likely-collision-mode discovery: for each (time step, robot part,
// obstacle) tuple, find a zero-distance state of locally minimal Mahalanobis
// distance under the deviation covariance. A Newton phase reaches the
// surface d = 0; a projected-descent phase then reduces the Mahalanobis
// distance while staying on the surface.
#pragma once

#include "cpais/common.hpp"
#include "cpais/control.hpp"
#include "cpais/geometry.hpp"

#include <functional>
#include <optional>

namespace cpais {

class ClosePointError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Distance-to-surface problem over state space for one (part, obstacle)
// pair. gradient defaults to central differences of distance.
struct SurfaceProblem {
    std::function<double(const Vector&)> distance;
    std::function<Vector(const Vector&)> gradient;

    static SurfaceProblem with_fd_gradient(std::function<double(const Vector&)> d,
                                           double step_scale = 1e-5) {
        SurfaceProblem p;
        p.distance = std::move(d);
        p.gradient = [dist = p.distance, step_scale](const Vector& x) {
            Vector g(x.size());
            for (int i = 0; i < x.size(); ++i) {
                const double h = step_scale * std::max(1.0, std::abs(x[i]));
                Vector xp = x, xm = x;
                xp[i] += h;
                xm[i] -= h;
                g[i] = (dist(xp) - dist(xm)) / (2.0 * h);
            }
            return g;
        };
        return p;
    }

    static SurfaceProblem for_pair(const Plant& plant, const RobotBody& robot, int part,
                                   const Environment& env, int obstacle) {
        return with_fd_gradient([&plant, &robot, part, &env, obstacle](const Vector& x) {
            return signed_distance(robot, part, plant.configuration(x), env, obstacle).distance;
        });
    }
};

struct ClosePointOptions {
    double eps_distance = 1e-6;   // surface membership |d| tolerance, meters
    double eps_step = 1e-8;       // iterate-change stopping tolerance
    int newton_cap = 100;
    int refine_cap = 50;
    double gamma = 0.5;           // linesearch parameter
    double kappa = 6.0;           // prefilter radius multiplier
    double dedupe_tol = 1e-3;     // state-norm threshold for duplicate modes
    // Keep shrinking the trial step after a non-improving projection instead
    // of terminating at the first one.
    bool persistent_linesearch = false;
};

struct NewtonSurfaceResult {
    Vector x;
    int iterations = 0;
    double distance = 0.0;
};

// Newton iteration toward the d = 0 surface, metric-scaled by Sigma:
//   x_{k+1} = x_k - d(x_k) * Sigma g / (g^T Sigma g).
inline NewtonSurfaceResult newton_to_surface(const SurfaceProblem& problem, const Vector& x_start,
                                             const Matrix& sigma,
                                             const ClosePointOptions& opts = {}) {
    NewtonSurfaceResult result;
    result.x = x_start;
    for (int k = 0; k < opts.newton_cap; ++k) {
        const double d = problem.distance(result.x);
        result.distance = d;
        const Vector g = problem.gradient(result.x);
        const Vector sg = sigma * g;
        const double denom = g.dot(sg);
        if (denom < 1e-14)
            throw ClosePointError("newton_to_surface: degenerate distance gradient (g'Sg = " +
                                  std::to_string(denom) + ")");
        const Vector step = -(d / denom) * sg;
        result.x += step;
        ++result.iterations;
        if (step.norm() < opts.eps_step) break;
    }
    result.distance = problem.distance(result.x);
    if (std::abs(result.distance) >= opts.eps_distance)
        throw ClosePointError("newton_to_surface: no convergence within " +
                              std::to_string(opts.newton_cap) + " iterations (|d| = " +
                              std::to_string(std::abs(result.distance)) + ")");
    return result;
}

struct RefineResult {
    Vector x;
    double maha = 0.0;  // sqrt of the quadratic form
    int iterations = 0;
    bool projection_warning = false;
};

// Projected descent on the squared Mahalanobis distance m(x) subject to
// d(x) = 0; the projection is the same Newton iteration seeded at the
// stepped point. Output never exceeds the input Mahalanobis distance.
inline RefineResult refine_mahalanobis(const SurfaceProblem& problem, const Vector& x_surface,
                                       const Vector& x_star, const Matrix& sigma,
                                       const ClosePointOptions& opts = {}) {
    const Eigen::LLT<Matrix> sigma_llt(sigma);
    require(sigma_llt.info() == Eigen::Success, "refine_mahalanobis: Sigma must be SPD");
    const auto sigma_inv = [&](const Vector& v) { return sigma_llt.solve(v); };
    const auto m_of = [&](const Vector& x) { return (x - x_star).dot(sigma_inv(x - x_star)); };

    RefineResult result;
    result.x = x_surface;
    double m = m_of(x_surface);
    Vector best_x = x_surface;
    double best_m = m;

    double alpha_start = 1.0;
    for (int outer = 0; outer < opts.refine_cap; ++outer) {
        const Vector g = problem.gradient(result.x);
        const double gg = g.squaredNorm();
        if (gg < 1e-14) break;
        const Vector sinv_dx = sigma_inv(result.x - x_star);
        // Projected gradient of the squared Mahalanobis distance: remove the
        // surface-normal component so the step stays tangent to d = 0. The
        // step scaling below then gives a relative decrease of 2*gamma*alpha
        // per accepted step.
        const Vector s = sinv_dx - (g.dot(sinv_dx) / gg) * g;
        const double denom = s.dot(sinv_dx);
        if (std::abs(denom) < 1e-14) break;  // constrained stationary point

        double alpha = alpha_start;
        Vector candidate = result.x;
        double m_next = m;
        bool accepted = false;
        for (int inner = 0; inner < 40; ++inner) {
            const Vector trial = result.x - (alpha * opts.gamma * m / denom) * s;
            alpha /= 2.0;
            std::optional<Vector> projected;
            try {
                projected = newton_to_surface(problem, trial, sigma, opts).x;
            } catch (const ClosePointError&) {
                result.projection_warning = true;
                continue;  // projection failed for this step size
            }
            candidate = *projected;
            m_next = m_of(candidate);
            if (m_next <= m || (candidate - result.x).norm() < opts.eps_step) {
                accepted = true;
                break;
            }
        }
        if (!accepted) break;

        const double step_norm = (candidate - result.x).norm();
        const double m_prev = m;
        result.x = candidate;
        m = m_next;
        ++result.iterations;
        if (m < best_m) {
            best_m = m;
            best_x = result.x;
        }
        if (m >= m_prev || step_norm < opts.eps_step) {
            if (opts.persistent_linesearch && alpha_start > 1e-6 && m >= m_prev) {
                alpha_start /= 4.0;
                continue;
            }
            break;
        }
    }

    result.x = best_x;
    result.maha = std::sqrt(std::max(0.0, best_m));
    return result;
}

// A close obstacle state: the tuple (t, part, obstacle) with its
// zero-distance state of locally minimal Mahalanobis distance.
struct CollisionMode {
    int t = 0;
    int part = 0;
    int obstacle = 0;
    Vector x_obs;
    double maha = 0.0;
    int newton_iterations = 0;
    int refine_iterations = 0;
};

// Searches all (t, part, obstacle) tuples within the bounding prefilter;
// pairs whose search fails are skipped. Modes are deduplicated and ranked
// by Mahalanobis distance with (t, part, obstacle) tie-breaking.
inline std::vector<CollisionMode> close_points(const Plant& plant, const NominalTrajectory& nominal,
                                               const std::vector<Matrix>& sigma,
                                               const RobotBody& robot, const Environment& env,
                                               int top, const ClosePointOptions& opts = {}) {
    robot.validate();
    require(sigma.size() == nominal.states.size(),
            "close_points: need one deviation covariance per trajectory state");
    std::vector<CollisionMode> modes;
    const int T = nominal.horizon();

    for (int t = 0; t <= T; ++t) {
        const Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma[t]);
        const double radius = opts.kappa * std::sqrt(std::max(0.0, eig.eigenvalues().maxCoeff()));
        const Pose nominal_pose = plant.configuration(nominal.states[t]);

        for (int i = 0; i < static_cast<int>(robot.parts.size()); ++i) {
            for (int j = 0; j < static_cast<int>(env.obstacles.size()); ++j) {
                const double clearance = signed_distance(robot, i, nominal_pose, env, j).distance;
                if (clearance > radius) continue;

                const SurfaceProblem problem = SurfaceProblem::for_pair(plant, robot, i, env, j);
                try {
                    const NewtonSurfaceResult surface =
                        newton_to_surface(problem, nominal.states[t], sigma[t], opts);
                    const RefineResult refined =
                        refine_mahalanobis(problem, surface.x, nominal.states[t], sigma[t], opts);
                    CollisionMode mode;
                    mode.t = t;
                    mode.part = i;
                    mode.obstacle = j;
                    mode.x_obs = refined.x;
                    mode.maha = refined.maha;
                    mode.newton_iterations = surface.iterations;
                    mode.refine_iterations = refined.iterations;
                    modes.push_back(std::move(mode));
                } catch (const ClosePointError&) {
                    // pair skipped; neighbors usually cover the same mode
                }
            }
        }
    }

    std::sort(modes.begin(), modes.end(), [](const CollisionMode& a, const CollisionMode& b) {
        if (a.maha != b.maha) return a.maha < b.maha;
        return std::tie(a.t, a.part, a.obstacle) < std::tie(b.t, b.part, b.obstacle);
    });

    std::vector<CollisionMode> kept;
    for (auto& mode : modes) {
        bool duplicate = false;
        for (const auto& k : kept) {
            if (k.x_obs.size() == mode.x_obs.size() &&
                (k.x_obs - mode.x_obs).norm() < opts.dedupe_tol) {
                duplicate = true;
                break;
            }
        }
        if (!duplicate) kept.push_back(std::move(mode));
        if (top > 0 && static_cast<int>(kept.size()) >= top) break;
    }
    return kept;
}

}  // namespace cpais
