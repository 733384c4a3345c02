// Collision probability estimators: naive Monte Carlo, fixed-mixture
// importance sampling, and adaptive mixture importance sampling with
// stochastic mirror descent on the component weights.
//
// Point estimates and variance estimates are self-normalized: sums of
// (f * w) and w over every sample drawn, each weighted by the mixture in
// force when it was drawn. Everything runs in log space until aggregation.
#pragma once

#include "cpais/control.hpp"
#include "cpais/gauss.hpp"
#include "cpais/geometry.hpp"
#include "cpais/isopt.hpp"
#include "cpais/parallel.hpp"

#include <chrono>
#include <numeric>

namespace cpais {

struct SampleRecord {
    bool collided = false;           // f in {0, 1}, domain exits included
    double log_w = 0.0;              // log P(X) - log Q(X) at draw-time weights
    int component_draw = -1;         // mixture component the sample came from
    bool domain_exit = false;
    double log_p = 0.0;              // joint log density under the nominal P
    std::vector<double> log_qd;      // per-component joint log densities
};

struct TraceRow {
    int batch = 0;
    long samples = 0;           // cumulative
    double p_hat = 0.0;         // running self-normalized estimate
    double sigma_hat = 0.0;
    Vector alpha;               // weights used for this batch
    double max_ratio = 0.0;     // largest likelihood ratio seen so far
    long domain_exits = 0;      // cumulative
};

struct Estimate {
    double p_hat = 0.0;
    double v_hat = 0.0;
    double sigma_hat = 0.0;
    long samples_used = 0;
    std::vector<TraceRow> trace;
    double wall_time = 0.0;  // seconds
    std::uint64_t seed = 0;
    std::string method;      // "naive" | "is" | "ais"
    Vector final_weights;    // empty for naive
    long domain_exits = 0;
};

// Everything needed to turn one noise realization into a collision flag.
struct SimulationContext {
    const Plant& plant;
    const NominalTrajectory& nominal;
    const LinearizedPlant& lin;
    const LqgGains& gains;
    const RobotBody& robot;
    const Environment& env;
    double margin = 0.0;
    int threads = 0;  // 0: CPAIS_THREADS or hardware default
};

inline bool rollout_collides(const SimulationContext& ctx, const RolloutResult& result) {
    std::vector<Pose> poses;
    poses.reserve(result.states.size());
    for (const auto& x : result.states) poses.push_back(ctx.plant.configuration(x));
    if (!poses.empty() && swept_collides(ctx.robot, ctx.env, poses, ctx.margin).collided)
        return true;
    return result.domain_exit;  // model-domain exits count as collision
}

// Evaluates one sample under its own counter-derived stream. For a mixture,
// the stream first picks the component, then draws the noise; densities are
// recorded under every component (the weight-update gradient and the final
// estimators both need them).
inline SampleRecord evaluate_sample(const SimulationContext& ctx, const MixtureSpec& mixture,
                                    const TrajectoryNoiseSpec& nominal_spec,
                                    std::uint64_t sample_index, std::uint64_t master_seed) {
    RngStream rng(master_seed, sample_index);
    SampleRecord rec;

    TrajectoryNoise noise;
    if (mixture.pure_nominal()) {
        noise = nominal_spec.sample(rng);
        rec.component_draw = 0;
        rec.log_w = 0.0;  // exactly: P and Q coincide
    } else {
        const double u = rng.next_uniform();
        double cumulative = 0.0;
        int d = mixture.size() - 1;
        for (int c = 0; c < mixture.size(); ++c) {
            cumulative += mixture.weights[c];
            if (u <= cumulative) {
                d = c;
                break;
            }
        }
        rec.component_draw = d;
        noise = mixture.components[d]->sample(rng);

        rec.log_qd.resize(mixture.size());
        std::vector<double> weighted(mixture.size());
        for (int c = 0; c < mixture.size(); ++c) {
            rec.log_qd[c] = mixture.components[c]->joint_log_density(noise);
            weighted[c] = std::log(mixture.weights[c]) + rec.log_qd[c];
        }
        rec.log_p = nominal_spec.joint_log_density(noise);
        rec.log_w = rec.log_p - log_sum_exp(weighted);
    }

    const RolloutResult result = rollout(ctx.plant, ctx.nominal, ctx.lin, ctx.gains, noise);
    rec.domain_exit = result.domain_exit;
    rec.collided = rollout_collides(ctx, result);
    return rec;
}

namespace estimator_detail {

// Self-normalized estimators over all records, in log space.
inline std::pair<double, double> self_normalized(const std::vector<SampleRecord>& records) {
    std::vector<double> log_w_all, log_w_hit;
    log_w_all.reserve(records.size());
    for (const auto& r : records) {
        log_w_all.push_back(r.log_w);
        if (r.collided) log_w_hit.push_back(r.log_w);
    }
    const double log_sum_w = log_sum_exp(log_w_all);
    require(std::isfinite(log_sum_w), "self_normalized: degenerate likelihood-ratio normalizer");
    const double log_sum_fw = log_sum_exp(log_w_hit);
    const double p_hat = std::isfinite(log_sum_fw) ? std::exp(log_sum_fw - log_sum_w) : 0.0;

    std::vector<double> log_terms;
    log_terms.reserve(records.size());
    for (const auto& r : records) {
        const double deviation = std::abs((r.collided ? 1.0 : 0.0) - p_hat);
        if (deviation > 0.0) log_terms.push_back(2.0 * (r.log_w + std::log(deviation)));
    }
    const double log_num = log_sum_exp(log_terms);
    const double v_hat = std::isfinite(log_num)
                             ? std::exp(log_num - 2.0 * log_sum_w) / records.size()
                             : 0.0;
    return {p_hat, v_hat};
}

inline TraceRow make_trace_row(int batch, const std::vector<SampleRecord>& all, const Vector& alpha) {
    TraceRow row;
    row.batch = batch;
    row.samples = static_cast<long>(all.size());
    const auto [p, v] = self_normalized(all);
    row.p_hat = p;
    row.sigma_hat = std::sqrt(std::max(0.0, v));
    row.alpha = alpha;
    double max_log_w = -kInf;
    for (const auto& r : all) {
        max_log_w = std::max(max_log_w, r.log_w);
        row.domain_exits += r.domain_exit ? 1 : 0;
    }
    row.max_ratio = std::exp(max_log_w);
    return row;
}

}  // namespace estimator_detail

// Naive Monte Carlo: Q = P. Binomial variance estimate.
inline Estimate naive_mc(const SimulationContext& ctx,
                         const std::shared_ptr<const TrajectoryNoiseSpec>& nominal_spec,
                         long m, std::uint64_t seed) {
    require(m >= 1, "naive_mc: need at least one sample");
    const auto start = std::chrono::steady_clock::now();

    MixtureSpec pure;
    pure.components = {nominal_spec};
    pure.weights = Vector::Constant(1, 1.0);

    std::vector<SampleRecord> records(m);
    parallel_for(static_cast<std::size_t>(m), [&](std::size_t i) {
        records[i] = evaluate_sample(ctx, pure, *nominal_spec, i, seed);
    }, ctx.threads);

    Estimate est;
    est.method = "naive";
    est.seed = seed;
    est.samples_used = m;
    long hits = 0;
    for (const auto& r : records) {
        hits += r.collided ? 1 : 0;
        est.domain_exits += r.domain_exit ? 1 : 0;
    }
    est.p_hat = static_cast<double>(hits) / static_cast<double>(m);
    est.v_hat = est.p_hat * (1.0 - est.p_hat) / static_cast<double>(m);
    est.sigma_hat = std::sqrt(est.v_hat);

    TraceRow row;
    row.batch = 1;
    row.samples = m;
    row.p_hat = est.p_hat;
    row.sigma_hat = est.sigma_hat;
    row.max_ratio = 1.0;
    row.domain_exits = est.domain_exits;
    est.trace.push_back(std::move(row));
    est.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return est;
}

// One stochastic mirror descent update of the mixture weights. alpha_tilde
// is the mirrored state (kept in sync with the clamped weights);
// gradient_scale tracks the running maximum gradient magnitude so the
// C/sqrt(i) schedule acts on a normalized gradient.
inline Vector mirror_descent_step(Vector& alpha_tilde, const std::vector<SampleRecord>& batch,
                                  int iteration, double step_size, double defensive_floor,
                                  double& gradient_scale) {
    require(!batch.empty(), "mirror_descent_step: empty batch");
    const int D = static_cast<int>(alpha_tilde.size());

    Vector gradient = Vector::Zero(D);
    for (const auto& rec : batch) {
        if (!rec.collided || rec.log_qd.empty()) continue;
        const double log_Q = rec.log_p - rec.log_w;
        for (int d = 0; d < D; ++d) {
            const double log_term = 2.0 * rec.log_w + rec.log_qd[d] - log_Q;
            double term = std::exp(log_term);
            term = std::min(term, 1e6);  // magnitude guard
            gradient[d] -= term / static_cast<double>(batch.size());
        }
    }

    gradient_scale = std::max(gradient_scale, gradient.cwiseAbs().maxCoeff());
    if (gradient_scale > 0.0)
        alpha_tilde -= (step_size / std::sqrt(static_cast<double>(iteration))) *
                       (gradient / gradient_scale);

    // Exponentiate and normalize.
    Vector alpha = (alpha_tilde.array() - alpha_tilde.maxCoeff()).exp();
    alpha /= alpha.sum();

    // Defensive clamp on the nominal (last) component, then renormalize.
    if (D > 1 && alpha[D - 1] < defensive_floor) {
        const double rest = alpha.head(D - 1).sum();
        alpha.head(D - 1) *= (1.0 - defensive_floor) / rest;
        alpha[D - 1] = defensive_floor;
    }
    alpha_tilde = alpha.array().log();
    return alpha;
}

// Adaptive mixture importance sampling: l batches of k samples, a weight
// update between batches, and self-normalized estimators over all l*k
// samples with the weights current at each sample's draw time.
inline Estimate ais_estimate(const SimulationContext& ctx, const MixtureSpec& mixture,
                             const std::shared_ptr<const TrajectoryNoiseSpec>& nominal_spec,
                             int batch_size, int iterations, double step_size, std::uint64_t seed,
                             const std::string& method = "ais") {
    require(batch_size >= 1 && iterations >= 1, "ais_estimate: k and l must be positive");
    mixture.validate();
    if (!mixture.pure_nominal())
        require(mixture.weights.minCoeff() > 0.0,
                "ais_estimate: adaptive weights must start strictly positive");
    const auto start = std::chrono::steady_clock::now();

    MixtureSpec current = mixture;
    Vector alpha_tilde = current.weights.array().log();
    double gradient_scale = 0.0;

    std::vector<SampleRecord> all;
    all.reserve(static_cast<std::size_t>(batch_size) * iterations);
    Estimate est;
    est.method = method;
    est.seed = seed;

    for (int i = 1; i <= iterations; ++i) {
        std::vector<SampleRecord> batch(batch_size);
        const std::uint64_t base = static_cast<std::uint64_t>(i - 1) * batch_size;
        parallel_for(static_cast<std::size_t>(batch_size), [&](std::size_t j) {
            batch[j] = evaluate_sample(ctx, current, *nominal_spec, base + j, seed);
        }, ctx.threads);

        const Vector alpha_used = current.weights;
        all.insert(all.end(), batch.begin(), batch.end());
        est.trace.push_back(estimator_detail::make_trace_row(i, all, alpha_used));

        if (!current.pure_nominal())
            current.weights = mirror_descent_step(alpha_tilde, batch, i, step_size,
                                                  current.defensive_floor, gradient_scale);
    }

    const auto [p, v] = estimator_detail::self_normalized(all);
    est.p_hat = p;
    est.v_hat = v;
    est.sigma_hat = std::sqrt(std::max(0.0, v));
    est.samples_used = static_cast<long>(all.size());
    est.final_weights = current.weights;
    est.domain_exits = est.trace.back().domain_exits;
    est.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return est;
}

// Non-adaptive mixture importance sampling: a single batch, no update.
inline Estimate is_fixed(const SimulationContext& ctx, const MixtureSpec& mixture,
                         const std::shared_ptr<const TrajectoryNoiseSpec>& nominal_spec, long m,
                         std::uint64_t seed) {
    require(m >= 1, "is_fixed: need at least one sample");
    return ais_estimate(ctx, mixture, nominal_spec, static_cast<int>(m), 1, 1.0, seed, "is");
}

}  // namespace cpais
