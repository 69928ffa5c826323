#pragma once

// Compositional samplers over a FactorChain.
//
//   compose_guided       message passing on Tweedie estimates, steered with
//                        diffusion-sphere guidance (EMA + latest model)
//   compose_independent  every chunk denoised alone, same spherical update
//   compose_diffcollage  noisy Bethe score composition over the merged plan

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "chainmp/chain.hpp"
#include "chainmp/denoiser.hpp"
#include "chainmp/errors.hpp"
#include "chainmp/gradtape.hpp"
#include "chainmp/messages.hpp"
#include "chainmp/rng.hpp"
#include "chainmp/schedule.hpp"

namespace chainmp {

struct GuidanceConfig {
    double g_r = 0.6;
    std::size_t element_count = 0;  // 0: derive n * F * d from the chain
    int steps = 300;
    std::uint64_t seed = 0;

    /// Returns the element count after checking it against the chain.
    std::size_t resolve(const FactorChain& chain) const {
        if (!(g_r >= 0.0 && g_r <= 1.0)) throw ConfigError("guidance weight g_r must lie in [0, 1]");
        if (element_count != 0 && element_count != chain.element_count()) {
            throw ConfigError("element_count " + std::to_string(element_count) + " != n*F*d = " +
                              std::to_string(chain.element_count()));
        }
        return chain.element_count();
    }
};

struct StepRecord {
    int t = 0;
    int prev = 0;
    double sigma = 0.0;
    double radius = 0.0;
    double sync_loss = 0.0;
    double async_loss = 0.0;
    double start_err = 0.0;
    double goal_err = 0.0;
    double max_transition = 0.0;
    double grad_norm = 0.0;
    double sphere_dev = 0.0;  // | ||x_prev - mu|| - radius |
    bool guided = false;
    long nfe = 0;             // cumulative chunk-model forward passes
};

struct SampleTrace {
    std::string sampler;
    std::vector<StepRecord> steps;
    Tensor chunks;  // [n x F x d]
    Tensor plan;    // [m x d]
    long nfe_chunk = 0;
    long nfe_boundary = 0;
    std::size_t skipped_guidance = 0;

    double max_sphere_dev() const {
        double m = 0.0;
        for (const auto& s : steps) m = std::max(m, s.sphere_dev);
        return m;
    }
};

namespace detail {

inline double norm2(const Tensor& v) {
    double s = 0.0;
    for (double e : v.values()) s += e * e;
    return std::sqrt(s);
}

/// mu + r * dir / ||dir||; collapses to mu when r == 0.
inline Tensor sphere_step(const Tensor& mu, const Tensor& dir, double r) {
    Tensor x = mu;
    if (r == 0.0) return x;
    const double n = norm2(dir);
    if (!(n > 0.0)) return x;
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = mu[k] + r * dir[k] / n;
    return x;
}

/// Steepest-descent target on the sphere: -r * grad / ||grad||.
inline Tensor dsg_target(const Tensor& grad, double r) {
    const double n = norm2(grad);
    if (!(n > 0.0)) throw ContractError("dsg_target: zero gradient");
    Tensor d(grad.shape());
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = -r * grad[k] / n;
    return d;
}

/// d_sample + g_r * (d_star - d_sample)
inline Tensor dsg_mix(const Tensor& d_sample, const Tensor& d_star, double g_r) {
    Tensor d = d_sample;
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = d_sample[k] + g_r * (d_star[k] - d_sample[k]);
    return d;
}

inline double sphere_deviation(const Tensor& x, const Tensor& mu, double r) {
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - mu[k]) * (x[k] - mu[k]);
    return std::abs(std::sqrt(s) - r);
}

inline void check_finite(const Tensor& x, const char* what, const StepRecord& rec) {
    if (!x.all_finite()) {
        std::ostringstream os;
        os << what << ": non-finite state at t=" << rec.t << " (prev=" << rec.prev << ", sigma=" << rec.sigma
           << ", sync=" << rec.sync_loss << ", async=" << rec.async_loss << ")";
        throw NumericalError(os.str());
    }
}

/// Fills the diagnostic fields of `rec` from Tweedie estimates.
inline void diagnose(StepRecord& rec, const SyncSystem& sync, const AsyncConfig& async_cfg, const FactorChain& chain,
                     const Tensor& ema_x0, const Tensor& latest_x0) {
    ad::Tape tape;
    const ad::Var e = tape.constant(ema_x0);
    rec.sync_loss = sync_loss(sync, e).value().item();
    rec.async_loss = async_loss(async_cfg, e, tape.constant(latest_x0), chain).value().item();
    const auto res = boundary_residuals(ema_x0, chain);
    rec.start_err = res.start_err;
    rec.goal_err = res.goal_err;
    rec.max_transition = res.max_transition();
}

inline void check_model(const Denoiser& model, const FactorChain& chain, const NoiseSchedule& schedule,
                        std::size_t frames) {
    const auto& c = model.config();
    if (c.chunk_frames != frames || c.frame_dim != chain.d) {
        throw ConfigError("model expects " + std::to_string(c.chunk_frames) + "x" + std::to_string(c.frame_dim) +
                          " inputs, chain needs " + std::to_string(frames) + "x" + std::to_string(chain.d));
    }
    c.check_schedule(schedule, "sampler");
}

}  // namespace detail

/// Batched DDIM over all chunks with sync/async message passing on the
/// Tweedie estimates and diffusion-sphere guidance.
inline SampleTrace compose_guided(const EmaPair& pair, const FactorChain& chain, const NoiseSchedule& schedule,
                                  const SyncSystem& sync, const AsyncConfig& async_cfg, const GuidanceConfig& g,
                                  const MessageWeights& weights = {}) {
    chain.validate();
    async_cfg.validate();
    weights.validate();
    detail::check_model(pair.ema, chain, schedule, chain.F);
    detail::check_model(pair.latest, chain, schedule, chain.F);
    const std::size_t s = g.resolve(chain);
    const double sqrt_s = std::sqrt(static_cast<double>(s));

    SampleTrace trace;
    trace.sampler = "guided";
    Rng rng(g.seed);
    Tensor x = split_noise(chain, rng);

    for (const auto [t, prev] : schedule.strided(g.steps)) {
        StepRecord rec;
        rec.t = t;
        rec.prev = prev;
        rec.sigma = schedule.sigma(t, prev);
        rec.radius = sqrt_s * rec.sigma;

        ad::Tape tape;
        const ad::Var xv = tape.leaf(x);
        const ad::Var ema_x0 = pair.ema.forward(tape, xv, t);
        const Tensor latest_x0 = predict_x0(pair.latest, x, t);
        trace.nfe_chunk += 2;

        const ad::Var ls = sync_loss(sync, ema_x0);
        const ad::Var la = async_loss(async_cfg, ema_x0, tape.constant(latest_x0), chain);
        const ad::Var loss = combine_losses(ls, la, weights);
        rec.sync_loss = ls.value().item();
        rec.async_loss = la.value().item();
        const auto res = boundary_residuals(ema_x0.value(), chain);
        rec.start_err = res.start_err;
        rec.goal_err = res.goal_err;
        rec.max_transition = res.max_transition();

        const Tensor mu = ddim_mu(schedule, x, ema_x0.value(), t, prev);
        const Tensor grad = tape.backward(loss, {xv})[0];
        rec.grad_norm = detail::norm2(grad);

        const std::vector<double> eps = rng.normal_vector(s);
        Tensor d_m(x.shape());
        for (std::size_t k = 0; k < s; ++k) d_m[k] = rec.sigma * eps[k];  // d_sample
        if (rec.grad_norm >= 1e-12) {
            rec.guided = true;
            d_m = detail::dsg_mix(d_m, detail::dsg_target(grad, rec.radius), g.g_r);
        } else {
            ++trace.skipped_guidance;
        }
        x = detail::sphere_step(mu, d_m, rec.radius);
        rec.sphere_dev = detail::sphere_deviation(x, mu, rec.radius);
        rec.nfe = trace.nfe_chunk;
        detail::check_finite(x, "compose_guided", rec);
        trace.steps.push_back(rec);
    }
    trace.chunks = x;
    trace.plan = merge(x);
    return trace;
}

/// Per-chunk sampling from independent noise with no cross-chunk terms. Uses
/// the same spherical update as compose_guided at g_r = 0.
inline SampleTrace compose_independent(const EmaPair& pair, const FactorChain& chain, const NoiseSchedule& schedule,
                                       const GuidanceConfig& g) {
    chain.validate();
    detail::check_model(pair.ema, chain, schedule, chain.F);
    const std::size_t s = g.resolve(chain);
    const double sqrt_s = std::sqrt(static_cast<double>(s));
    const SyncSystem sync = build_sync_system(chain);
    const AsyncConfig async_cfg{};

    SampleTrace trace;
    trace.sampler = "independent";
    Rng rng(g.seed);
    Tensor x(chain.chunk_shape(), rng.normal_vector(s));

    for (const auto [t, prev] : schedule.strided(g.steps)) {
        StepRecord rec;
        rec.t = t;
        rec.prev = prev;
        rec.sigma = schedule.sigma(t, prev);
        rec.radius = sqrt_s * rec.sigma;

        const Tensor x0 = predict_x0(pair.ema, x, t);
        trace.nfe_chunk += 1;
        detail::diagnose(rec, sync, async_cfg, chain, x0, x0);

        const Tensor mu = ddim_mu(schedule, x, x0, t, prev);
        const std::vector<double> eps = rng.normal_vector(s);
        Tensor d_m(x.shape());
        for (std::size_t k = 0; k < s; ++k) d_m[k] = rec.sigma * eps[k];
        x = detail::sphere_step(mu, d_m, rec.radius);
        rec.sphere_dev = detail::sphere_deviation(x, mu, rec.radius);
        rec.nfe = trace.nfe_chunk;
        detail::check_finite(x, "compose_independent", rec);
        trace.steps.push_back(rec);
    }
    trace.chunks = x;
    trace.plan = merge(x);
    return trace;
}

struct CollageModels {
    const Denoiser* chunk = nullptr;
    const Denoiser* boundary = nullptr;  // single-frame marginal model
};

struct CollageOptions {
    /// Overwrite the first/last plan frame with the forward-noised start/goal
    /// after every step (inpainting-style conditioning). Off by default: the
    /// baseline has no mechanism of its own for the anchors.
    bool anchor_replace = false;
};

/// Bethe-style composition on the merged plan: the composed score is the sum
/// of the chunk scores minus one marginal score per shared frame. Scores are
/// affine in the x0 estimates, score = -(z - sqrt(a) x0) / (1 - a), so the
/// composed score corresponds exactly to the x0 estimate
///   x0_left + x0_right - x0_marginal   on shared frames,
///   x0_chunk                          elsewhere,
/// which then drives an ordinary DDIM step. The trace's chunks are the
/// per-factor Tweedie estimates of the final step, as in the other samplers.
inline SampleTrace compose_diffcollage(const CollageModels& models, const FactorChain& chain,
                                       const NoiseSchedule& schedule, const GuidanceConfig& g,
                                       const CollageOptions& opts = {}) {
    chain.validate();
    if (models.chunk == nullptr) throw ConfigError("diffcollage: missing chunk model");
    if (chain.n > 1 && models.boundary == nullptr) throw ConfigError("diffcollage: missing boundary model");
    detail::check_model(*models.chunk, chain, schedule, chain.F);
    if (chain.n > 1) detail::check_model(*models.boundary, chain, schedule, 1);
    g.resolve(chain);

    const std::size_t m = chain.m(), d = chain.d, n = chain.n, F = chain.F;
    const SyncSystem sync = build_sync_system(chain);
    const AsyncConfig async_cfg{};

    SampleTrace trace;
    trace.sampler = "diffcollage";
    Rng rng(g.seed);
    Tensor z(ad::Shape{m, d}, rng.normal_vector(m * d));
    Tensor last_x0;

    for (const auto [t, prev] : schedule.strided(g.steps)) {
        StepRecord rec;
        rec.t = t;
        rec.prev = prev;
        rec.sigma = schedule.sigma(t, prev);
        rec.radius = std::sqrt(static_cast<double>(m * d)) * rec.sigma;

        const Tensor chunks = split_plan(chain, z);
        Tensor x0c = predict_x0(*models.chunk, chunks, t);
        trace.nfe_chunk += 1;
        detail::diagnose(rec, sync, async_cfg, chain, x0c, x0c);

        Tensor x0_plan(ad::Shape{m, d});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t f = 0; f < F; ++f)
                for (std::size_t k = 0; k < d; ++k) x0_plan[chain.plan_frame(i, f) * d + k] += x0c[(i * F + f) * d + k];
        if (n > 1) {
            Tensor shared(ad::Shape{n - 1, 1, d});
            for (std::size_t j = 0; j + 1 < n; ++j)
                for (std::size_t k = 0; k < d; ++k) shared[j * d + k] = z[chain.plan_frame(j, F - 1) * d + k];
            const Tensor x0b = predict_x0(*models.boundary, shared, t);
            trace.nfe_boundary += 1;
            for (std::size_t j = 0; j + 1 < n; ++j)
                for (std::size_t k = 0; k < d; ++k) x0_plan[chain.plan_frame(j, F - 1) * d + k] -= x0b[j * d + k];
        }

        const Tensor mu = ddim_mu(schedule, z, x0_plan, t, prev);
        const std::vector<double> eps = rng.normal_vector(m * d);
        z = mu;
        for (std::size_t k = 0; k < z.size(); ++k) z[k] += rec.sigma * eps[k];
        rec.sphere_dev = 0.0;
        if (opts.anchor_replace) {
            const double a = schedule.alpha_bar(prev);
            const double ca = std::sqrt(a), cn = std::sqrt(1.0 - a);
            const std::size_t last = (m - 1) * d;
            for (std::size_t k = 0; k < d; ++k) {
                z[k] = ca * chain.start[k] + cn * rng.normal();
                z[last + k] = ca * chain.goal[k] + cn * rng.normal();
            }
        }
        rec.nfe = trace.nfe_chunk;
        detail::check_finite(z, "compose_diffcollage", rec);
        trace.steps.push_back(rec);
        last_x0 = std::move(x0c);
    }
    trace.plan = z;
    trace.chunks = std::move(last_x0);
    return trace;
}

}  // namespace chainmp
