#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "chainmp/errors.hpp"
#include "chainmp/gradtape.hpp"
#include "chainmp/rng.hpp"

namespace chainmp {

/// Linear extraction of the first (A) or last (B) frame of a chunk.
struct Selector {
    enum class Which { first, last };

    Which which = Which::first;
    std::size_t frames = 0;
    std::size_t dim = 0;

    std::size_t frame() const { return which == Which::first ? 0 : frames - 1; }

    /// Dense [d x F*d] matrix form.
    Tensor matrix() const {
        Tensor m(ad::Shape{dim, frames * dim});
        for (std::size_t k = 0; k < dim; ++k) m.at(k, frame() * dim + k) = 1.0;
        return m;
    }
};

/// Chain of n chunks of F frames; consecutive chunks share one frame.
struct FactorChain {
    std::size_t n = 1;
    std::size_t F = 3;
    std::size_t d = 2;
    std::vector<double> start;
    std::vector<double> goal;

    FactorChain() = default;
    FactorChain(std::size_t factors, std::size_t frames, std::size_t dim, std::vector<double> s, std::vector<double> g)
        : n(factors), F(frames), d(dim), start(std::move(s)), goal(std::move(g)) {
        validate();
    }

    void validate() const {
        if (n < 1) throw ConfigError("chain needs at least one factor");
        if (F < 2) throw ConfigError("chunks need at least two frames");
        if (d < 1) throw ConfigError("frame dimension must be positive");
        if (start.size() != d || goal.size() != d) throw DimensionError("start/goal must have frame dimension d");
    }

    /// Total frames in the merged plan.
    std::size_t m() const { return n * (F - 1) + 1; }
    std::size_t element_count() const { return n * F * d; }
    ad::Shape chunk_shape() const { return {n, F, d}; }

    Selector A() const { return {Selector::Which::first, F, d}; }
    Selector B() const { return {Selector::Which::last, F, d}; }

    /// Row of the first / last frame of chunk i in the [n*F x d] view.
    std::size_t first_row(std::size_t i) const { return i * F; }
    std::size_t last_row(std::size_t i) const { return i * F + F - 1; }

    /// Plan frame index of frame f in chunk i.
    std::size_t plan_frame(std::size_t i, std::size_t f) const { return i * (F - 1) + f; }
};

/// Gaussian plan of m frames copied into overlapping chunks, so shared frames
/// are bit-identical.
inline Tensor split_noise(const FactorChain& chain, Rng& rng) {
    const std::size_t m = chain.m(), d = chain.d;
    std::vector<double> plan = rng.normal_vector(m * d);
    Tensor chunks(chain.chunk_shape());
    for (std::size_t i = 0; i < chain.n; ++i)
        for (std::size_t f = 0; f < chain.F; ++f)
            for (std::size_t k = 0; k < d; ++k) chunks[(i * chain.F + f) * d + k] = plan[chain.plan_frame(i, f) * d + k];
    return chunks;
}

/// Copies interior frames and averages the two estimates of every shared frame.
inline Tensor merge(const Tensor& chunks) {
    if (chunks.rank() != 3) throw DimensionError("merge: expected [n x F x d] chunks, got " + ad::shape_str(chunks.shape()));
    const std::size_t n = chunks.shape()[0], F = chunks.shape()[1], d = chunks.shape()[2];
    if (F < 2) throw DimensionError("merge: chunks need at least two frames");
    const std::size_t m = n * (F - 1) + 1;
    Tensor plan(ad::Shape{m, d});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < F; ++f) {
            const std::size_t p = i * (F - 1) + f;
            const bool shared_left = i > 0 && f == 0;
            for (std::size_t k = 0; k < d; ++k) {
                const double v = chunks[(i * F + f) * d + k];
                if (shared_left) {
                    plan[p * d + k] = 0.5 * (plan[p * d + k] + v);
                } else {
                    plan[p * d + k] = v;
                }
            }
        }
    }
    return plan;
}

/// Replicates a merged plan into overlapping chunks.
inline Tensor split_plan(const FactorChain& chain, const Tensor& plan) {
    if (plan.size() != chain.m() * chain.d) throw DimensionError("split_plan: plan size does not match chain");
    Tensor chunks(chain.chunk_shape());
    for (std::size_t i = 0; i < chain.n; ++i)
        for (std::size_t f = 0; f < chain.F; ++f)
            for (std::size_t k = 0; k < chain.d; ++k)
                chunks[(i * chain.F + f) * chain.d + k] = plan[chain.plan_frame(i, f) * chain.d + k];
    return chunks;
}

struct BoundaryResiduals {
    double start_err = 0.0;
    double goal_err = 0.0;
    std::vector<double> transition_errs;

    double max_transition() const {
        double m = 0.0;
        for (double e : transition_errs) m = std::max(m, e);
        return m;
    }
    /// Largest of all anchoring and transition errors.
    double max_residual() const { return std::max({start_err, goal_err, max_transition()}); }
};

namespace detail {
inline double frame_distance(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
}
}  // namespace detail

inline BoundaryResiduals boundary_residuals(const Tensor& chunks, const FactorChain& chain) {
    if (chunks.size() != chain.element_count()) {
        throw DimensionError("boundary_residuals: chunks " + ad::shape_str(chunks.shape()) + " do not match chain");
    }
    const double* x = chunks.data().data();
    const std::size_t d = chain.d;
    BoundaryResiduals r;
    r.start_err = detail::frame_distance(x + chain.first_row(0) * d, chain.start.data(), d);
    r.goal_err = detail::frame_distance(x + chain.last_row(chain.n - 1) * d, chain.goal.data(), d);
    for (std::size_t i = 0; i + 1 < chain.n; ++i) {
        r.transition_errs.push_back(detail::frame_distance(x + chain.last_row(i) * d, x + chain.first_row(i + 1) * d, d));
    }
    return r;
}

}  // namespace chainmp
