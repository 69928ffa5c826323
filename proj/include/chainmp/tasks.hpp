#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "chainmp/chain.hpp"
#include "chainmp/errors.hpp"
#include "chainmp/gradtape.hpp"
#include "chainmp/rng.hpp"

namespace chainmp {

using Point = std::array<double, 2>;

// ---------------------------------------------------------------------------
// Circular arcs
// ---------------------------------------------------------------------------

struct ArcParams {
    double radius = 1.0;
    double arc_degrees = 120.0;
    double center_range = 2.0;  // centers uniform in [-range, range]^2
};

struct ArcDataset {
    ArcParams params;
    std::size_t F = 3;
    Tensor chunks;  // [count x F x 2]

    std::size_t count() const { return chunks.size() / (F * 2); }
    /// Chord spanned by one whole clip: 2 r sin(arc / 2).
    double chord() const { return 2.0 * params.radius * std::sin(params.arc_degrees * std::numbers::pi / 360.0); }
};

/// F equally spaced points on a circle, starting at `phase` (radians) and
/// sweeping `arc_degrees` counter-clockwise (sense = +1) or clockwise (-1).
inline std::vector<Point> arc_points(Point center, double radius, double phase, double sense, std::size_t F,
                                     double arc_degrees = 120.0) {
    std::vector<Point> pts(F);
    const double sweep = arc_degrees * std::numbers::pi / 180.0;
    for (std::size_t f = 0; f < F; ++f) {
        const double a = phase + sense * sweep * static_cast<double>(f) / static_cast<double>(F - 1);
        pts[f] = {center[0] + radius * std::cos(a), center[1] + radius * std::sin(a)};
    }
    return pts;
}

inline ArcDataset gen_arcs(const ArcParams& params, std::size_t F, std::size_t count, Rng& rng) {
    if (count < 1) throw ConfigError("gen_arcs: count must be >= 1");
    if (F < 2) throw ConfigError("gen_arcs: need at least two frames per chunk");
    ArcDataset ds{params, F, Tensor(ad::Shape{count, F, 2})};
    for (std::size_t i = 0; i < count; ++i) {
        const Point c{rng.uniform(-params.center_range, params.center_range),
                      rng.uniform(-params.center_range, params.center_range)};
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double sense = rng.uniform() < 0.5 ? 1.0 : -1.0;
        const auto pts = arc_points(c, params.radius, phase, sense, F, params.arc_degrees);
        for (std::size_t f = 0; f < F; ++f) {
            ds.chunks[(i * F + f) * 2] = pts[f][0];
            ds.chunks[(i * F + f) * 2 + 1] = pts[f][1];
        }
    }
    return ds;
}

inline ArcDataset gen_arcs(double radius, std::size_t F, std::size_t count, Rng& rng) {
    ArcParams p;
    p.radius = radius;
    return gen_arcs(p, F, count, rng);
}

// ---------------------------------------------------------------------------
// Segment stitching: N starts, N goals, one shared corridor
// ---------------------------------------------------------------------------

struct SegmentParams {
    double width = 1.0;       // corridor width; also the spacing of the start/goal columns
    double jitter = 0.05;     // uniform interior-frame jitter, in units of width
    std::size_t steps_per_leg = 2;
    std::size_t demos_per_pair = 400;
    std::size_t chunk_count = 20000;
    std::size_t F = 3;
};

/// Waypoint ids: starts 0..N-1, corridor entry N, corridor exit N+1, goals N+2..2N+1.
struct SegmentTaskSet {
    std::size_t N = 0;
    SegmentParams params;
    std::vector<Point> starts;
    std::vector<Point> goals;
    Point entry{};
    Point exit{};
    std::vector<Tensor> demos;           // each [frames x 2]
    std::vector<std::size_t> demo_pair;  // index of the IND pair the demo realises
    std::vector<std::vector<std::size_t>> demo_waypoints;
    Tensor chunks;                       // [count x F x 2]
    std::vector<std::size_t> chunk_demo;
    std::vector<std::size_t> chunk_offset;
    std::vector<std::pair<std::size_t, std::size_t>> ind;
    std::vector<std::pair<std::size_t, std::size_t>> ood;

    std::size_t start_id(std::size_t i) const { return i; }
    std::size_t entry_id() const { return N; }
    std::size_t exit_id() const { return N + 1; }
    std::size_t goal_id(std::size_t j) const { return N + 2 + j; }
    std::size_t waypoint_count() const { return 2 * N + 2; }

    std::size_t route_frames() const { return 3 * params.steps_per_leg + 1; }

    /// Chain whose chunks exactly tile a start -> goal route.
    FactorChain chain_for(std::size_t i, std::size_t j) const {
        const std::size_t steps = 3 * params.steps_per_leg;
        if (steps % (params.F - 1) != 0) throw ConfigError("route length is not a multiple of F - 1");
        return FactorChain(steps / (params.F - 1), params.F, 2, {starts[i][0], starts[i][1]},
                           {goals[j][0], goals[j][1]});
    }

    /// Adjacency over waypoints induced by the demonstrations.
    std::vector<std::vector<std::size_t>> corridor_graph() const {
        std::vector<std::vector<std::size_t>> adj(waypoint_count());
        for (const auto& wp : demo_waypoints)
            for (std::size_t k = 0; k + 1 < wp.size(); ++k) {
                auto& out = adj[wp[k]];
                if (std::find(out.begin(), out.end(), wp[k + 1]) == out.end()) out.push_back(wp[k + 1]);
            }
        return adj;
    }

    bool reachable(std::size_t from, std::size_t to) const {
        const auto adj = corridor_graph();
        std::vector<bool> seen(adj.size(), false);
        std::queue<std::size_t> q;
        q.push(from);
        seen[from] = true;
        while (!q.empty()) {
            const auto u = q.front();
            q.pop();
            if (u == to) return true;
            for (auto v : adj[u])
                if (!seen[v]) {
                    seen[v] = true;
                    q.push(v);
                }
        }
        return false;
    }
};

namespace detail {
inline Point lerp(Point a, Point b, double s) { return {a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])}; }
}  // namespace detail

inline SegmentTaskSet gen_segments(std::size_t N, Rng& rng, const SegmentParams& params = {}) {
    if (N < 2) throw ConfigError("gen_segments: N must be >= 2");
    if (params.F < 2 || params.steps_per_leg < 1) throw ConfigError("gen_segments: bad chunk geometry");
    SegmentTaskSet ts;
    ts.N = N;
    ts.params = params;
    const double w = params.width;
    for (std::size_t i = 0; i < N; ++i) {
        const double y = (static_cast<double>(i) - 0.5 * static_cast<double>(N - 1)) * w;
        ts.starts.push_back({0.0, y});
        ts.goals.push_back({3.0 * w, y});
    }
    ts.entry = {w, 0.0};
    ts.exit = {2.0 * w, 0.0};
    for (std::size_t i = 0; i < N; ++i) {
        ts.ind.emplace_back(i, i);
        for (std::size_t j = 0; j < N; ++j)
            if (i != j) ts.ood.emplace_back(i, j);
    }

    const std::size_t L = params.steps_per_leg;
    const std::size_t frames = ts.route_frames();
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t r = 0; r < params.demos_per_pair; ++r) {
            const Point legs[4] = {ts.starts[i], ts.entry, ts.exit, ts.goals[i]};
            Tensor demo(ad::Shape{frames, 2});
            for (std::size_t leg = 0; leg < 3; ++leg) {
                for (std::size_t k = 0; k < L; ++k) {
                    const std::size_t f = leg * L + k;
                    Point p = detail::lerp(legs[leg], legs[leg + 1], static_cast<double>(k) / static_cast<double>(L));
                    if (f != 0) {
                        p[0] += rng.uniform(-params.jitter, params.jitter) * w;
                        p[1] += rng.uniform(-params.jitter, params.jitter) * w;
                    }
                    demo[f * 2] = p[0];
                    demo[f * 2 + 1] = p[1];
                }
            }
            demo[(frames - 1) * 2] = ts.goals[i][0];
            demo[(frames - 1) * 2 + 1] = ts.goals[i][1];
            ts.demos.push_back(std::move(demo));
            ts.demo_pair.push_back(i);
            ts.demo_waypoints.push_back({ts.start_id(i), ts.entry_id(), ts.exit_id(), ts.goal_id(i)});
        }
    }

    const std::size_t F = params.F;
    if (F > frames) throw ConfigError("gen_segments: chunk longer than a demonstration");
    ts.chunks = Tensor(ad::Shape{params.chunk_count, F, 2});
    for (std::size_t c = 0; c < params.chunk_count; ++c) {
        const std::size_t demo = rng.below(ts.demos.size());
        const std::size_t off = rng.below(frames - F + 1);
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t k = 0; k < 2; ++k) ts.chunks[(c * F + f) * 2 + k] = ts.demos[demo][(off + f) * 2 + k];
        ts.chunk_demo.push_back(demo);
        ts.chunk_offset.push_back(off);
    }
    return ts;
}

// ---------------------------------------------------------------------------
// Plan evaluation
// ---------------------------------------------------------------------------

struct Thresholds {
    double start = 0.0;
    double goal = 0.0;
    double boundary = 0.0;

    static Thresholds uniform(double tau) { return {tau, tau, tau}; }
    /// 5% of the task's characteristic length.
    static Thresholds relative(double characteristic_length) { return uniform(0.05 * characteristic_length); }
};

struct PlanMetrics {
    bool success = false;
    double start_err = 0.0;
    double goal_err = 0.0;
    double max_transition_err = 0.0;
    double smoothness = 0.0;

    double max_residual() const { return std::max({start_err, goal_err, max_transition_err}); }
};

/// Mean over interior frames of ||x[k+1] - 2 x[k] + x[k-1]||^2.
inline double smoothness(const Tensor& plan, std::size_t d) {
    const std::size_t m = plan.size() / d;
    if (m < 3) return 0.0;
    double total = 0.0;
    for (std::size_t k = 1; k + 1 < m; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dd = plan[(k + 1) * d + j] - 2.0 * plan[k * d + j] + plan[(k - 1) * d + j];
            s += dd * dd;
        }
        total += s;
    }
    return total / static_cast<double>(m - 2);
}

/// Anchoring errors and smoothness from the merged plan; transition errors
/// come from the per-chunk estimates when given (a merged plan alone has none).
inline PlanMetrics evaluate_plan(const Tensor& plan, const FactorChain& chain, const Thresholds& th,
                                 std::span<const double> transition_errs = {}) {
    if (plan.size() != chain.m() * chain.d) {
        throw DimensionError("evaluate_plan: plan " + ad::shape_str(plan.shape()) + " does not match chain");
    }
    if (!plan.all_finite()) throw NumericalError("evaluate_plan: plan is not finite");
    const std::size_t d = chain.d, m = chain.m();
    PlanMetrics pm;
    pm.start_err = detail::frame_distance(plan.data().data(), chain.start.data(), d);
    pm.goal_err = detail::frame_distance(plan.data().data() + (m - 1) * d, chain.goal.data(), d);
    for (double e : transition_errs) pm.max_transition_err = std::max(pm.max_transition_err, e);
    pm.smoothness = smoothness(plan, d);
    pm.success = pm.start_err <= th.start && pm.goal_err <= th.goal && pm.max_transition_err <= th.boundary;
    return pm;
}

/// Metrics of a sampled chunk set: transition errors measured on the chunks
/// before merging.
inline PlanMetrics evaluate_chunks(const Tensor& chunks, const FactorChain& chain, const Thresholds& th) {
    const auto res = boundary_residuals(chunks, chain);
    return evaluate_plan(merge(chunks.reshaped(chain.chunk_shape())), chain, th, res.transition_errs);
}

}  // namespace chainmp
