#pragma once

// Exact check of the noisy-Bethe gap identity on a three-variable discrete
// chain u1 - u2 - u3 with per-variable noise channels:
//
//   p(obs) - p_hat(obs) = Z * Cov_{u2 ~ q}[a/c, b/c]
//
// where a, b are the left/right factor messages into u2, c the boundary
// evidence, Z = sum c and q = c / Z. Everything is a finite sum.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "chainmp/errors.hpp"
#include "chainmp/rng.hpp"

namespace chainmp::bethe {

using Matrix = std::vector<std::vector<double>>;

/// Row-stochastic table p(to | from).
inline void check_stochastic(const Matrix& m, std::size_t K, const char* what) {
    if (m.size() != K) throw DimensionError(std::string(what) + ": expected " + std::to_string(K) + " rows");
    for (const auto& row : m) {
        if (row.size() != K) throw DimensionError(std::string(what) + ": ragged table");
        double s = 0.0;
        for (double v : row) {
            if (v < 0.0) throw ConfigError(std::string(what) + ": negative probability");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-12) throw ConfigError(std::string(what) + ": row does not sum to 1");
    }
}

struct DiscreteChain {
    std::size_t K = 2;
    std::vector<double> p1;  // p(u1)
    Matrix T12;              // p(u2 | u1)
    Matrix T23;              // p(u3 | u2)

    void validate() const {
        if (K < 2 || K > 6) throw ConfigError("alphabet size K must lie in [2, 6]");
        if (p1.size() != K) throw DimensionError("p1 must have K entries");
        double s = 0.0;
        for (double v : p1) {
            if (v < 0.0) throw ConfigError("p1: negative probability");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-12) throw ConfigError("p1 does not sum to 1");
        check_stochastic(T12, K, "T12");
        check_stochastic(T23, K, "T23");
    }

    std::vector<double> p2() const {
        std::vector<double> out(K, 0.0);
        for (std::size_t i = 0; i < K; ++i)
            for (std::size_t j = 0; j < K; ++j) out[j] += p1[i] * T12[i][j];
        return out;
    }
};

/// Per-variable observation table p(u_t | u_0).
struct NoiseChannel {
    Matrix table;

    /// Keep with probability 1 - lambda, otherwise move uniformly to one of
    /// the other K - 1 symbols.
    static NoiseChannel flip(std::size_t K, double lambda) {
        if (lambda < 0.0 || lambda > static_cast<double>(K - 1) / static_cast<double>(K) + 1e-15) {
            throw ConfigError("flip strength must lie in [0, (K-1)/K]");
        }
        NoiseChannel c{Matrix(K, std::vector<double>(K, lambda / static_cast<double>(K - 1)))};
        for (std::size_t i = 0; i < K; ++i) c.table[i][i] = 1.0 - lambda;
        return c;
    }

    static NoiseChannel identity(std::size_t K) { return flip(K, 0.0); }

    double operator()(std::size_t clean, std::size_t noisy) const { return table[clean][noisy]; }
};

/// Channels for u1, u2, u3.
using Channels = std::array<NoiseChannel, 3>;

using Observation = std::array<std::size_t, 3>;

struct DirectGap {
    double p_true = 0.0;
    double p_hat = 0.0;
    double delta = 0.0;
};

struct Messages {
    std::vector<double> a, b, c;
};

inline Messages boundary_messages(const DiscreteChain& ch, const Channels& noise, const Observation& o) {
    const std::size_t K = ch.K;
    const auto p2 = ch.p2();
    Messages msg{std::vector<double>(K, 0.0), std::vector<double>(K, 0.0), std::vector<double>(K, 0.0)};
    for (std::size_t u2 = 0; u2 < K; ++u2) {
        for (std::size_t u1 = 0; u1 < K; ++u1)
            msg.a[u2] += ch.p1[u1] * ch.T12[u1][u2] * noise[0](u1, o[0]) * noise[1](u2, o[1]);
        for (std::size_t u3 = 0; u3 < K; ++u3)
            msg.b[u2] += p2[u2] * ch.T23[u2][u3] * noise[1](u2, o[1]) * noise[2](u3, o[2]);
        msg.c[u2] = p2[u2] * noise[1](u2, o[1]);
    }
    return msg;
}

/// True noisy probability by full enumeration and the Bethe-style estimator.
inline DirectGap gap_direct(const DiscreteChain& ch, const Channels& noise, const Observation& o) {
    const std::size_t K = ch.K;
    for (auto v : o)
        if (v >= K) throw ContractError("observation outside the alphabet");
    DirectGap g;
    for (std::size_t u1 = 0; u1 < K; ++u1)
        for (std::size_t u2 = 0; u2 < K; ++u2)
            for (std::size_t u3 = 0; u3 < K; ++u3)
                g.p_true += ch.p1[u1] * ch.T12[u1][u2] * ch.T23[u2][u3] * noise[0](u1, o[0]) * noise[1](u2, o[1]) *
                            noise[2](u3, o[2]);
    const Messages msg = boundary_messages(ch, noise, o);
    double sa = 0.0, sb = 0.0, sc = 0.0;
    for (std::size_t u2 = 0; u2 < K; ++u2) {
        sa += msg.a[u2];
        sb += msg.b[u2];
        sc += msg.c[u2];
    }
    g.p_hat = sc > 0.0 ? sa * sb / sc : 0.0;
    g.delta = g.p_true - g.p_hat;
    return g;
}

struct CovarianceGap {
    bool defined = true;  // false when some c(u2) == 0
    double Z = 0.0;
    double cov = 0.0;
    double delta_formula = 0.0;
};

inline CovarianceGap gap_covariance(const DiscreteChain& ch, const Channels& noise, const Observation& o) {
    const Messages msg = boundary_messages(ch, noise, o);
    CovarianceGap g;
    for (double c : msg.c) {
        if (!(c > 0.0)) {
            g.defined = false;
            return g;
        }
        g.Z += c;
    }
    double e_ab = 0.0, e_a = 0.0, e_b = 0.0;
    for (std::size_t u2 = 0; u2 < ch.K; ++u2) {
        const double q = msg.c[u2] / g.Z;
        const double ra = msg.a[u2] / msg.c[u2];
        const double rb = msg.b[u2] / msg.c[u2];
        e_ab += q * ra * rb;
        e_a += q * ra;
        e_b += q * rb;
    }
    g.cov = e_ab - e_a * e_b;
    g.delta_formula = g.Z * g.cov;
    return g;
}

namespace detail {
inline std::vector<double> random_simplex(std::size_t K, Rng& rng) {
    std::vector<double> v(K);
    double s = 0.0;
    for (auto& x : v) {
        x = 0.05 + rng.uniform();
        s += x;
    }
    for (auto& x : v) x /= s;
    return v;
}
}  // namespace detail

inline DiscreteChain random_chain(std::size_t K, Rng& rng) {
    DiscreteChain ch{K, detail::random_simplex(K, rng), {}, {}};
    for (std::size_t i = 0; i < K; ++i) ch.T12.push_back(detail::random_simplex(K, rng));
    for (std::size_t i = 0; i < K; ++i) ch.T23.push_back(detail::random_simplex(K, rng));
    return ch;
}

/// Transitions that keep the current symbol with probability `stay`.
inline DiscreteChain sticky_chain(std::size_t K, double stay) {
    DiscreteChain ch{K, std::vector<double>(K, 1.0 / static_cast<double>(K)), {}, {}};
    const double move = (1.0 - stay) / static_cast<double>(K - 1);
    ch.T12.assign(K, std::vector<double>(K, move));
    for (std::size_t i = 0; i < K; ++i) ch.T12[i][i] = stay;
    ch.T23 = ch.T12;
    return ch;
}

/// Every transition row uniform: u2 independent of its neighbours.
inline DiscreteChain uniform_chain(std::size_t K) { return sticky_chain(K, 1.0 / static_cast<double>(K)); }

inline NoiseChannel random_channel(std::size_t K, Rng& rng) {
    NoiseChannel c;
    for (std::size_t i = 0; i < K; ++i) c.table.push_back(detail::random_simplex(K, rng));
    return c;
}

inline Channels same_channel(const NoiseChannel& c) { return {c, c, c}; }

inline std::vector<Observation> all_observations(std::size_t K) {
    std::vector<Observation> out;
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < K; ++j)
            for (std::size_t k = 0; k < K; ++k) out.push_back({i, j, k});
    return out;
}

struct SweepRow {
    double strength = 0.0;
    double max_abs_delta = 0.0;
    double max_identity_err = 0.0;  // max |delta_direct - delta_formula| over defined obs
    std::size_t undefined_obs = 0;
};

/// Maximum |delta| over all observations for each flip strength.
inline std::vector<SweepRow> gap_sweep(const DiscreteChain& ch, const std::vector<double>& strengths) {
    ch.validate();
    std::vector<SweepRow> rows;
    for (double s : strengths) {
        const Channels noise = same_channel(NoiseChannel::flip(ch.K, s));
        SweepRow row{s};
        for (const auto& o : all_observations(ch.K)) {
            const auto direct = gap_direct(ch, noise, o);
            row.max_abs_delta = std::max(row.max_abs_delta, std::abs(direct.delta));
            const auto cov = gap_covariance(ch, noise, o);
            if (cov.defined) {
                row.max_identity_err = std::max(row.max_identity_err, std::abs(direct.delta - cov.delta_formula));
            } else {
                ++row.undefined_obs;
            }
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace chainmp::bethe
