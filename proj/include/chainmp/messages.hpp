#pragma once

// Boundary-agreement objectives evaluated on Tweedie estimates.
//
// Synchronous: residual of the chain's Gaussian linear system
//   Sigma^-1 vec(x) = eta
// whose precision is block tridiagonal in the chunks.
//
// Asynchronous: anchor terms plus discounted one-sided boundary terms whose
// targets come from the latest model under stop-gradient.

#include <cmath>
#include <cstddef>
#include <vector>

#include "chainmp/chain.hpp"
#include "chainmp/errors.hpp"
#include "chainmp/gradtape.hpp"

namespace chainmp {

struct SyncSystem {
    FactorChain chain;
    std::vector<double> c;  // boundary variances c_0 .. c_n
    Tensor precision;       // [N x N], N = n * F * d
    Tensor eta;             // [N]
    bool squared = true;

    std::size_t size() const { return eta.size(); }

    /// Block-structured product Sigma^-1 x, touching only boundary frames.
    Tensor apply(const Tensor& x) const {
        if (x.size() != size()) throw DimensionError("SyncSystem::apply: size mismatch");
        const std::size_t n = chain.n, d = chain.d;
        Tensor y(ad::Shape{size()});
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t a = chain.first_row(i) * d;
            const std::size_t b = chain.last_row(i) * d;
            for (std::size_t k = 0; k < d; ++k) {
                y[a + k] += x[a + k] / c[i];
                if (i > 0) y[a + k] -= x[chain.last_row(i - 1) * d + k] / c[i];
                y[b + k] += x[b + k] / c[i + 1];
                if (i + 1 < n) y[b + k] -= x[chain.first_row(i + 1) * d + k] / c[i + 1];
            }
        }
        return y;
    }

    /// Sigma^-1 x - eta via the block path.
    Tensor residual(const Tensor& x) const {
        Tensor r = apply(x);
        for (std::size_t k = 0; k < r.size(); ++k) r[k] -= eta[k];
        return r;
    }
};

namespace detail {
inline void add_block(Tensor& P, std::size_t row0, std::size_t col0, const Tensor& blk, double w) {
    const std::size_t N = P.cols();
    for (std::size_t r = 0; r < blk.rows(); ++r)
        for (std::size_t c = 0; c < blk.cols(); ++c) P[(row0 + r) * N + col0 + c] += w * blk.at(r, c);
}

/// lhs^T rhs for dense matrices.
inline Tensor tmatmul(const Tensor& lhs, const Tensor& rhs) {
    Tensor out(ad::Shape{lhs.cols(), rhs.cols()});
    ad::detail::as_matrix(out).noalias() = ad::detail::as_matrix(lhs).transpose() * ad::detail::as_matrix(rhs);
    return out;
}
}  // namespace detail

/// Dense precision and information vector from the selector matrices.
inline SyncSystem build_sync_system(const FactorChain& chain, std::vector<double> c = {}) {
    chain.validate();
    if (c.empty()) c.assign(chain.n + 1, 1.0);
    if (c.size() != chain.n + 1) throw ConfigError("sync system needs n + 1 boundary variances");
    for (double ci : c)
        if (!(ci > 0.0)) throw ConfigError("boundary variances must be positive");

    const std::size_t n = chain.n, blk = chain.F * chain.d, N = n * blk;
    const Tensor A = chain.A().matrix();
    const Tensor B = chain.B().matrix();
    const Tensor AtA = detail::tmatmul(A, A), BtB = detail::tmatmul(B, B), BtA = detail::tmatmul(B, A),
                 AtB = detail::tmatmul(A, B);

    SyncSystem sys{chain, c, Tensor(ad::Shape{N, N}), Tensor(ad::Shape{N})};
    for (std::size_t i = 0; i < n; ++i) {
        detail::add_block(sys.precision, i * blk, i * blk, AtA, 1.0 / c[i]);
        detail::add_block(sys.precision, i * blk, i * blk, BtB, 1.0 / c[i + 1]);
        if (i + 1 < n) {
            detail::add_block(sys.precision, i * blk, (i + 1) * blk, BtA, -1.0 / c[i + 1]);
            detail::add_block(sys.precision, (i + 1) * blk, i * blk, AtB, -1.0 / c[i + 1]);
        }
    }
    for (std::size_t k = 0; k < chain.d; ++k) {
        sys.eta[chain.first_row(0) * chain.d + k] += chain.start[k] / c[0];
        sys.eta[chain.last_row(n - 1) * chain.d + k] += chain.goal[k] / c[n];
    }
    return sys;
}

/// ||Sigma^-1 vec(x) - eta||^2 (or the plain norm when !system.squared).
///
/// The nonzero entries of the residual are +-(incoming - outgoing) / c_j at
/// each boundary j, once for the anchors and twice for interior boundaries,
/// so the norm is taken over those differences. A consistent chain then gives
/// exactly zero for any variances.
inline ad::Var sync_loss(const SyncSystem& system, const ad::Var& x0_est) {
    if (x0_est.size() != system.size()) {
        throw DimensionError("sync_loss: estimate " + ad::shape_str(x0_est.shape()) + " does not match system of size " +
                             std::to_string(system.size()));
    }
    ad::Tape& tape = x0_est.tape();
    const FactorChain& ch = system.chain;
    const std::size_t n = ch.n, d = ch.d;
    const ad::Var rows = ad::reshape(x0_est, {n * ch.F, d});

    // boundary j: incoming frame minus outgoing frame; anchors enter as constants
    std::vector<std::size_t> in_idx(n + 1), out_idx(n + 1);
    Tensor out_mask(ad::Shape{n + 1, d});
    Tensor out_const(ad::Shape{n + 1, d});
    Tensor scale(ad::Shape{n + 1, d});
    for (std::size_t j = 0; j <= n; ++j) {
        in_idx[j] = j < n ? ch.first_row(j) : ch.last_row(n - 1);
        out_idx[j] = j == 0 ? 0 : ch.last_row(j - 1);
        const double w = std::sqrt(j == 0 || j == n ? 1.0 : 2.0) / system.c[j];
        for (std::size_t k = 0; k < d; ++k) {
            out_mask[j * d + k] = j == 0 || j == n ? 0.0 : 1.0;
            if (j == 0) out_const[k] = ch.start[k];
            if (j == n) out_const[j * d + k] = ch.goal[k];
            scale[j * d + k] = w;
        }
    }
    const ad::Var incoming = ad::select_rows(rows, in_idx);
    const ad::Var outgoing = ad::add(ad::mul(ad::select_rows(rows, out_idx), tape.constant(std::move(out_mask))),
                                     tape.constant(std::move(out_const)));
    const ad::Var r = ad::mul(ad::sub(incoming, outgoing), tape.constant(std::move(scale)));
    return system.squared ? ad::sum(ad::square(r)) : ad::l2norm(r);
}

struct AsyncConfig {
    double gamma = 0.6;
    bool squared = true;

    void validate() const {
        if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("async gamma must lie in (0, 1]");
    }
};

namespace detail {
/// Sum over rows of w_r * ||row_r|| (or ||row_r||^2).
inline ad::Var weighted_row_norms(const ad::Var& diff, const std::vector<double>& w, bool squared) {
    ad::Tape& tape = diff.tape();
    const std::size_t rows = diff.shape()[0], d = diff.shape()[1];
    if (squared) {
        Tensor wt(ad::Shape{rows, d});
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t k = 0; k < d; ++k) wt[r * d + k] = w[r];
        return ad::sum(ad::mul(tape.constant(std::move(wt)), ad::square(diff)));
    }
    ad::Var total = ad::scale(ad::l2norm(ad::select_rows(diff, {0})), w[0]);
    for (std::size_t r = 1; r < rows; ++r) total = ad::add(total, ad::scale(ad::l2norm(ad::select_rows(diff, {r})), w[r]));
    return total;
}

inline Tensor frame_row(const std::vector<double>& v) { return Tensor(ad::Shape{1, v.size()}, v); }
}  // namespace detail

/// Anchors plus forward (gamma^i) and backward (gamma^(n-i)) boundary terms.
/// Only ema_est receives gradient; latest_est enters under stop-gradient.
inline ad::Var async_loss(const AsyncConfig& cfg, const ad::Var& ema_est, const ad::Var& latest_est,
                          const FactorChain& chain) {
    cfg.validate();
    if (ema_est.shape() != latest_est.shape()) {
        throw DimensionError("async_loss: ema " + ad::shape_str(ema_est.shape()) + " vs latest " +
                             ad::shape_str(latest_est.shape()));
    }
    if (ema_est.size() != chain.element_count()) throw DimensionError("async_loss: estimate does not match chain");
    ad::Tape& tape = ema_est.tape();
    const std::size_t n = chain.n, d = chain.d, rows = n * chain.F;
    const ad::Var ema = ad::reshape(ema_est, {rows, d});
    const ad::Var latest = ad::stop_gradient(ad::reshape(latest_est, {rows, d}));

    const ad::Var start_diff = ad::sub(tape.constant(detail::frame_row(chain.start)), ad::select_rows(ema, {chain.first_row(0)}));
    const ad::Var goal_diff = ad::sub(ad::select_rows(ema, {chain.last_row(n - 1)}), tape.constant(detail::frame_row(chain.goal)));
    ad::Var total = ad::add(detail::weighted_row_norms(start_diff, {1.0}, cfg.squared),
                            detail::weighted_row_norms(goal_diff, {1.0}, cfg.squared));
    if (n == 1) return total;

    std::vector<std::size_t> out_rows, in_rows;
    std::vector<double> w_fwd, w_bwd;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        out_rows.push_back(chain.last_row(i));
        in_rows.push_back(chain.first_row(i + 1));
        const double k = static_cast<double>(i + 1);  // 1-based boundary index
        w_fwd.push_back(std::pow(cfg.gamma, k));
        w_bwd.push_back(std::pow(cfg.gamma, static_cast<double>(n) - k));
    }
    const ad::Var fwd = ad::sub(ad::select_rows(latest, out_rows), ad::select_rows(ema, in_rows));
    const ad::Var bwd = ad::sub(ad::select_rows(ema, out_rows), ad::select_rows(latest, in_rows));
    total = ad::add(total, detail::weighted_row_norms(fwd, w_fwd, cfg.squared));
    return ad::add(total, detail::weighted_row_norms(bwd, w_bwd, cfg.squared));
}

struct MessageWeights {
    double w_sync = 1.0;
    double w_async = 1.0;

    void validate() const {
        if (!(w_sync >= 0.0) || !(w_async >= 0.0)) throw ConfigError("message weights must be non-negative");
    }
};

/// Weighted sum of two already-recorded losses; zero-weight terms are dropped.
inline ad::Var combine_losses(const ad::Var& sync, const ad::Var& async, const MessageWeights& w) {
    w.validate();
    if (w.w_sync == 0.0 && w.w_async == 0.0) return ad::scale(sync, 0.0);
    if (w.w_sync == 0.0) return w.w_async == 1.0 ? async : ad::scale(async, w.w_async);
    if (w.w_async == 0.0) return w.w_sync == 1.0 ? sync : ad::scale(sync, w.w_sync);
    const ad::Var s = w.w_sync == 1.0 ? sync : ad::scale(sync, w.w_sync);
    const ad::Var a = w.w_async == 1.0 ? async : ad::scale(async, w.w_async);
    return ad::add(s, a);
}

inline ad::Var joint_loss(const SyncSystem& sync, const AsyncConfig& cfg, const ad::Var& ema_est,
                          const ad::Var& latest_est, const FactorChain& chain, const MessageWeights& w = {}) {
    return combine_losses(sync_loss(sync, ema_est), async_loss(cfg, ema_est, latest_est, chain), w);
}

}  // namespace chainmp
