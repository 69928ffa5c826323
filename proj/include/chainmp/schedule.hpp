#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "chainmp/errors.hpp"
#include "chainmp/gradtape.hpp"

namespace chainmp {

/// One reverse step of a (possibly strided) DDIM trajectory: from `t` to `prev`.
struct TimestepPair {
    int t = 0;
    int prev = 0;
};

/// Discrete variance-preserving noise schedule with DDIM coefficients.
///
/// alpha_bar(0) == 1, alpha_bar strictly decreasing. sigma(t, prev) follows the
/// DDIM parameterisation scaled by eta; eta == 0 is deterministic DDIM and
/// eta == 1 matches the DDPM posterior variance.
class NoiseSchedule {
public:
    NoiseSchedule() = default;

    static NoiseSchedule linear(int T, double beta_start, double beta_end, double eta_ddim) {
        if (T < 1) throw ConfigError("schedule: T must be >= 1, got " + std::to_string(T));
        if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
            throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
        }
        if (!(eta_ddim >= 0.0 && eta_ddim <= 1.0)) throw ConfigError("schedule: eta_ddim must lie in [0, 1]");
        NoiseSchedule s;
        s.T_ = T;
        s.beta_start_ = beta_start;
        s.beta_end_ = beta_end;
        s.eta_ = eta_ddim;
        s.alpha_bar_.assign(static_cast<std::size_t>(T) + 1, 1.0);
        for (int k = 1; k <= T; ++k) {
            const double beta = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (k - 1) / (T - 1);
            s.alpha_bar_[k] = s.alpha_bar_[k - 1] * (1.0 - beta);
        }
        s.sigma_.assign(static_cast<std::size_t>(T) + 1, 0.0);
        for (int k = 1; k <= T; ++k) s.sigma_[k] = s.sigma(k, k - 1);
        return s;
    }

    int T() const { return T_; }
    double eta() const { return eta_; }
    double beta_start() const { return beta_start_; }
    double beta_end() const { return beta_end_; }
    const std::vector<double>& alpha_bars() const { return alpha_bar_; }

    double alpha_bar(int t) const {
        check_t(t);
        return alpha_bar_[static_cast<std::size_t>(t)];
    }

    /// Per-step sigma of the full (unstrided) schedule.
    double sigma(int t) const {
        if (t < 1 || t > T_) throw ContractError("sigma: t out of range");
        return sigma_[static_cast<std::size_t>(t)];
    }

    /// Sigma for a jump t -> prev, recomputed for strided trajectories.
    double sigma(int t, int prev) const {
        check_step(t, prev);
        const double a_t = alpha_bar(t), a_p = alpha_bar(prev);
        const double v = (1.0 - a_p) / (1.0 - a_t) * (1.0 - a_t / a_p);
        return eta_ * std::sqrt(std::max(v, 0.0));
    }

    /// Evenly spaced descending timesteps that include T and 1.
    std::vector<TimestepPair> strided(int steps) const {
        if (steps < 1 || steps > T_) {
            throw ConfigError("sampling steps must lie in [1, T=" + std::to_string(T_) + "], got " +
                              std::to_string(steps));
        }
        std::vector<int> ts;
        if (steps == 1) {
            ts.push_back(T_);
        } else {
            for (int k = 0; k < steps; ++k) {
                ts.push_back(static_cast<int>(
                    std::lround(1.0 + static_cast<double>(k) * (T_ - 1) / static_cast<double>(steps - 1))));
            }
        }
        std::vector<TimestepPair> out;
        for (std::size_t i = ts.size(); i-- > 0;) out.push_back({ts[i], i == 0 ? 0 : ts[i - 1]});
        return out;
    }

    /// FNV-1a over the parameters that determine alpha_bar.
    std::uint64_t hash() const {
        char buf[128];
        std::snprintf(buf, sizeof buf, "linear %d %.17g %.17g", T_, beta_start_, beta_end_);
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const char* p = buf; *p; ++p) {
            h ^= static_cast<unsigned char>(*p);
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    void check_t(int t) const {
        if (t < 0 || t > T_) {
            throw ContractError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T_) + "]");
        }
    }

    void check_step(int t, int prev) const {
        check_t(t);
        check_t(prev);
        if (!(prev < t) || t < 1) throw ContractError("reverse step needs 0 <= prev < t <= T");
    }

private:
    int T_ = 0;
    double beta_start_ = 0.0;
    double beta_end_ = 0.0;
    double eta_ = 0.0;
    std::vector<double> alpha_bar_;
    std::vector<double> sigma_;
};

inline NoiseSchedule build_linear_schedule(int T, double beta_start, double beta_end, double eta_ddim) {
    return NoiseSchedule::linear(T, beta_start, beta_end, eta_ddim);
}

/// sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps
inline Tensor noise_forward(const NoiseSchedule& s, const Tensor& x0, int t, const Tensor& eps) {
    if (x0.shape() != eps.shape()) {
        throw DimensionError("noise_forward: x0 " + ad::shape_str(x0.shape()) + " vs eps " +
                             ad::shape_str(eps.shape()));
    }
    const double a = s.alpha_bar(t);
    const double ca = std::sqrt(a), cn = std::sqrt(1.0 - a);
    Tensor out(x0.shape());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = ca * x0[k] + cn * eps[k];
    return out;
}

/// Deterministic part of a DDIM step t -> prev given the clean estimate; the
/// caller adds the stochastic sigma term.
inline Tensor ddim_mu(const NoiseSchedule& s, const Tensor& x_t, const Tensor& x0_hat, int t, int prev) {
    if (x_t.shape() != x0_hat.shape()) {
        throw DimensionError("ddim_mu: x_t " + ad::shape_str(x_t.shape()) + " vs x0_hat " +
                             ad::shape_str(x0_hat.shape()));
    }
    s.check_step(t, prev);
    const double a_t = s.alpha_bar(t), a_p = s.alpha_bar(prev);
    const double sig = s.sigma(t, prev);
    double rest = 1.0 - a_p - sig * sig;
    if (rest < 0.0) {
        if (rest < -1e-14) throw NumericalError("ddim_mu: sigma^2 exceeds 1 - alpha_bar_prev");
        rest = 0.0;
    }
    const double c_x0 = std::sqrt(a_p);
    const double c_dir = std::sqrt(rest) / std::sqrt(1.0 - a_t);
    const double sa_t = std::sqrt(a_t);
    Tensor out(x_t.shape());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = c_x0 * x0_hat[k] + c_dir * (x_t[k] - sa_t * x0_hat[k]);
    return out;
}

inline Tensor ddim_mu(const NoiseSchedule& s, const Tensor& x_t, const Tensor& x0_hat, int t) {
    return ddim_mu(s, x_t, x0_hat, t, t - 1);
}

}  // namespace chainmp
