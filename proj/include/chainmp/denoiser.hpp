#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <utility>
#include <string>
#include <vector>

#include "chainmp/errors.hpp"
#include "chainmp/gradtape.hpp"
#include "chainmp/rng.hpp"
#include "chainmp/schedule.hpp"

namespace chainmp {

enum class Activation { silu, tanh };

inline const char* to_string(Activation a) { return a == Activation::silu ? "silu" : "tanh"; }

inline Activation parse_activation(const std::string& s) {
    if (s == "silu") return Activation::silu;
    if (s == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + s + "' (expected silu or tanh)");
}

/// direct: the network output is the x0 estimate.
/// preconditioned: x0 = c_skip(t) x_t + c_out(t) net(c_in(t) x_t, t), with the
/// coefficients of a unit-free variance-preserving input scaling for data of
/// standard deviation sigma_data (requires the schedule's beta range).
enum class Parameterization { direct, preconditioned };

inline const char* to_string(Parameterization p) { return p == Parameterization::direct ? "direct" : "preconditioned"; }

inline Parameterization parse_parameterization(const std::string& s) {
    if (s == "direct") return Parameterization::direct;
    if (s == "preconditioned") return Parameterization::preconditioned;
    throw ConfigError("unknown parameterization '" + s + "' (expected direct or preconditioned)");
}

struct DenoiserConfig {
    std::size_t chunk_frames = 3;
    std::size_t frame_dim = 2;
    std::size_t time_dim = 16;
    std::size_t hidden = 256;
    std::size_t depth = 3;  // hidden layers
    int timesteps = 500;    // T of the schedule the model is trained on
    Activation activation = Activation::silu;
    Parameterization parameterization = Parameterization::direct;
    double sigma_data = 1.0;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    std::size_t chunk_size() const { return chunk_frames * frame_dim; }
    std::size_t input_dim() const { return chunk_size() + time_dim; }

    /// Throws unless the model can be driven by `s`.
    void check_schedule(const NoiseSchedule& s, const char* who) const {
        if (timesteps != s.T()) {
            throw ConfigError(std::string(who) + ": model was trained for T=" + std::to_string(timesteps) +
                              ", schedule has T=" + std::to_string(s.T()));
        }
        if (parameterization == Parameterization::preconditioned &&
            (beta_start != s.beta_start() || beta_end != s.beta_end())) {
            throw ConfigError(std::string(who) + ": preconditioned model and schedule disagree on the beta range");
        }
    }
};

/// Sinusoidal features of t / T, interleaved as
/// [sin(w_0 t/T), cos(w_0 t/T), sin(w_1 t/T), ...] with w_k = pi * 2^k.
inline Tensor time_embed(int t, int T, std::size_t dim) {
    if (dim % 2 != 0) throw ConfigError("time embedding dimension must be even, got " + std::to_string(dim));
    if (T < 1) throw ContractError("time_embed: T must be positive");
    Tensor e(ad::Shape{dim});
    const double u = static_cast<double>(t) / static_cast<double>(T);
    for (std::size_t k = 0; k < dim / 2; ++k) {
        const double w = std::numbers::pi * std::ldexp(1.0, static_cast<int>(k));
        e[2 * k] = std::sin(w * u);
        e[2 * k + 1] = std::cos(w * u);
    }
    return e;
}

/// Affine map y = x W + b with W stored [in x out].
struct Linear {
    Tensor weight;
    Tensor bias;
};

/// Feed-forward x0-predictor over a flattened chunk plus a time embedding.
class Denoiser {
public:
    Denoiser() = default;

    /// LeCun-normal hidden weights, zero biases, zero output layer.
    Denoiser(DenoiserConfig cfg, Rng& rng) : cfg_(cfg) {
        if (cfg_.chunk_frames == 0 || cfg_.frame_dim == 0 || cfg_.hidden == 0) {
            throw ConfigError("denoiser: chunk_frames, frame_dim and hidden must be positive");
        }
        init_coefficients();
        std::size_t in = cfg_.input_dim();
        for (std::size_t l = 0; l <= cfg_.depth; ++l) {
            const bool last = l == cfg_.depth;
            const std::size_t out = last ? cfg_.chunk_size() : cfg_.hidden;
            Linear layer{Tensor(ad::Shape{in, out}), Tensor(ad::Shape{out})};
            if (!last) {
                const double scale = 1.0 / std::sqrt(static_cast<double>(in));
                for (auto& w : layer.weight.data()) w = scale * rng.normal();
            }
            layers_.push_back(std::move(layer));
            in = out;
        }
    }

    Denoiser(DenoiserConfig cfg, std::vector<Linear> layers) : cfg_(cfg), layers_(std::move(layers)) {
        init_coefficients();
        std::size_t in = cfg_.input_dim();
        if (layers_.size() != cfg_.depth + 1) throw DimensionError("denoiser: layer count does not match depth");
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const std::size_t out = l == cfg_.depth ? cfg_.chunk_size() : cfg_.hidden;
            if (layers_[l].weight.shape() != ad::Shape{in, out} || layers_[l].bias.shape() != ad::Shape{out}) {
                throw DimensionError("denoiser: layer " + std::to_string(l) + " has shape " +
                                     ad::shape_str(layers_[l].weight.shape()) + ", expected " +
                                     ad::shape_str(ad::Shape{in, out}));
            }
            in = out;
        }
    }

    const DenoiserConfig& config() const { return cfg_; }
    const std::vector<Linear>& layers() const { return layers_; }
    std::vector<Linear>& layers() { return layers_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
        return n;
    }

    /// Weights and biases in layer order: w0, b0, w1, b1, ...
    std::vector<const Tensor*> parameters() const {
        std::vector<const Tensor*> out;
        for (const auto& l : layers_) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        }
        return out;
    }

    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> out;
        for (auto& l : layers_) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        }
        return out;
    }

    /// Records the parameters on a tape as leaves (trainable) or constants.
    std::vector<ad::Var> bind(ad::Tape& tape, bool trainable) const {
        std::vector<ad::Var> out;
        for (const Tensor* p : parameters()) out.push_back(trainable ? tape.leaf(*p) : tape.constant(*p));
        return out;
    }

    /// x holds a batch of chunks in any shape with B * F * d entries; `t` has
    /// one entry per batch element or a single shared entry. The result has
    /// the shape of x.
    ad::Var forward(ad::Tape& tape, std::span<const ad::Var> params, const ad::Var& x, std::span<const int> t) const {
        const std::size_t chunk = cfg_.chunk_size();
        if (x.size() == 0 || x.size() % chunk != 0) {
            throw DimensionError("denoiser input " + ad::shape_str(x.shape()) + " is not a batch of " +
                                 std::to_string(cfg_.chunk_frames) + "x" + std::to_string(cfg_.frame_dim) +
                                 " chunks");
        }
        const std::size_t batch = x.size() / chunk;
        if (t.size() != 1 && t.size() != batch) throw DimensionError("denoiser: timestep count != batch size");
        if (params.size() != 2 * layers_.size()) throw DimensionError("denoiser: wrong parameter count");

        Tensor emb(ad::Shape{batch, cfg_.time_dim});
        for (std::size_t b = 0; b < batch; ++b) {
            const int tb = t.size() == 1 ? t[0] : t[b];
            if (tb < 0 || tb > cfg_.timesteps) throw ContractError("denoiser: timestep outside [0, T]");
            const Tensor e = time_embed(tb, cfg_.timesteps, cfg_.time_dim);
            std::copy(e.data().begin(), e.data().end(), emb.data().begin() + static_cast<std::ptrdiff_t>(b * cfg_.time_dim));
        }
        const ad::Var xr = ad::reshape(x, {batch, chunk});
        const bool pre = cfg_.parameterization == Parameterization::preconditioned;
        Tensor c_in, c_skip, c_out;
        if (pre) {
            c_in = c_skip = c_out = Tensor(ad::Shape{batch, chunk});
            for (std::size_t b = 0; b < batch; ++b) {
                const auto& c = coeff_[static_cast<std::size_t>(t.size() == 1 ? t[0] : t[b])];
                for (std::size_t k = 0; k < chunk; ++k) {
                    c_in[b * chunk + k] = c[0];
                    c_skip[b * chunk + k] = c[1];
                    c_out[b * chunk + k] = c[2];
                }
            }
        }
        ad::Var h = ad::concat_cols(pre ? ad::mul(tape.constant(c_in), xr) : xr, tape.constant(std::move(emb)));
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            h = ad::add_bias(ad::matmul(h, params[2 * l]), params[2 * l + 1]);
            if (l + 1 < layers_.size()) h = cfg_.activation == Activation::silu ? ad::silu(h) : ad::tanh(h);
        }
        if (pre) h = ad::add(ad::mul(tape.constant(std::move(c_skip)), xr), ad::mul(tape.constant(std::move(c_out)), h));
        return ad::reshape(h, x.shape());
    }

    ad::Var forward(ad::Tape& tape, const ad::Var& x, int t) const {
        const auto params = bind(tape, false);
        const int ts[1] = {t};
        return forward(tape, params, x, ts);
    }

private:
    void init_coefficients() {
        if (cfg_.timesteps < 1) throw ConfigError("denoiser: timesteps must be positive");
        if (cfg_.time_dim % 2 != 0) {
            throw ConfigError("denoiser: time embedding dimension must be even, got " + std::to_string(cfg_.time_dim));
        }
        if (cfg_.parameterization == Parameterization::direct) return;
        if (!(cfg_.sigma_data > 0.0)) throw ConfigError("denoiser: sigma_data must be positive");
        const auto s = NoiseSchedule::linear(cfg_.timesteps, cfg_.beta_start, cfg_.beta_end, 0.0);
        for (int t = 0; t <= cfg_.timesteps; ++t) {
            const double a = s.alpha_bar(t), sd2 = cfg_.sigma_data * cfg_.sigma_data;
            const double v = a * sd2 + (1.0 - a);
            coeff_.push_back({1.0 / std::sqrt(v), std::sqrt(a) * sd2 / v, cfg_.sigma_data * std::sqrt(1.0 - a) / std::sqrt(v)});
        }
    }

    DenoiserConfig cfg_;
    std::vector<Linear> layers_;
    std::vector<std::array<double, 3>> coeff_;  // c_in, c_skip, c_out per t
};

/// Tweedie estimate x_theta(x_t, t) for a batch shaped [B x F x d].
inline Tensor predict_x0(const Denoiser& model, const Tensor& x_t, int t) {
    if (t < 1 || t > model.config().timesteps) throw ContractError("predict_x0: t must lie in [1, T]");
    ad::Tape tape;
    return model.forward(tape, tape.constant(x_t), t).value();
}

struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

/// Latest parameters plus their exponential moving average.
struct EmaPair {
    Denoiser latest;
    Denoiser ema;
    double decay = 0.999;
    AdamState optimizer;

    EmaPair() = default;
    EmaPair(Denoiser init, double ema_decay, double lr) : latest(init), ema(std::move(init)), decay(ema_decay) {
        if (!(ema_decay > 0.0 && ema_decay <= 1.0)) throw ConfigError("ema decay must lie in (0, 1]");
        optimizer.lr = lr;
    }

    /// ema <- decay * ema + (1 - decay) * latest
    void update_ema() {
        auto dst = ema.parameters();
        const auto src = std::as_const(latest).parameters();
        for (std::size_t p = 0; p < dst.size(); ++p) {
            auto d = dst[p]->data();
            auto s = src[p]->data();
            for (std::size_t k = 0; k < d.size(); ++k) d[k] = decay * d[k] + (1.0 - decay) * s[k];
        }
    }
};

inline void adam_update(AdamState& opt, std::span<Tensor* const> params, std::span<const Tensor> grads) {
    if (opt.m.empty()) {
        for (const Tensor* p : params) {
            opt.m.emplace_back(p->shape());
            opt.v.emplace_back(p->shape());
        }
    }
    ++opt.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto w = params[p]->data();
        auto g = grads[p].data();
        auto m = opt.m[p].data();
        auto v = opt.v[p].data();
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
            v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
            w[k] -= opt.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + opt.epsilon);
        }
    }
}

/// One Adam step on the x0-prediction objective followed by an EMA update.
/// `batch` holds clean chunks [B x F x d]; t ~ U{1..T}, eps ~ N(0, I).
inline double train_step(EmaPair& pair, const Tensor& batch, const NoiseSchedule& schedule, Rng& rng) {
    const auto& cfg = pair.latest.config();
    cfg.check_schedule(schedule, "train_step");
    const std::size_t chunk = cfg.chunk_size();
    if (batch.size() == 0 || batch.size() % chunk != 0) {
        throw DimensionError("train_step: batch " + ad::shape_str(batch.shape()) + " is not a batch of chunks");
    }
    const std::size_t B = batch.size() / chunk;
    std::vector<int> ts(B);
    Tensor noisy(ad::Shape{B, chunk});
    for (std::size_t b = 0; b < B; ++b) {
        ts[b] = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.T())));
        const double a = schedule.alpha_bar(ts[b]);
        const double ca = std::sqrt(a), cn = std::sqrt(1.0 - a);
        for (std::size_t k = 0; k < chunk; ++k) noisy[b * chunk + k] = ca * batch[b * chunk + k] + cn * rng.normal();
    }

    ad::Tape tape;
    const auto params = pair.latest.bind(tape, true);
    const ad::Var pred = pair.latest.forward(tape, params, tape.constant(std::move(noisy)), ts);
    const ad::Var target = tape.constant(batch.reshaped({B, chunk}));
    const ad::Var loss = ad::mean(ad::square(ad::sub(pred, target)));
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
        throw NumericalError("train_step: non-finite loss " + std::to_string(value) + " at step " +
                             std::to_string(pair.optimizer.step + 1));
    }
    const auto grads = tape.backward(loss, params);
    auto targets = pair.latest.parameters();
    adam_update(pair.optimizer, targets, grads);
    pair.update_ema();
    return value;
}

}  // namespace chainmp
