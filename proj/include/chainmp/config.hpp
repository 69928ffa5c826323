#pragma once

// Experiment configuration: `key = value` lines grouped under `[section]`
// headers. `#` and `;` start comments. Every error names the line.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "chainmp/denoiser.hpp"
#include "chainmp/errors.hpp"
#include "chainmp/messages.hpp"
#include "chainmp/sampler.hpp"
#include "chainmp/schedule.hpp"
#include "chainmp/tasks.hpp"

namespace chainmp {

enum class TaskKind { arcs, segments };
enum class SamplerKind { guided, diffcollage, independent };
enum class PairSplit { ind, ood, all };

inline const char* to_string(TaskKind k) { return k == TaskKind::arcs ? "arcs" : "segments"; }
inline const char* to_string(SamplerKind k) {
    switch (k) {
        case SamplerKind::guided: return "guided";
        case SamplerKind::diffcollage: return "diffcollage";
        default: return "independent";
    }
}
inline const char* to_string(PairSplit p) {
    switch (p) {
        case PairSplit::ind: return "ind";
        case PairSplit::ood: return "ood";
        default: return "all";
    }
}

struct ModelSettings {
    DenoiserConfig denoiser;
    bool sigma_data_auto = true;  // RMS of the training chunks
    double ema_decay = 0.999;
    double lr = 1e-4;
    std::size_t batch = 128;
    long train_steps = 20000;
    std::uint64_t train_seed = 0;
    std::string checkpoint;           // default: <output_dir>/chunk.ckpt
    std::string boundary_checkpoint;  // default: <output_dir>/boundary.ckpt
};

struct ScheduleSettings {
    int T = 500;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double eta = 1.0;

    NoiseSchedule build() const { return NoiseSchedule::linear(T, beta_start, beta_end, eta); }
};

struct SamplerSettings {
    SamplerKind kind = SamplerKind::guided;
    int steps = 300;
    double g_r = 0.6;
    AsyncConfig async;
    MessageWeights weights;
    bool sync_squared = true;
    bool anchor_replace = false;
};

struct ChainSettings {
    std::size_t n = 3;
    std::size_t F = 3;
    std::vector<double> start{0.0, 0.0};
    std::vector<double> goal{0.0, 0.0};
};

struct ArcSettings {
    ArcParams params;
    std::size_t count = 20000;
    std::uint64_t data_seed = 1;
};

struct SegmentSettings {
    std::size_t N = 3;
    SegmentParams params;
    std::uint64_t data_seed = 1;
    PairSplit pairs = PairSplit::ood;
};

struct GapSettings {
    std::size_t K = 3;
    std::string preset = "random";  // random | sticky | uniform
    double stay = 0.9;
    double strength = -1.0;         // < 0: random channels per trial
    std::size_t trials = 1000;
    std::uint64_t seed = 0;
};

struct AblationSettings {
    std::vector<int> steps{50, 100, 300};
};

struct ExperimentConfig {
    TaskKind task = TaskKind::arcs;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::string output_dir = "out";
    std::string dataset;  // optional chunk CSV; generated when empty
    std::size_t threads = 1;
    ModelSettings model;
    ScheduleSettings schedule;
    SamplerSettings sampler;
    ChainSettings chain;
    ArcSettings arcs;
    SegmentSettings segments;
    GapSettings gap;
    AblationSettings ablation;

    std::filesystem::path out() const { return output_dir; }
    std::filesystem::path checkpoint_path() const {
        return model.checkpoint.empty() ? out() / "chunk.ckpt" : std::filesystem::path(model.checkpoint);
    }
    std::filesystem::path boundary_checkpoint_path() const {
        return model.boundary_checkpoint.empty() ? out() / "boundary.ckpt"
                                                 : std::filesystem::path(model.boundary_checkpoint);
    }

    void validate() const {
        if (seeds.empty()) throw ConfigError("config: seeds must be non-empty");
        if (threads < 1) throw ConfigError("config: threads must be >= 1");
        if (chain.n < 1 || chain.F < 2) throw ConfigError("config: need n >= 1 and F >= 2");
        if (chain.start.size() != 2 || chain.goal.size() != 2) throw ConfigError("config: start and goal must be 2D");
        if (model.batch < 1 || model.train_steps < 1) throw ConfigError("config: batch and train_steps must be >= 1");
        if (!(model.lr > 0.0)) throw ConfigError("config: lr must be positive");
        if (sampler.steps < 1 || sampler.steps > schedule.T) throw ConfigError("config: sampler steps must lie in [1, T]");
        if (!(sampler.g_r >= 0.0 && sampler.g_r <= 1.0)) throw ConfigError("config: g_r must lie in [0, 1]");
        sampler.async.validate();
        sampler.weights.validate();
        for (int s : ablation.steps)
            if (s < 1 || s > schedule.T) throw ConfigError("config: ablation steps must lie in [1, T]");
        if (gap.K < 2 || gap.K > 6) throw ConfigError("config: gap K must lie in [2, 6]");
        if (gap.preset != "random" && gap.preset != "sticky" && gap.preset != "uniform") {
            throw ConfigError("config: gap preset must be random, sticky or uniform");
        }
        schedule.build();
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

class ConfigReader {
public:
    ConfigReader(std::string origin, std::size_t line, std::string key, std::string value)
        : origin_(std::move(origin)), line_(line), key_(std::move(key)), value_(std::move(value)) {}

    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError(origin_ + ":" + std::to_string(line_) + ": " + key_ + ": " + what);
    }

    const std::string& str() const { return value_; }

    double real() const {
        char* end = nullptr;
        const double v = std::strtod(value_.c_str(), &end);
        if (value_.empty() || *end != '\0') fail("expected a number, got '" + value_ + "'");
        return v;
    }

    long integer() const {
        char* end = nullptr;
        const long v = std::strtol(value_.c_str(), &end, 10);
        if (value_.empty() || *end != '\0') fail("expected an integer, got '" + value_ + "'");
        return v;
    }

    std::size_t count() const {
        const long v = integer();
        if (v < 0) fail("expected a non-negative integer");
        return static_cast<std::size_t>(v);
    }

    bool boolean() const {
        if (value_ == "true" || value_ == "1" || value_ == "yes") return true;
        if (value_ == "false" || value_ == "0" || value_ == "no") return false;
        fail("expected true or false, got '" + value_ + "'");
    }

    std::vector<double> reals() const {
        std::vector<double> out;
        for (const auto& item : split_list(value_)) out.push_back(ConfigReader(origin_, line_, key_, item).real());
        return out;
    }

    std::vector<long> integers() const {
        std::vector<long> out;
        for (const auto& item : split_list(value_)) out.push_back(ConfigReader(origin_, line_, key_, item).integer());
        return out;
    }

private:
    std::string origin_;
    std::size_t line_;
    std::string key_;
    std::string value_;
};

inline void apply_key(ExperimentConfig& c, const std::string& section, const std::string& key,
                      const ConfigReader& r) {
    auto unknown = [&] { r.fail("unknown key in [" + section + "]"); };
    if (section == "experiment") {
        if (key == "task") {
            if (r.str() == "arcs") c.task = TaskKind::arcs;
            else if (r.str() == "segments") c.task = TaskKind::segments;
            else r.fail("task must be arcs or segments");
        } else if (key == "seeds") {
            c.seeds.clear();
            for (long s : r.integers()) {
                if (s < 0) r.fail("seeds must be non-negative");
                c.seeds.push_back(static_cast<std::uint64_t>(s));
            }
        } else if (key == "output_dir") {
            c.output_dir = r.str();
        } else if (key == "dataset") {
            c.dataset = r.str();
        } else if (key == "threads") {
            c.threads = r.count();
        } else {
            unknown();
        }
    } else if (section == "model") {
        auto& d = c.model.denoiser;
        if (key == "hidden") d.hidden = r.count();
        else if (key == "depth") d.depth = r.count();
        else if (key == "time_dim") d.time_dim = r.count();
        else if (key == "activation") d.activation = parse_activation(r.str());
        else if (key == "parameterization") d.parameterization = parse_parameterization(r.str());
        else if (key == "sigma_data") {
            c.model.sigma_data_auto = r.str() == "auto";
            if (!c.model.sigma_data_auto) d.sigma_data = r.real();
        } else if (key == "ema_decay") c.model.ema_decay = r.real();
        else if (key == "lr") c.model.lr = r.real();
        else if (key == "batch") c.model.batch = r.count();
        else if (key == "train_steps") c.model.train_steps = r.integer();
        else if (key == "train_seed") c.model.train_seed = r.count();
        else if (key == "checkpoint") c.model.checkpoint = r.str();
        else if (key == "boundary_checkpoint") c.model.boundary_checkpoint = r.str();
        else unknown();
    } else if (section == "schedule") {
        if (key == "T") c.schedule.T = static_cast<int>(r.integer());
        else if (key == "beta_start") c.schedule.beta_start = r.real();
        else if (key == "beta_end") c.schedule.beta_end = r.real();
        else if (key == "eta") c.schedule.eta = r.real();
        else unknown();
    } else if (section == "sampler") {
        if (key == "kind") {
            if (r.str() == "guided") c.sampler.kind = SamplerKind::guided;
            else if (r.str() == "diffcollage") c.sampler.kind = SamplerKind::diffcollage;
            else if (r.str() == "independent") c.sampler.kind = SamplerKind::independent;
            else r.fail("sampler must be guided, diffcollage or independent");
        } else if (key == "steps") c.sampler.steps = static_cast<int>(r.integer());
        else if (key == "g_r") c.sampler.g_r = r.real();
        else if (key == "gamma") c.sampler.async.gamma = r.real();
        else if (key == "w_sync") c.sampler.weights.w_sync = r.real();
        else if (key == "w_async") c.sampler.weights.w_async = r.real();
        else if (key == "squared") {
            c.sampler.async.squared = r.boolean();
            c.sampler.sync_squared = c.sampler.async.squared;
        } else if (key == "anchor_replace") c.sampler.anchor_replace = r.boolean();
        else unknown();
    } else if (section == "chain") {
        if (key == "n") c.chain.n = r.count();
        else if (key == "F") c.chain.F = r.count();
        else if (key == "start") c.chain.start = r.reals();
        else if (key == "goal") c.chain.goal = r.reals();
        else unknown();
    } else if (section == "arcs") {
        if (key == "radius") c.arcs.params.radius = r.real();
        else if (key == "arc_degrees") c.arcs.params.arc_degrees = r.real();
        else if (key == "center_range") c.arcs.params.center_range = r.real();
        else if (key == "count") c.arcs.count = r.count();
        else if (key == "data_seed") c.arcs.data_seed = r.count();
        else unknown();
    } else if (section == "segments") {
        auto& p = c.segments.params;
        if (key == "N") c.segments.N = r.count();
        else if (key == "width") p.width = r.real();
        else if (key == "jitter") p.jitter = r.real();
        else if (key == "steps_per_leg") p.steps_per_leg = r.count();
        else if (key == "demos_per_pair") p.demos_per_pair = r.count();
        else if (key == "chunk_count") p.chunk_count = r.count();
        else if (key == "data_seed") c.segments.data_seed = r.count();
        else if (key == "pairs") {
            if (r.str() == "ind") c.segments.pairs = PairSplit::ind;
            else if (r.str() == "ood") c.segments.pairs = PairSplit::ood;
            else if (r.str() == "all") c.segments.pairs = PairSplit::all;
            else r.fail("pairs must be ind, ood or all");
        } else unknown();
    } else if (section == "gap") {
        if (key == "K") c.gap.K = r.count();
        else if (key == "preset") c.gap.preset = r.str();
        else if (key == "stay") c.gap.stay = r.real();
        else if (key == "strength") c.gap.strength = r.real();
        else if (key == "trials") c.gap.trials = r.count();
        else if (key == "seed") c.gap.seed = r.count();
        else unknown();
    } else if (section == "ablation") {
        if (key == "steps") {
            c.ablation.steps.clear();
            for (long s : r.integers()) c.ablation.steps.push_back(static_cast<int>(s));
        } else {
            unknown();
        }
    } else {
        r.fail("key outside a known section");
    }
}

}  // namespace detail

/// Parses configuration text. `origin` labels error messages.
inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
    static const char* sections[] = {"experiment", "model", "schedule", "sampler", "chain",
                                     "arcs",       "segments", "gap",    "ablation"};
    ExperimentConfig cfg;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto hash = raw.find_first_of("#;");
        const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            bool known = false;
            for (const char* s : sections) known = known || section == s;
            if (!known) throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (section.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": key '" + key + "' before any section");
        detail::apply_key(cfg, section, key, detail::ConfigReader(origin, lineno, key, value));
    }
    return cfg;
}

/// Loads a config file; CHAINMP_OUTPUT_DIR, when set, overrides output_dir.
inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file '" + path.string() + "' cannot be opened");
    std::stringstream buf;
    buf << in.rdbuf();
    ExperimentConfig cfg = parse_config(buf.str(), path.string());
    if (const char* env = std::getenv("CHAINMP_OUTPUT_DIR"); env != nullptr && *env != '\0') cfg.output_dir = env;
    return cfg;
}

}  // namespace chainmp
