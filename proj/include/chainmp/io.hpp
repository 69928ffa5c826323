#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "chainmp/chain.hpp"
#include "chainmp/denoiser.hpp"
#include "chainmp/errors.hpp"
#include "chainmp/sampler.hpp"
#include "chainmp/schedule.hpp"
#include "chainmp/tasks.hpp"

namespace chainmp::io {

namespace fs = std::filesystem;

inline constexpr const char* kCheckpointMagic = "chainmp-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Shortest round-trippable text form of a double.
inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
    return out;
}

inline std::ifstream open_in(const fs::path& path, const char* what) {
    if (!fs::exists(path)) throw ConfigError(std::string(what) + " '" + path.string() + "' does not exist");
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + std::string(what) + " '" + path.string() + "'");
    return in;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
    DenoiserConfig config;
    std::uint64_t schedule_hash = 0;
    long train_steps = 0;
    double ema_decay = 0.999;
    Denoiser latest;
    Denoiser ema;

    EmaPair pair() const {
        EmaPair p;
        p.latest = latest;
        p.ema = ema;
        p.decay = ema_decay;
        return p;
    }
};

namespace detail {
inline void write_params(std::ostream& out, const char* tag, const Denoiser& model) {
    out << tag << '\n';
    std::size_t l = 0;
    for (const auto& layer : model.layers()) {
        out << "layer " << l++ << ' ' << layer.weight.rows() << ' ' << layer.weight.cols() << '\n';
        for (std::size_t k = 0; k < layer.weight.size(); ++k) out << (k ? " " : "") << fmt(layer.weight[k]);
        out << '\n';
        for (std::size_t k = 0; k < layer.bias.size(); ++k) out << (k ? " " : "") << fmt(layer.bias[k]);
        out << '\n';
    }
}

inline void expect(std::istream& in, const std::string& word, const std::string& path) {
    std::string got;
    if (!(in >> got) || got != word) {
        throw ConfigError("checkpoint '" + path + "': expected '" + word + "', found '" + got + "'");
    }
}

inline Denoiser read_params(std::istream& in, const char* tag, const DenoiserConfig& cfg, const std::string& path) {
    expect(in, tag, path);
    std::vector<Linear> layers;
    for (std::size_t l = 0; l <= cfg.depth; ++l) {
        expect(in, "layer", path);
        std::size_t idx = 0, rows = 0, cols = 0;
        if (!(in >> idx >> rows >> cols) || idx != l) throw ConfigError("checkpoint '" + path + "': bad layer header");
        Linear layer{Tensor(ad::Shape{rows, cols}), Tensor(ad::Shape{cols})};
        for (auto& v : layer.weight.data())
            if (!(in >> v)) throw ConfigError("checkpoint '" + path + "': truncated weights");
        for (auto& v : layer.bias.data())
            if (!(in >> v)) throw ConfigError("checkpoint '" + path + "': truncated bias");
        layers.push_back(std::move(layer));
    }
    return Denoiser(cfg, std::move(layers));
}
}  // namespace detail

inline void save_checkpoint(const fs::path& path, const EmaPair& pair, const NoiseSchedule& schedule) {
    auto out = open_out(path);
    const auto& c = pair.latest.config();
    out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
    out << "schedule_hash " << schedule.hash() << '\n';
    out << "chunk_frames " << c.chunk_frames << '\n';
    out << "frame_dim " << c.frame_dim << '\n';
    out << "time_dim " << c.time_dim << '\n';
    out << "hidden " << c.hidden << '\n';
    out << "depth " << c.depth << '\n';
    out << "timesteps " << c.timesteps << '\n';
    out << "activation " << to_string(c.activation) << '\n';
    out << "parameterization " << to_string(c.parameterization) << '\n';
    out << "sigma_data " << fmt(c.sigma_data) << '\n';
    out << "beta_start " << fmt(c.beta_start) << '\n';
    out << "beta_end " << fmt(c.beta_end) << '\n';
    out << "train_steps " << pair.optimizer.step << '\n';
    out << "ema_decay " << fmt(pair.decay) << '\n';
    detail::write_params(out, "latest", pair.latest);
    detail::write_params(out, "ema", pair.ema);
    out << "end\n";
    if (!out) throw ConfigError("failed writing checkpoint '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const fs::path& path) {
    auto in = open_in(path, "checkpoint");
    const std::string p = path.string();
    Checkpoint ck;
    int version = 0;
    detail::expect(in, kCheckpointMagic, p);
    if (!(in >> version) || version != kCheckpointVersion) {
        throw ConfigError("checkpoint '" + p + "': unsupported version " + std::to_string(version));
    }
    std::string act;
    detail::expect(in, "schedule_hash", p);
    in >> ck.schedule_hash;
    detail::expect(in, "chunk_frames", p);
    in >> ck.config.chunk_frames;
    detail::expect(in, "frame_dim", p);
    in >> ck.config.frame_dim;
    detail::expect(in, "time_dim", p);
    in >> ck.config.time_dim;
    detail::expect(in, "hidden", p);
    in >> ck.config.hidden;
    detail::expect(in, "depth", p);
    in >> ck.config.depth;
    detail::expect(in, "timesteps", p);
    in >> ck.config.timesteps;
    detail::expect(in, "activation", p);
    in >> act;
    ck.config.activation = parse_activation(act);
    detail::expect(in, "parameterization", p);
    in >> act;
    ck.config.parameterization = parse_parameterization(act);
    detail::expect(in, "sigma_data", p);
    in >> ck.config.sigma_data;
    detail::expect(in, "beta_start", p);
    in >> ck.config.beta_start;
    detail::expect(in, "beta_end", p);
    in >> ck.config.beta_end;
    detail::expect(in, "train_steps", p);
    in >> ck.train_steps;
    detail::expect(in, "ema_decay", p);
    in >> ck.ema_decay;
    if (!in) throw ConfigError("checkpoint '" + p + "': malformed header");
    ck.latest = detail::read_params(in, "latest", ck.config, p);
    ck.ema = detail::read_params(in, "ema", ck.config, p);
    detail::expect(in, "end", p);
    return ck;
}

/// Refuses checkpoints trained under a different noise schedule.
inline void check_schedule(const Checkpoint& ck, const NoiseSchedule& schedule, const fs::path& path) {
    if (ck.schedule_hash != schedule.hash()) {
        throw ConfigError("checkpoint '" + path.string() + "' was trained with schedule hash " +
                          std::to_string(ck.schedule_hash) + " but the config builds " +
                          std::to_string(schedule.hash()));
    }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline void write_loss_csv(const fs::path& path, const std::vector<double>& losses) {
    auto out = open_out(path);
    out << "step,loss\n";
    for (std::size_t k = 0; k < losses.size(); ++k) out << k + 1 << ',' << fmt(losses[k]) << '\n';
}

inline void write_plan_csv(const fs::path& path, const Tensor& plan, std::size_t d) {
    auto out = open_out(path);
    out << "frame_index";
    for (std::size_t k = 0; k < d; ++k) out << ",dim_" << k;
    out << '\n';
    for (std::size_t f = 0; f < plan.size() / d; ++f) {
        out << f;
        for (std::size_t k = 0; k < d; ++k) out << ',' << fmt(plan[f * d + k]);
        out << '\n';
    }
}

inline void write_chunks_csv(const fs::path& path, const Tensor& chunks, const FactorChain& chain) {
    auto out = open_out(path);
    out << "factor_index,frame_index";
    for (std::size_t k = 0; k < chain.d; ++k) out << ",dim_" << k;
    out << '\n';
    for (std::size_t i = 0; i < chain.n; ++i)
        for (std::size_t f = 0; f < chain.F; ++f) {
            out << i << ',' << f;
            for (std::size_t k = 0; k < chain.d; ++k) out << ',' << fmt(chunks[(i * chain.F + f) * chain.d + k]);
            out << '\n';
        }
}

inline void write_metrics_csv(const fs::path& path, const SampleTrace& trace) {
    auto out = open_out(path);
    out << "step,t,prev,sigma,radius,sync_loss,async_loss,start_err,goal_err,max_transition_err,grad_norm,"
           "sphere_dev,guided,nfe\n";
    for (std::size_t k = 0; k < trace.steps.size(); ++k) {
        const auto& r = trace.steps[k];
        out << k << ',' << r.t << ',' << r.prev << ',' << fmt(r.sigma) << ',' << fmt(r.radius) << ','
            << fmt(r.sync_loss) << ',' << fmt(r.async_loss) << ',' << fmt(r.start_err) << ',' << fmt(r.goal_err)
            << ',' << fmt(r.max_transition) << ',' << fmt(r.grad_norm) << ',' << fmt(r.sphere_dev) << ','
            << (r.guided ? 1 : 0) << ',' << r.nfe << '\n';
    }
}

inline void write_dataset_csv(const fs::path& path, const Tensor& chunks, std::size_t F) {
    auto out = open_out(path);
    out << "chunk_id,frame_index,x,y\n";
    const std::size_t count = chunks.size() / (F * 2);
    for (std::size_t c = 0; c < count; ++c)
        for (std::size_t f = 0; f < F; ++f)
            out << c << ',' << f << ',' << fmt(chunks[(c * F + f) * 2]) << ',' << fmt(chunks[(c * F + f) * 2 + 1])
                << '\n';
}

/// Reads a chunk dataset written by write_dataset_csv.
inline Tensor read_dataset_csv(const fs::path& path, std::size_t F) {
    auto in = open_in(path, "dataset");
    std::string line;
    std::getline(in, line);
    if (line != "chunk_id,frame_index,x,y") throw ConfigError("dataset '" + path.string() + "': unexpected header");
    std::vector<double> values;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 4) {
            throw ConfigError("dataset '" + path.string() + "' line " + std::to_string(lineno) + ": expected 4 columns");
        }
        const std::size_t frame = std::stoul(cells[1]);
        if (frame != (values.size() / 2) % F) {
            throw ConfigError("dataset '" + path.string() + "' line " + std::to_string(lineno) + ": frames out of order");
        }
        values.push_back(std::stod(cells[2]));
        values.push_back(std::stod(cells[3]));
    }
    if (values.empty() || values.size() % (F * 2) != 0) {
        throw ConfigError("dataset '" + path.string() + "': incomplete chunks");
    }
    return Tensor(ad::Shape{values.size() / (F * 2), F, 2}, std::move(values));
}

namespace detail {
/// Numeric rows of a CSV with the given header; each row must have `cols` cells.
inline std::vector<std::vector<double>> read_numeric_csv(const fs::path& path, const std::string& header,
                                                         std::size_t cols, const char* what) {
    auto in = open_in(path, what);
    std::string line;
    std::getline(in, line);
    if (line != header) throw ConfigError(std::string(what) + " '" + path.string() + "': unexpected header '" + line + "'");
    std::vector<std::vector<double>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            row.push_back(std::strtod(cell.c_str(), &end));
            if (cell.empty() || *end != '\0') {
                throw ConfigError(std::string(what) + " '" + path.string() + "' line " + std::to_string(lineno) +
                                  ": bad number '" + cell + "'");
            }
        }
        if (row.size() != cols) {
            throw ConfigError(std::string(what) + " '" + path.string() + "' line " + std::to_string(lineno) +
                              ": expected " + std::to_string(cols) + " columns");
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string dim_header(const char* prefix, std::size_t d) {
    std::string h = prefix;
    for (std::size_t k = 0; k < d; ++k) h += ",dim_" + std::to_string(k);
    return h;
}
}  // namespace detail

inline Tensor read_plan_csv(const fs::path& path, const FactorChain& chain) {
    const auto rows = detail::read_numeric_csv(path, detail::dim_header("frame_index", chain.d), chain.d + 1, "plan");
    if (rows.size() != chain.m()) throw DimensionError("plan '" + path.string() + "' has the wrong number of frames");
    Tensor plan(ad::Shape{chain.m(), chain.d});
    for (std::size_t f = 0; f < rows.size(); ++f)
        for (std::size_t k = 0; k < chain.d; ++k) plan[f * chain.d + k] = rows[f][k + 1];
    return plan;
}

inline Tensor read_chunks_csv(const fs::path& path, const FactorChain& chain) {
    const auto rows = detail::read_numeric_csv(path, detail::dim_header("factor_index,frame_index", chain.d),
                                               chain.d + 2, "chunks");
    if (rows.size() != chain.n * chain.F) throw DimensionError("chunks '" + path.string() + "' has the wrong number of rows");
    Tensor chunks(chain.chunk_shape());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t k = 0; k < chain.d; ++k) chunks[r * chain.d + k] = rows[r][k + 2];
    return chunks;
}

inline void write_manifest(const fs::path& path, const SegmentTaskSet& ts) {
    auto out = open_out(path);
    out << "kind,index,x,y\n";
    for (std::size_t i = 0; i < ts.N; ++i) out << "start," << i << ',' << fmt(ts.starts[i][0]) << ',' << fmt(ts.starts[i][1]) << '\n';
    for (std::size_t j = 0; j < ts.N; ++j) out << "goal," << j << ',' << fmt(ts.goals[j][0]) << ',' << fmt(ts.goals[j][1]) << '\n';
    out << "entry,0," << fmt(ts.entry[0]) << ',' << fmt(ts.entry[1]) << '\n';
    out << "exit,0," << fmt(ts.exit[0]) << ',' << fmt(ts.exit[1]) << '\n';
    for (const auto& [i, j] : ts.ind) out << "ind," << i << ',' << j << ",\n";
    for (const auto& [i, j] : ts.ood) out << "ood," << i << ',' << j << ",\n";
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

/// Chunks as per-factor polylines over the merged plan, anchors as rings.
inline std::string render_svg(const Tensor& chunks, const Tensor& plan, const FactorChain& chain,
                              const std::string& title = "") {
    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    double lo_x = chain.start[0], hi_x = chain.start[0], lo_y = chain.start[1], hi_y = chain.start[1];
    auto grow = [&](double x, double y) {
        lo_x = std::min(lo_x, x);
        hi_x = std::max(hi_x, x);
        lo_y = std::min(lo_y, y);
        hi_y = std::max(hi_y, y);
    };
    grow(chain.goal[0], chain.goal[1]);
    for (std::size_t k = 0; k + 1 < chunks.size(); k += 2) grow(chunks[k], chunks[k + 1]);
    for (std::size_t k = 0; k + 1 < plan.size(); k += 2) grow(plan[k], plan[k + 1]);
    const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-9});
    const double size = 480.0, pad = 40.0, scale = (size - 2 * pad) / span;
    auto px = [&](double x) { return pad + (x - lo_x) * scale; };
    auto py = [&](double y) { return size - pad - (y - lo_y) * scale; };

    std::ostringstream os;
    os << std::setprecision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
       << "\" viewBox=\"0 0 " << size << ' ' << size << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!title.empty()) os << "<text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
    os << "<polyline fill=\"none\" stroke=\"#cccccc\" stroke-width=\"6\" points=\"";
    for (std::size_t f = 0; f < chain.m(); ++f) os << px(plan[f * 2]) << ',' << py(plan[f * 2 + 1]) << ' ';
    os << "\"/>\n";
    for (std::size_t i = 0; i < chain.n; ++i) {
        const char* colour = palette[i % 10];
        os << "<polyline class=\"factor\" data-factor=\"" << i << "\" fill=\"none\" stroke=\"" << colour
           << "\" stroke-width=\"2\" points=\"";
        for (std::size_t f = 0; f < chain.F; ++f) {
            const std::size_t o = (i * chain.F + f) * 2;
            os << px(chunks[o]) << ',' << py(chunks[o + 1]) << ' ';
        }
        os << "\"/>\n";
        for (std::size_t f = 0; f < chain.F; ++f) {
            const std::size_t o = (i * chain.F + f) * 2;
            os << "<circle cx=\"" << px(chunks[o]) << "\" cy=\"" << py(chunks[o + 1]) << "\" r=\"3\" fill=\"" << colour
               << "\"/>\n";
        }
    }
    os << "<circle class=\"anchor\" cx=\"" << px(chain.start[0]) << "\" cy=\"" << py(chain.start[1])
       << "\" r=\"8\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << px(chain.start[0]) + 10 << "\" y=\"" << py(chain.start[1]) - 10
       << "\" font-family=\"sans-serif\" font-size=\"12\">s</text>\n";
    os << "<circle class=\"anchor\" cx=\"" << px(chain.goal[0]) << "\" cy=\"" << py(chain.goal[1])
       << "\" r=\"8\" fill=\"none\" stroke=\"black\" stroke-dasharray=\"3,2\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << px(chain.goal[0]) + 10 << "\" y=\"" << py(chain.goal[1]) + 16
       << "\" font-family=\"sans-serif\" font-size=\"12\">g</text>\n";
    os << "</svg>\n";
    return os.str();
}

inline void write_svg(const fs::path& path, const SampleTrace& trace, const FactorChain& chain,
                      const std::string& title = "") {
    if (chain.d != 2) throw DimensionError("SVG output needs d = 2");
    auto out = open_out(path);
    out << render_svg(trace.chunks, trace.plan, chain, title);
}

}  // namespace chainmp::io
