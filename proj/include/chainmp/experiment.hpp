#pragma once

// Orchestration behind the CLI: dataset construction, training, sampling
// runs fanned out over worker threads, ablation sweeps, metric
// re-evaluation from CSV, and the gap verifier.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <limits>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "chainmp/bethegap.hpp"
#include "chainmp/config.hpp"
#include "chainmp/io.hpp"
#include "chainmp/sampler.hpp"
#include "chainmp/tasks.hpp"

namespace chainmp::experiment {

namespace fs = std::filesystem;

/// Runs fn(0..jobs-1) on up to `threads` workers; the first exception wins.
inline void parallel_for(std::size_t jobs, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, jobs));
    if (threads == 1) {
        for (std::size_t j = 0; j < jobs; ++j) fn(j);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (std::size_t j = next++; j < jobs; j = next++) {
                try {
                    fn(j);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Root mean square of all entries.
inline double rms(const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) s += v * v;
    return std::sqrt(s / static_cast<double>(t.size()));
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

struct TaskInstance {
    std::string label;
    FactorChain chain;
    Thresholds thresholds;
};

inline SegmentTaskSet build_segments(const ExperimentConfig& cfg) {
    Rng rng(cfg.segments.data_seed);
    SegmentParams p = cfg.segments.params;
    p.F = cfg.chain.F;
    return gen_segments(cfg.segments.N, rng, p);
}

inline ArcDataset build_arcs(const ExperimentConfig& cfg) {
    Rng rng(cfg.arcs.data_seed);
    return gen_arcs(cfg.arcs.params, cfg.chain.F, cfg.arcs.count, rng);
}

/// Threshold scale of a task: the clip chord for arcs, corridor width for segments.
inline double characteristic_length(const ExperimentConfig& cfg) {
    if (cfg.task == TaskKind::arcs) {
        ArcDataset probe;
        probe.params = cfg.arcs.params;
        return probe.chord();
    }
    return cfg.segments.params.width;
}

inline std::vector<TaskInstance> task_instances(const ExperimentConfig& cfg) {
    const Thresholds th = Thresholds::relative(characteristic_length(cfg));
    std::vector<TaskInstance> out;
    if (cfg.task == TaskKind::arcs) {
        out.push_back({"flower", FactorChain(cfg.chain.n, cfg.chain.F, 2, cfg.chain.start, cfg.chain.goal), th});
        return out;
    }
    const SegmentTaskSet ts = build_segments(cfg);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (cfg.segments.pairs != PairSplit::ood) pairs.insert(pairs.end(), ts.ind.begin(), ts.ind.end());
    if (cfg.segments.pairs != PairSplit::ind) pairs.insert(pairs.end(), ts.ood.begin(), ts.ood.end());
    for (const auto& [i, j] : pairs) {
        out.push_back({"s" + std::to_string(i) + "_g" + std::to_string(j), ts.chain_for(i, j), th});
    }
    return out;
}

/// Training chunks: from the configured dataset file, else generated.
inline Tensor training_chunks(const ExperimentConfig& cfg) {
    if (!cfg.dataset.empty()) return io::read_dataset_csv(cfg.dataset, cfg.chain.F);
    return cfg.task == TaskKind::arcs ? build_arcs(cfg).chunks : build_segments(cfg).chunks;
}

/// First and last frame of every chunk, as single-frame chunks [2B x 1 x d].
inline Tensor boundary_frames(const Tensor& chunks) {
    const std::size_t B = chunks.shape()[0], F = chunks.shape()[1], d = chunks.shape()[2];
    Tensor out(ad::Shape{2 * B, 1, d});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < d; ++k) {
            out[(2 * b) * d + k] = chunks[(b * F) * d + k];
            out[(2 * b + 1) * d + k] = chunks[(b * F + F - 1) * d + k];
        }
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
    EmaPair pair;
    std::vector<double> losses;
};

/// Minibatch training on `data` [count x F x d]; deterministic given `seed`.
inline TrainResult train_model(DenoiserConfig dcfg, const Tensor& data, const ModelSettings& ms,
                               const NoiseSchedule& schedule, std::uint64_t seed, std::ostream* log = nullptr) {
    if (data.rank() != 3) throw DimensionError("training data must be [count x F x d]");
    const std::size_t count = data.shape()[0], chunk = data.shape()[1] * data.shape()[2];
    dcfg.chunk_frames = data.shape()[1];
    dcfg.frame_dim = data.shape()[2];
    dcfg.timesteps = schedule.T();
    dcfg.beta_start = schedule.beta_start();
    dcfg.beta_end = schedule.beta_end();
    if (ms.sigma_data_auto) dcfg.sigma_data = rms(data);

    Rng rng(seed);
    TrainResult res{EmaPair(Denoiser(dcfg, rng), ms.ema_decay, ms.lr), {}};
    res.losses.reserve(static_cast<std::size_t>(ms.train_steps));
    Tensor batch(ad::Shape{ms.batch, dcfg.chunk_frames, dcfg.frame_dim});
    for (long step = 0; step < ms.train_steps; ++step) {
        for (std::size_t b = 0; b < ms.batch; ++b) {
            const std::size_t j = rng.below(count);
            std::copy_n(data.data().begin() + static_cast<std::ptrdiff_t>(j * chunk), chunk,
                        batch.data().begin() + static_cast<std::ptrdiff_t>(b * chunk));
        }
        res.losses.push_back(train_step(res.pair, batch, schedule, rng));
        if (log != nullptr && ((step + 1) % 1000 == 0 || step + 1 == ms.train_steps)) {
            *log << "  step " << step + 1 << "/" << ms.train_steps << " loss " << res.losses.back() << '\n';
        }
    }
    return res;
}

struct TrainSummary {
    fs::path checkpoint;
    fs::path boundary_checkpoint;  // empty unless trained
    double first_loss = 0.0;
    double last_loss = 0.0;
    double sigma_data = 0.0;
};

inline TrainSummary cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    const NoiseSchedule schedule = cfg.schedule.build();
    const Tensor data = training_chunks(cfg);
    const fs::path out = cfg.out();
    fs::create_directories(out);
    io::write_dataset_csv(out / "dataset.csv", data, cfg.chain.F);
    if (cfg.task == TaskKind::segments) io::write_manifest(out / "manifest.csv", build_segments(cfg));

    TrainSummary summary;
    log << "training chunk model on " << data.shape()[0] << " chunks\n";
    const TrainResult chunk = train_model(cfg.model.denoiser, data, cfg.model, schedule, cfg.model.train_seed, &log);
    summary.checkpoint = cfg.checkpoint_path();
    io::save_checkpoint(summary.checkpoint, chunk.pair, schedule);
    io::write_loss_csv(out / "loss.csv", chunk.losses);
    summary.first_loss = chunk.losses.front();
    summary.last_loss = chunk.losses.back();
    summary.sigma_data = chunk.pair.latest.config().sigma_data;

    if (cfg.sampler.kind == SamplerKind::diffcollage) {
        log << "training boundary model\n";
        const TrainResult boundary = train_model(cfg.model.denoiser, boundary_frames(data), cfg.model, schedule,
                                                 cfg.model.train_seed + 1, &log);
        summary.boundary_checkpoint = cfg.boundary_checkpoint_path();
        io::save_checkpoint(summary.boundary_checkpoint, boundary.pair, schedule);
        io::write_loss_csv(out / "boundary_loss.csv", boundary.losses);
    }
    return summary;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

struct Models {
    EmaPair chunk;
    Denoiser boundary;
    bool has_boundary = false;
};

inline Models load_models(const ExperimentConfig& cfg, const NoiseSchedule& schedule, bool need_boundary) {
    Models m;
    const fs::path cp = cfg.checkpoint_path();
    const io::Checkpoint ck = io::load_checkpoint(cp);
    io::check_schedule(ck, schedule, cp);
    m.chunk = ck.pair();
    if (need_boundary) {
        const fs::path bp = cfg.boundary_checkpoint_path();
        const io::Checkpoint bk = io::load_checkpoint(bp);
        io::check_schedule(bk, schedule, bp);
        m.boundary = bk.ema;
        m.has_boundary = true;
    }
    return m;
}

struct RunSpec {
    SamplerKind kind = SamplerKind::guided;
    int steps = 300;
    double g_r = 0.6;
    AsyncConfig async;
    MessageWeights weights;
    bool sync_squared = true;
    bool anchor_replace = false;
    std::uint64_t seed = 0;

    static RunSpec from(const SamplerSettings& s, std::uint64_t seed) {
        return {s.kind, s.steps, s.g_r, s.async, s.weights, s.sync_squared, s.anchor_replace, seed};
    }
};

inline SampleTrace run_sampler(const Models& models, const FactorChain& chain, const NoiseSchedule& schedule,
                               const RunSpec& spec) {
    GuidanceConfig g;
    g.g_r = spec.g_r;
    g.steps = spec.steps;
    g.seed = spec.seed;
    switch (spec.kind) {
        case SamplerKind::guided: {
            SyncSystem sync = build_sync_system(chain);
            sync.squared = spec.sync_squared;
            return compose_guided(models.chunk, chain, schedule, sync, spec.async, g, spec.weights);
        }
        case SamplerKind::independent:
            return compose_independent(models.chunk, chain, schedule, g);
        case SamplerKind::diffcollage: {
            if (chain.n > 1 && !models.has_boundary) throw ConfigError("diffcollage needs a boundary checkpoint");
            const CollageModels cm{&models.chunk.ema, models.has_boundary ? &models.boundary : nullptr};
            return compose_diffcollage(cm, chain, schedule, g, CollageOptions{spec.anchor_replace});
        }
    }
    throw ConfigError("unknown sampler");
}

/// Plan-level metrics: anchoring and smoothness from the plan, transitions
/// from the per-factor estimates.
inline PlanMetrics run_metrics(const Tensor& plan, const Tensor& chunks, const TaskInstance& task) {
    const auto res = boundary_residuals(chunks, task.chain);
    return evaluate_plan(plan, task.chain, task.thresholds, res.transition_errs);
}

struct RunResult {
    std::string label;
    std::string sampler;
    std::string scheme;  // message scheme (ablation) or empty
    std::uint64_t seed = 0;
    int steps = 0;
    PlanMetrics metrics;
    long nfe_chunk = 0;
    long nfe_boundary = 0;
    std::size_t skipped_guidance = 0;
    double max_sphere_dev = 0.0;
};

inline RunResult summarize(const TaskInstance& task, const RunSpec& spec, const SampleTrace& trace) {
    RunResult r;
    r.label = task.label;
    r.sampler = trace.sampler;
    r.seed = spec.seed;
    r.steps = spec.steps;
    r.metrics = run_metrics(trace.plan, trace.chunks, task);
    r.nfe_chunk = trace.nfe_chunk;
    r.nfe_boundary = trace.nfe_boundary;
    r.skipped_guidance = trace.skipped_guidance;
    r.max_sphere_dev = trace.max_sphere_dev();
    return r;
}

inline const char* kSummaryHeader =
    "task,label,sampler,scheme,seed,steps,success,start_err,goal_err,max_transition_err,max_residual,smoothness,"
    "nfe_chunk,nfe_boundary,skipped_guidance,max_sphere_dev";

inline void write_summary_row(std::ostream& out, const char* task, const RunResult& r) {
    const auto& m = r.metrics;
    out << task << ',' << r.label << ',' << r.sampler << ',' << r.scheme << ',' << r.seed << ',' << r.steps << ','
        << (m.success ? 1 : 0) << ',' << io::fmt(m.start_err) << ',' << io::fmt(m.goal_err) << ','
        << io::fmt(m.max_transition_err) << ',' << io::fmt(m.max_residual()) << ',' << io::fmt(m.smoothness) << ','
        << r.nfe_chunk << ',' << r.nfe_boundary << ',' << r.skipped_guidance << ',' << io::fmt(r.max_sphere_dev)
        << '\n';
}

inline fs::path run_dir(const fs::path& root, const std::string& label, std::uint64_t seed) {
    return root / label / ("seed_" + std::to_string(seed));
}

inline std::vector<RunResult> cmd_compose(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    const NoiseSchedule schedule = cfg.schedule.build();
    const Models models = load_models(cfg, schedule, cfg.sampler.kind == SamplerKind::diffcollage);
    const auto tasks = task_instances(cfg);
    const fs::path root = cfg.out() / "compose";
    const std::size_t jobs = tasks.size() * cfg.seeds.size();
    std::vector<RunResult> results(jobs);
    parallel_for(jobs, cfg.threads, [&](std::size_t j) {
        const TaskInstance& task = tasks[j / cfg.seeds.size()];
        const RunSpec spec = RunSpec::from(cfg.sampler, cfg.seeds[j % cfg.seeds.size()]);
        const SampleTrace trace = run_sampler(models, task.chain, schedule, spec);
        const fs::path dir = run_dir(root, task.label, spec.seed);
        io::write_metrics_csv(dir / "metrics.csv", trace);
        io::write_plan_csv(dir / "plan.csv", trace.plan, task.chain.d);
        io::write_chunks_csv(dir / "chunks.csv", trace.chunks, task.chain);
        io::write_svg(dir / "plan.svg", trace, task.chain, task.label + " / " + trace.sampler + " / seed " + std::to_string(spec.seed));
        results[j] = summarize(task, spec, trace);
    });
    auto out = io::open_out(root / "summary.csv");
    out << kSummaryHeader << '\n';
    for (const auto& r : results) {
        write_summary_row(out, to_string(cfg.task), r);
        log << r.label << " seed " << r.seed << ": max residual " << r.metrics.max_residual()
            << (r.metrics.success ? " (success)" : "") << '\n';
    }
    return results;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct Scheme {
    const char* name;
    MessageWeights weights;
};

inline const std::vector<Scheme>& ablation_schemes() {
    static const std::vector<Scheme> s{{"sync", {1.0, 0.0}}, {"async", {0.0, 1.0}}, {"joint", {1.0, 1.0}}};
    return s;
}

struct AblationCell {
    std::string scheme;
    int steps = 0;
    std::size_t runs = 0;
    double median_residual = 0.0;
    double mean_residual = 0.0;
    double success_rate = 0.0;
};

struct AblationResult {
    std::vector<RunResult> runs;
    std::vector<AblationCell> cells;

    const AblationCell& cell(const std::string& scheme, int steps) const {
        for (const auto& c : cells)
            if (c.scheme == scheme && c.steps == steps) return c;
        throw ContractError("no ablation cell " + scheme + "/" + std::to_string(steps));
    }
};

/// {sync, async, joint} x steps x seeds x task instances, guided sampler.
inline AblationResult run_ablation(const ExperimentConfig& cfg, const Models& models, const NoiseSchedule& schedule) {
    const auto tasks = task_instances(cfg);
    const auto& schemes = ablation_schemes();
    const auto& steps = cfg.ablation.steps;
    const std::size_t per_cell = tasks.size() * cfg.seeds.size();
    const std::size_t jobs = schemes.size() * steps.size() * per_cell;
    AblationResult res;
    res.runs.resize(jobs);
    parallel_for(jobs, cfg.threads, [&](std::size_t j) {
        const std::size_t cell = j / per_cell, within = j % per_cell;
        const Scheme& scheme = schemes[cell / steps.size()];
        RunSpec spec = RunSpec::from(cfg.sampler, cfg.seeds[within % cfg.seeds.size()]);
        spec.kind = SamplerKind::guided;
        spec.steps = steps[cell % steps.size()];
        spec.weights = scheme.weights;
        const TaskInstance& task = tasks[within / cfg.seeds.size()];
        RunResult r = summarize(task, spec, run_sampler(models, task.chain, schedule, spec));
        r.scheme = scheme.name;
        res.runs[j] = std::move(r);
    });
    for (std::size_t c = 0; c < schemes.size() * steps.size(); ++c) {
        std::vector<double> residuals;
        std::size_t ok = 0;
        for (std::size_t k = 0; k < per_cell; ++k) {
            const auto& r = res.runs[c * per_cell + k];
            residuals.push_back(r.metrics.max_residual());
            ok += r.metrics.success ? 1 : 0;
        }
        res.cells.push_back({schemes[c / steps.size()].name, steps[c % steps.size()], per_cell, median(residuals),
                             mean(residuals), static_cast<double>(ok) / static_cast<double>(per_cell)});
    }
    return res;
}

inline AblationResult cmd_ablate(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    const NoiseSchedule schedule = cfg.schedule.build();
    const Models models = load_models(cfg, schedule, false);
    AblationResult res = run_ablation(cfg, models, schedule);
    const fs::path root = cfg.out() / "ablate";
    {
        auto out = io::open_out(root / "runs.csv");
        out << kSummaryHeader << '\n';
        for (const auto& r : res.runs) write_summary_row(out, to_string(cfg.task), r);
    }
    auto out = io::open_out(root / "cells.csv");
    out << "scheme,steps,runs,median_residual,mean_residual,success_rate\n";
    for (const auto& c : res.cells) {
        out << c.scheme << ',' << c.steps << ',' << c.runs << ',' << io::fmt(c.median_residual) << ','
            << io::fmt(c.mean_residual) << ',' << io::fmt(c.success_rate) << '\n';
        log << c.scheme << " steps=" << c.steps << " median residual " << c.median_residual << " success "
            << c.success_rate << '\n';
    }
    return res;
}

// ---------------------------------------------------------------------------
// Evaluation from written CSVs
// ---------------------------------------------------------------------------

struct EvalReport {
    std::size_t runs = 0;
    std::size_t mismatches = 0;  // recomputed metrics differing from summary.csv
    std::vector<RunResult> results;
};

/// Recomputes every compose run's metrics from its plan and chunk CSVs and
/// compares them with summary.csv.
inline EvalReport cmd_eval(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    const fs::path root = cfg.out() / "compose";
    const auto tasks = task_instances(cfg);
    auto in = io::open_in(root / "summary.csv", "summary");
    std::string line;
    std::getline(in, line);
    if (line != kSummaryHeader) throw ConfigError("summary '" + (root / "summary.csv").string() + "': unexpected header");
    EvalReport rep;
    auto out = io::open_out(cfg.out() / "eval.csv");
    out << kSummaryHeader << '\n';
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 12) throw ConfigError("summary row too short: " + line);
        const auto it = std::find_if(tasks.begin(), tasks.end(), [&](const TaskInstance& t) { return t.label == cells[1]; });
        if (it == tasks.end()) throw ConfigError("summary references unknown task instance '" + cells[1] + "'");
        RunResult r;
        r.label = cells[1];
        r.sampler = cells[2];
        r.seed = std::stoull(cells[4]);
        r.steps = std::stoi(cells[5]);
        const fs::path dir = run_dir(root, r.label, r.seed);
        r.metrics = run_metrics(io::read_plan_csv(dir / "plan.csv", it->chain),
                                io::read_chunks_csv(dir / "chunks.csv", it->chain), *it);
        const auto& m = r.metrics;
        const bool same = cells[6] == (m.success ? "1" : "0") && cells[7] == io::fmt(m.start_err) &&
                          cells[8] == io::fmt(m.goal_err) && cells[9] == io::fmt(m.max_transition_err) &&
                          cells[10] == io::fmt(m.max_residual()) && cells[11] == io::fmt(m.smoothness);
        if (!same) {
            ++rep.mismatches;
            log << "mismatch: " << r.label << " seed " << r.seed << '\n';
        }
        write_summary_row(out, to_string(cfg.task), r);
        rep.results.push_back(std::move(r));
        ++rep.runs;
    }
    std::size_t ok = 0;
    for (const auto& r : rep.results) ok += r.metrics.success ? 1 : 0;
    log << rep.runs << " runs re-evaluated, " << ok << " successful, " << rep.mismatches << " mismatches\n";
    return rep;
}

// ---------------------------------------------------------------------------
// Gap verification
// ---------------------------------------------------------------------------

struct GapReport {
    std::size_t rows = 0;
    std::size_t undefined = 0;
    double max_abs_diff = 0.0;
    double max_abs_delta = 0.0;

    bool passed(double tol = 1e-12) const { return max_abs_diff < tol; }
};

inline bethe::DiscreteChain gap_chain(const GapSettings& g, Rng& rng) {
    if (g.preset == "sticky") return bethe::sticky_chain(g.K, g.stay);
    if (g.preset == "uniform") return bethe::uniform_chain(g.K);
    return bethe::random_chain(g.K, rng);
}

/// One observation per trial (random chain/channels when configured),
/// exhaustive over observations when trials == 0.
inline GapReport cmd_gap_verify(const GapSettings& g, const fs::path& csv_path, std::ostream& log) {
    if (g.K < 2 || g.K > 6) throw ConfigError("gap-verify: K must lie in [2, 6]");
    Rng rng(g.seed);
    auto out = io::open_out(csv_path);
    out << "trial,obs,delta_direct,delta_formula,abs_diff\n";
    GapReport rep;
    const auto all_obs = bethe::all_observations(g.K);
    const std::size_t trials = g.trials == 0 ? 1 : g.trials;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const bethe::DiscreteChain ch = gap_chain(g, rng);
        ch.validate();
        bethe::Channels noise;
        if (g.strength >= 0.0) {
            noise = bethe::same_channel(bethe::NoiseChannel::flip(g.K, g.strength));
        } else {
            for (auto& c : noise) c = bethe::random_channel(g.K, rng);
        }
        std::vector<bethe::Observation> obs;
        if (g.trials == 0) {
            obs = all_obs;
        } else {
            obs.push_back(all_obs[rng.below(all_obs.size())]);
        }
        for (const auto& o : obs) {
            const auto direct = bethe::gap_direct(ch, noise, o);
            const auto cov = bethe::gap_covariance(ch, noise, o);
            out << trial << ',' << o[0] << '-' << o[1] << '-' << o[2] << ',' << io::fmt(direct.delta) << ',';
            rep.max_abs_delta = std::max(rep.max_abs_delta, std::abs(direct.delta));
            if (cov.defined) {
                const double diff = std::abs(direct.delta - cov.delta_formula);
                rep.max_abs_diff = std::max(rep.max_abs_diff, diff);
                out << io::fmt(cov.delta_formula) << ',' << io::fmt(diff) << '\n';
            } else {
                ++rep.undefined;
                out << "nan,nan\n";
            }
            ++rep.rows;
        }
    }
    log << rep.rows << " observations checked, " << rep.undefined << " skipped (c = 0), max |diff| "
        << rep.max_abs_diff << ", max |delta| " << rep.max_abs_delta << '\n';
    return rep;
}

}  // namespace chainmp::experiment
