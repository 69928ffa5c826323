// Acceptance run: one PASS/FAIL line per criterion. Usage: acceptance <out_dir>

#include <Eigen/Eigenvalues>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "chainmp/bethegap.hpp"
#include "chainmp/experiment.hpp"

using namespace chainmp;
namespace fs = std::filesystem;
namespace ex = chainmp::experiment;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::map<int, Outcome> outcomes;

void report(int id, const Outcome& o) {
    std::cout << "  criterion " << id << (o.pass ? " passed" : " failed") << std::endl;
    outcomes[id] = o;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(4) << v;
    return s.str();
}

Tensor gaussian(ad::Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.normal();
    return t;
}

ExperimentConfig load(const char* name, const fs::path& out) {
    ExperimentConfig cfg = load_config(fs::path(CHAINMP_SOURCE_DIR) / "configs" / name);
    cfg.output_dir = out.string();
    cfg.threads = std::max(1u, std::thread::hardware_concurrency());
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// 1. Noisy-Bethe gap identity
// ---------------------------------------------------------------------------

Outcome gap_identity() {
    using namespace bethe;
    Rng rng(2024);
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::size_t undefined = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t K = 2 + rng.below(5);
        const auto ch = random_chain(K, rng);
        const Channels noise{random_channel(K, rng), random_channel(K, rng), random_channel(K, rng)};
        const Observation o{rng.below(K), rng.below(K), rng.below(K)};
        const auto cov = gap_covariance(ch, noise, o);
        if (!cov.defined) {
            ++undefined;
            continue;
        }
        worst = std::max(worst, std::abs(gap_direct(ch, noise, o).delta - cov.delta_formula));
    }
    const double elapsed = seconds_since(t0);
    double zero_noise = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t K = 2 + rng.below(5);
        const auto ch = random_chain(K, rng);
        const auto noise = same_channel(NoiseChannel::identity(K));
        for (const auto& o : all_observations(K))
            zero_noise = std::max(zero_noise, std::abs(gap_direct(ch, noise, o).delta));
    }
    return {worst < 1e-12 && undefined == 0 && elapsed < 5.0 && zero_noise < 1e-14,
            "max |direct - Z cov| = " + fmt(worst) + " in " + fmt(elapsed) + " s; zero-noise max |delta| = " +
                fmt(zero_noise)};
}

// ---------------------------------------------------------------------------
// 2. Autodiff against central differences
// ---------------------------------------------------------------------------

using Program = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

double evaluate(const Program& program, const std::vector<Tensor>& inputs) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    return program(tape, vars).value().item();
}

/// Relative error of the tape gradient of `live` against central differences
/// of `oracle`, which sees the same inputs.
double relative_error(const Program& live, const Program& oracle, const std::vector<Tensor>& inputs) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    const auto grads = tape.backward(live(tape, leaves), leaves);
    const double h = 1e-5;
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        for (std::size_t k = 0; k < inputs[i].size(); ++k) {
            auto plus = inputs, minus = inputs;
            plus[i][k] += h;
            minus[i][k] -= h;
            const double num = (evaluate(oracle, plus) - evaluate(oracle, minus)) / (2 * h);
            diff += (grads[i][k] - num) * (grads[i][k] - num);
            norm += num * num;
        }
    return std::sqrt(diff) / std::max(std::sqrt(norm), 1e-10);
}

Tensor uniform(ad::Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
    return t;
}

Outcome gradient_suite() {
    double nets = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(1000 + seed);
        const std::size_t hidden = 3 + rng.below(6);
        const bool use_tanh = rng.uniform() < 0.5;
        const std::vector<Tensor> inputs{uniform({2, 8}, rng), uniform({8, hidden}, rng), uniform({hidden}, rng),
                                         uniform({hidden, 2}, rng), uniform({2}, rng)};
        const Program net = [use_tanh](ad::Tape&, const std::vector<ad::Var>& v) {
            ad::Var h = ad::add_bias(ad::matmul(v[0], v[1]), v[2]);
            h = use_tanh ? ad::tanh(h) : ad::silu(h);
            return ad::mean(ad::square(ad::add_bias(ad::matmul(h, v[3]), v[4])));
        };
        nets = std::max(nets, relative_error(net, net, inputs));
    }

    // stop-gradient copies are frozen at the base point in the oracle
    double comps = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(5000 + seed);
        const double gamma = rng.uniform(0.2, 1.0);
        const int kind = static_cast<int>(seed % 4);
        const std::vector<Tensor> inputs{uniform({3, 2}, rng), uniform({3, 2}, rng), uniform({2, 2}, rng)};
        auto composed = [kind, gamma](const ad::Var& a, const ad::Var& b, const ad::Var& w, const ad::Var& a_sg,
                                      const ad::Var& b_sg) {
            const ad::Var fa = ad::tanh(ad::matmul(a, w));
            const ad::Var fa_sg = ad::tanh(ad::matmul(a_sg, w));
            switch (kind) {
                case 0: return ad::add(ad::sum(ad::square(ad::sub(fa_sg, b))), ad::scale(ad::sum(ad::square(a)), gamma));
                case 1: return ad::add(ad::scale(ad::sum(ad::square(ad::sub(b_sg, fa))), gamma),
                                       ad::sum(ad::square(ad::sub(a, b_sg))));
                case 2: return ad::add(ad::l2norm(ad::sub(ad::select_rows(fa_sg, {0}), ad::select_rows(b, {2}))),
                                       ad::mean(ad::silu(ad::mul(a, b_sg))));
                default: return ad::sum(ad::mul(ad::sqrt(ad::add(ad::square(a), ad::square(b_sg))), ad::scale(fa_sg, gamma)));
            }
        };
        const Program live = [&](ad::Tape&, const std::vector<ad::Var>& v) {
            return composed(v[0], v[1], v[2], ad::stop_gradient(v[0]), ad::stop_gradient(v[1]));
        };
        const Program oracle = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
            return composed(v[0], v[1], v[2], t.constant(inputs[0]), t.constant(inputs[1]));
        };
        comps = std::max(comps, relative_error(live, oracle, inputs));
    }
    return {nets < 1e-4 && comps < 1e-4,
            "100 nets max rel err " + fmt(nets) + "; 20 stop-gradient compositions max rel err " + fmt(comps)};
}

// ---------------------------------------------------------------------------
// 4-6. Message and schedule fixtures
// ---------------------------------------------------------------------------

const FactorChain kScalarPair(2, 3, 1, {0.0}, {1.0});

Outcome sync_system() {
    Rng rng(5);
    double asym = 0.0, min_eig = 0.0, consistent = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.below(6), F = 2 + rng.below(4), d = 1 + rng.below(3);
        const FactorChain c(n, F, d, rng.normal_vector(d), rng.normal_vector(d));
        std::vector<double> var;
        if (trial % 2) {
            var.resize(n + 1);
            for (auto& v : var) v = rng.uniform(0.1, 5.0);
        }
        const auto sys = build_sync_system(c, var);
        const std::size_t N = sys.size();
        Eigen::MatrixXd P(N, N);
        for (std::size_t r = 0; r < N; ++r)
            for (std::size_t k = 0; k < N; ++k) P(r, k) = sys.precision.at(r, k);
        asym = std::max(asym, (P - P.transpose()).cwiseAbs().maxCoeff());
        min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(P).eigenvalues().minCoeff());

        Tensor plan = gaussian({c.m(), d}, rng);
        for (std::size_t k = 0; k < d; ++k) {
            plan[k] = c.start[k];
            plan[(c.m() - 1) * d + k] = c.goal[k];
        }
        ad::Tape tape;
        consistent = std::max(consistent, std::abs(sync_loss(sys, tape.constant(split_plan(c, plan))).value().item()));
    }
    ad::Tape tape;
    const Tensor x = Tensor::vector({0.0, 0.123, 0.5, 0.7, -0.4, 1.0}).reshaped({2, 3, 1});
    const double fixture = sync_loss(build_sync_system(kScalarPair), tape.constant(x)).value().item();
    return {asym == 0.0 && min_eig >= -1e-10 && consistent == 0.0 && std::abs(fixture - 0.08) <= 1e-12,
            "max asymmetry " + fmt(asym) + ", min eigenvalue " + fmt(min_eig) + ", consistent loss " +
                fmt(consistent) + ", fixture " + fmt(fixture)};
}

Outcome async_fixture() {
    const Tensor x = Tensor::vector({0.0, 0.25, 0.5, 0.6, 0.75, 1.0}).reshaped({2, 3, 1});
    ad::Tape fixture_tape;
    const double value =
        async_loss({0.6}, fixture_tape.constant(x), fixture_tape.constant(x), kScalarPair).value().item();

    Rng rng(13);
    double latest_grad = 0.0, ema_grad = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + rng.below(6), F = 2 + rng.below(4), d = 1 + rng.below(3);
        const FactorChain c(n, F, d, rng.normal_vector(d), rng.normal_vector(d));
        ad::Tape tape;
        const ad::Var ema = tape.leaf(gaussian(c.chunk_shape(), rng)), latest = tape.leaf(gaussian(c.chunk_shape(), rng));
        const auto g = tape.backward(async_loss({0.6, trial % 2 == 0}, ema, latest, c), {ema, latest});
        for (double v : g[1].data()) latest_grad = std::max(latest_grad, std::abs(v));
        for (double v : g[0].data()) ema_grad = std::max(ema_grad, std::abs(v));
    }
    return {std::abs(value - 0.012) <= 1e-12 && latest_grad == 0.0 && ema_grad > 0.0,
            "fixture " + fmt(value) + ", max |dL/dlatest| " + fmt(latest_grad)};
}

Outcome ddim_round_trip() {
    const auto s = build_linear_schedule(500, 1e-4, 0.02, 0.0);
    Rng rng(42);
    double worst = 0.0;
    for (int steps : {1, 7, 50, 300, 500}) {
        for (int rep = 0; rep < 5; ++rep) {
            const Tensor x0 = gaussian({9, 2}, rng);
            Tensor x = noise_forward(s, x0, 500, gaussian({9, 2}, rng));
            for (const auto& p : s.strided(steps)) x = ddim_mu(s, x, x0, p.t, p.prev);
            for (std::size_t k = 0; k < x.size(); ++k) worst = std::max(worst, std::abs(x[k] - x0[k]));
        }
    }
    return {worst < 1e-8, "max reconstruction error " + fmt(worst)};
}

// ---------------------------------------------------------------------------
// Trained runs
// ---------------------------------------------------------------------------

struct GuidedAudit {
    double max_sphere_dev = 0.0;
    std::size_t runs = 0;
    std::size_t nfe_mismatch = 0;

    void add(const ex::RunResult& r) {
        if (r.sampler != "guided") return;
        ++runs;
        max_sphere_dev = std::max(max_sphere_dev, r.max_sphere_dev);
        nfe_mismatch += r.nfe_chunk == 2L * r.steps ? 0 : 1;
    }
};

ex::Models train(const ExperimentConfig& cfg, const NoiseSchedule& schedule, bool boundary) {
    const Tensor data = ex::training_chunks(cfg);
    const auto t0 = Clock::now();
    std::cout << "  training " << to_string(cfg.task) << " chunk model (" << cfg.model.train_steps << " steps)"
              << std::endl;
    ex::Models m;
    m.chunk = ex::train_model(cfg.model.denoiser, data, cfg.model, schedule, cfg.model.train_seed).pair;
    if (boundary) {
        std::cout << "  training boundary model" << std::endl;
        m.boundary = ex::train_model(cfg.model.denoiser, ex::boundary_frames(data), cfg.model, schedule,
                                     cfg.model.train_seed + 1)
                         .pair.ema;
        m.has_boundary = true;
    }
    std::cout << "  trained in " << fmt(seconds_since(t0)) << " s" << std::endl;
    return m;
}

std::vector<ex::RunResult> sweep(const ExperimentConfig& cfg, const ex::Models& models, const NoiseSchedule& schedule,
                                 const std::vector<ex::TaskInstance>& tasks, const ex::RunSpec& base) {
    const std::size_t jobs = tasks.size() * cfg.seeds.size();
    std::vector<ex::RunResult> out(jobs);
    ex::parallel_for(jobs, cfg.threads, [&](std::size_t j) {
        const auto& task = tasks[j / cfg.seeds.size()];
        ex::RunSpec spec = base;
        spec.seed = cfg.seeds[j % cfg.seeds.size()];
        out[j] = ex::summarize(task, spec, ex::run_sampler(models, task.chain, schedule, spec));
    });
    return out;
}

void write_runs(const fs::path& path, const char* task, const std::vector<ex::RunResult>& runs) {
    auto out = io::open_out(path);
    out << ex::kSummaryHeader << '\n';
    for (const auto& r : runs) ex::write_summary_row(out, task, r);
}

std::vector<double> residuals(const std::vector<ex::RunResult>& runs) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.metrics.max_residual());
    return v;
}

double success_rate(const std::vector<ex::RunResult>& runs) {
    std::size_t ok = 0;
    for (const auto& r : runs) ok += r.metrics.success ? 1 : 0;
    return runs.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(runs.size());
}

Outcome arcs(const fs::path& out, GuidedAudit& audit) {
    const ExperimentConfig cfg = load("arcs_diffcollage.ini", out / "arcs");
    const NoiseSchedule schedule = cfg.schedule.build();
    const ex::Models models = train(cfg, schedule, true);
    const auto tasks = ex::task_instances(cfg);
    const double chord = ex::characteristic_length(cfg);

    ex::RunSpec spec = ex::RunSpec::from(cfg.sampler, 0);
    spec.kind = SamplerKind::guided;
    const auto guided = sweep(cfg, models, schedule, tasks, spec);
    spec.kind = SamplerKind::diffcollage;
    const auto collage = sweep(cfg, models, schedule, tasks, spec);
    spec.anchor_replace = true;
    const auto anchored = sweep(cfg, models, schedule, tasks, spec);
    spec.kind = SamplerKind::independent;
    spec.anchor_replace = false;
    const auto independent = sweep(cfg, models, schedule, tasks, spec);

    for (const auto& r : guided) audit.add(r);
    std::vector<ex::RunResult> all = guided;
    all.insert(all.end(), collage.begin(), collage.end());
    all.insert(all.end(), anchored.begin(), anchored.end());
    all.insert(all.end(), independent.begin(), independent.end());
    write_runs(out / "arcs_runs.csv", "arcs", all);

    const double g = ex::median(residuals(guided)), c = ex::median(residuals(collage));
    std::cout << "  info: arcs median residual diffcollage+anchor " << fmt(ex::median(residuals(anchored)))
              << ", independent " << fmt(ex::median(residuals(independent))) << std::endl;
    auto transitions = [](const std::vector<ex::RunResult>& runs) {
        std::vector<double> v;
        for (const auto& r : runs) v.push_back(r.metrics.max_transition_err);
        return ex::median(v);
    };
    auto smooth = [](const std::vector<ex::RunResult>& runs) {
        std::vector<double> v;
        for (const auto& r : runs) v.push_back(r.metrics.smoothness);
        return ex::median(v);
    };
    std::cout << "  info: arcs median transition error guided " << fmt(transitions(guided)) << ", diffcollage "
              << fmt(transitions(collage)) << ", diffcollage+anchor " << fmt(transitions(anchored)) << std::endl;
    std::cout << "  info: arcs median smoothness guided " << fmt(smooth(guided)) << ", diffcollage "
              << fmt(smooth(collage)) << ", diffcollage+anchor " << fmt(smooth(anchored)) << std::endl;
    return {g <= 0.05 * chord && c >= 3.0 * g,
            "guided median " + fmt(g) + " (limit " + fmt(0.05 * chord) + "), diffcollage median " + fmt(c) + " (" +
                fmt(c / g) + "x) over " + std::to_string(guided.size()) + " seeds"};
}

void segments(const fs::path& out, GuidedAudit& audit) {
    ExperimentConfig cfg = load("segments.ini", out / "segments");
    const NoiseSchedule schedule = cfg.schedule.build();
    const ex::Models models = train(cfg, schedule, false);

    // 8: message ablation over every start-goal pair
    cfg.segments.pairs = PairSplit::all;
    const auto t0 = Clock::now();
    const ex::AblationResult ab = ex::run_ablation(cfg, models, schedule);
    for (const auto& r : ab.runs) audit.add(r);
    write_runs(out / "ablation_runs.csv", "segments", ab.runs);
    {
        auto csv = io::open_out(out / "ablation_cells.csv");
        csv << "scheme,steps,runs,median_residual,mean_residual,success_rate\n";
        for (const auto& c : ab.cells) {
            csv << c.scheme << ',' << c.steps << ',' << c.runs << ',' << io::fmt(c.median_residual) << ','
                << io::fmt(c.mean_residual) << ',' << io::fmt(c.success_rate) << '\n';
            std::cout << "  info: " << c.scheme << " steps " << c.steps << " median " << fmt(c.median_residual)
                      << " success " << fmt(c.success_rate) << std::endl;
        }
    }
    const double sweep_seconds = seconds_since(t0);
    const int lo = cfg.ablation.steps.front(), hi = cfg.ablation.steps.back();
    const double joint = ab.cell("joint", hi).median_residual, sync = ab.cell("sync", hi).median_residual,
                 async = ab.cell("async", hi).median_residual, joint_lo = ab.cell("joint", lo).median_residual;
    report(8, {joint <= sync && joint <= async && joint <= joint_lo && sweep_seconds < 1800.0,
               "at " + std::to_string(hi) + " steps joint " + fmt(joint) + ", sync " + fmt(sync) + ", async " +
                   fmt(async) + "; joint at " + std::to_string(lo) + " steps " + fmt(joint_lo) + "; sweep " +
                   fmt(sweep_seconds) + " s, " + std::to_string(ab.cells.front().runs) + " runs per cell"});

    // 9: OOD pairs only, same IND-trained checkpoint
    cfg.segments.pairs = PairSplit::ood;
    const auto tasks = ex::task_instances(cfg);
    ex::RunSpec spec = ex::RunSpec::from(cfg.sampler, 0);
    spec.kind = SamplerKind::guided;
    const auto guided = sweep(cfg, models, schedule, tasks, spec);
    spec.kind = SamplerKind::independent;
    const auto independent = sweep(cfg, models, schedule, tasks, spec);
    for (const auto& r : guided) audit.add(r);
    std::vector<ex::RunResult> all = guided;
    all.insert(all.end(), independent.begin(), independent.end());
    write_runs(out / "ood_runs.csv", "segments", all);
    const double g = success_rate(guided), i = success_rate(independent);
    report(9, {g >= 0.6 && i < 0.2,
               "OOD success guided " + fmt(100 * g) + "%, independent " + fmt(100 * i) + "% over " +
                   std::to_string(guided.size()) + " pair-seed runs"});
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: acceptance <out_dir>\n";
        return 1;
    }
    const fs::path out = argv[1];
    fs::create_directories(out);
    try {
        report(1, gap_identity());
        report(2, gradient_suite());
        report(4, sync_system());
        report(5, async_fixture());
        report(6, ddim_round_trip());

        GuidedAudit audit;
        report(7, arcs(out, audit));
        segments(out, audit);
        report(3, {audit.runs > 0 && audit.max_sphere_dev < 1e-6,
                   "max sphere deviation " + fmt(audit.max_sphere_dev) + " over " + std::to_string(audit.runs) +
                       " full guided runs"});
        report(10, {audit.runs > 0 && audit.nfe_mismatch == 0,
                    std::to_string(audit.runs - audit.nfe_mismatch) + "/" + std::to_string(audit.runs) +
                        " guided runs report nfe_chunk = 2 x steps"});
    } catch (const std::exception& e) {
        std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
        return 2;
    }
    int failures = 0;
    std::ostringstream lines;
    for (const auto& [id, o] : outcomes) {
        lines << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << o.detail << '\n';
        failures += o.pass ? 0 : 1;
    }
    lines << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << '\n';
    std::cout << lines.str() << std::flush;
    io::open_out(out / "report.txt") << lines.str();
    return failures == 0 ? 0 : 1;
}
