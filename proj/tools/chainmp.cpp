#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "chainmp/config.hpp"
#include "chainmp/errors.hpp"
#include "chainmp/experiment.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 1, kNumerical = 2, kAcceptance = 3 };

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::size_t threads = 0;
};

chainmp::ExperimentConfig resolve(const Globals& g) {
    chainmp::ExperimentConfig cfg = g.config.empty() ? chainmp::ExperimentConfig{} : chainmp::load_config(g.config);
    if (g.seed) cfg.seeds = {*g.seed};
    if (!g.out.empty()) cfg.output_dir = g.out;
    if (g.threads > 0) cfg.threads = g.threads;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Compositional trajectory planning with message passing on Tweedie estimates"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "experiment config file")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "run a single seed instead of the configured list");
    app.add_option("--out", g.out, "output directory (overrides the config)");
    app.add_option("--threads", g.threads, "worker threads for seed fan-out");

    auto* train = app.add_subcommand("train", "train the chunk denoiser (and boundary model for diffcollage)");
    auto* compose = app.add_subcommand("compose", "sample plans for every task instance and seed");
    auto* ablate = app.add_subcommand("ablate", "sweep message schemes x sampling steps x seeds");
    auto* eval = app.add_subcommand("eval", "recompute metrics from written plan/chunk CSVs");
    auto* gap = app.add_subcommand("gap-verify", "check the noisy-Bethe gap identity by enumeration");

    chainmp::GapSettings gs;
    std::string gap_csv;
    gap->add_option("--K", gs.K, "alphabet size (2..6)")->capture_default_str();
    gap->add_option("--preset", gs.preset, "chain structure: random, sticky or uniform")->capture_default_str();
    gap->add_option("--stay", gs.stay, "stay probability of the sticky preset")->capture_default_str();
    gap->add_option("--strength", gs.strength, "flip-noise strength; negative draws random channels")
        ->capture_default_str();
    gap->add_option("--trials", gs.trials, "random instances (0: all observations of one instance)")
        ->capture_default_str();
    gap->add_option("--gap-seed", gs.seed, "seed for random instances")->capture_default_str();
    gap->add_option("--csv", gap_csv, "CSV path (default <out>/gap.csv)");

    CLI11_PARSE(app, argc, argv);

    try {
        chainmp::ExperimentConfig cfg = resolve(g);
        if (*train) {
            const auto s = chainmp::experiment::cmd_train(cfg, std::cout);
            std::cout << "checkpoint " << s.checkpoint.string() << " (loss " << s.first_loss << " -> " << s.last_loss
                      << ", sigma_data " << s.sigma_data << ")\n";
            if (!s.boundary_checkpoint.empty()) std::cout << "boundary checkpoint " << s.boundary_checkpoint.string() << '\n';
        } else if (*compose) {
            chainmp::experiment::cmd_compose(cfg, std::cout);
        } else if (*ablate) {
            chainmp::experiment::cmd_ablate(cfg, std::cout);
        } else if (*eval) {
            const auto rep = chainmp::experiment::cmd_eval(cfg, std::cout);
            if (rep.mismatches != 0) return kAcceptance;
        } else if (*gap) {
            if (!g.config.empty()) {
                // flags given on the command line take precedence over [gap]
                auto merged = cfg.gap;
                if (gap->count("--K")) merged.K = gs.K;
                if (gap->count("--preset")) merged.preset = gs.preset;
                if (gap->count("--stay")) merged.stay = gs.stay;
                if (gap->count("--strength")) merged.strength = gs.strength;
                if (gap->count("--trials")) merged.trials = gs.trials;
                if (gap->count("--gap-seed")) merged.seed = gs.seed;
                gs = merged;
            }
            if (g.seed) gs.seed = *g.seed;
            const auto path = gap_csv.empty() ? cfg.out() / "gap.csv" : std::filesystem::path(gap_csv);
            const auto rep = chainmp::experiment::cmd_gap_verify(gs, path, std::cout);
            if (!rep.passed()) {
                std::cerr << "gap identity violated: max |diff| = " << rep.max_abs_diff << '\n';
                return kAcceptance;
            }
        }
    } catch (const chainmp::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const chainmp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const chainmp::DimensionError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfig;
    }
    return kOk;
}
