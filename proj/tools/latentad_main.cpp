#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "latentad/pipeline.hpp"

namespace fs = std::filesystem;
using namespace latentad;

namespace {

struct GlobalFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::string out;
};

// Flags override the file; --out redirects whatever the subcommand writes.
cli::PipelineConfig resolve(const GlobalFlags& g) {
    cli::PipelineConfig cfg = g.config.empty() ? cli::PipelineConfig{} : cli::load_config(g.config);
    if (g.seed) {
        cfg.seed = *g.seed;
        cfg.sampler.seed = *g.seed;
    }
    if (g.workers) cfg.workers = *g.workers;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latentad: weakly supervised 3D anomaly detection with latent diffusion"};
    app.require_subcommand(1);
    GlobalFlags g;
    app.add_option("--config", g.config, "Configuration file (sectioned key = value)")
        ->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Global seed, overrides [global] seed and [sampler] seed");
    app.add_option("--workers", g.workers, "Case-level worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", g.out, "Output directory of the subcommand");

    auto* gen = app.add_subcommand("gen-data", "Generate a phantom dataset and manifest");
    std::optional<int> n_cases;
    gen->add_option("-n,--cases", n_cases, "Number of cases")->check(CLI::NonNegativeNumber);

    auto* train = app.add_subcommand("train", "Train one model stage");
    std::string stage;
    bool resume = false;
    train->add_option("stage", stage, "codec, denoiser or classifier")->required();
    train->add_flag("--resume", resume, "Continue from the existing checkpoint");

    auto* detect = app.add_subcommand("detect", "Run detection on the dataset");
    std::vector<std::string> case_ids;
    detect->add_option("--case", case_ids, "Restrict to these case ids");

    auto* evalc = app.add_subcommand("eval", "Score predictions against reference masks");
    std::string pred_dir, ref_dir;
    evalc->add_option("--pred", pred_dir, "Directory with <id>_pred.vol (default: [paths] output)");
    evalc->add_option("--ref", ref_dir, "Directory with <id>_truth.vol (default: [paths] data)");

    auto* sweepc = app.add_subcommand("sweep", "Grid search over noise level and guidance scale");

    CLI11_PARSE(app, argc, argv);

    try {
        cli::PipelineConfig cfg = resolve(g);
        std::ostream& log = std::cerr;
        if (gen->parsed()) {
            if (n_cases) cfg.cases = *n_cases;
            if (!g.out.empty()) cfg.paths.data = g.out;
            return cli::cmd_gen_data(cfg, log);
        }
        if (train->parsed()) {
            if (!g.out.empty()) cfg.paths.models = g.out;
            return cli::cmd_train(cfg, cli::parse_stage(stage), resume, log);
        }
        if (!g.out.empty()) cfg.paths.output = g.out;
        if (detect->parsed()) return cli::cmd_detect(cfg, case_ids, log);
        if (evalc->parsed()) {
            const fs::path pred = pred_dir.empty() ? cfg.paths.output : fs::path(pred_dir);
            const fs::path ref = ref_dir.empty() ? cfg.paths.data : fs::path(ref_dir);
            return cli::cmd_eval(cfg, pred, ref, log);
        }
        if (sweepc->parsed()) return cli::cmd_sweep(cfg, log);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
