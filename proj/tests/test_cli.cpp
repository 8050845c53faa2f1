#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "latentad/pipeline.hpp"
#include "latentad/vol_io.hpp"

using namespace latentad;
using namespace latentad::cli;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

// A scratch directory with a tiny configuration that trains in seconds.
struct Workspace {
    fs::path root;
    PipelineConfig cfg;
    std::ostringstream log;

    explicit Workspace(const std::string& name) {
        root = fs::temp_directory_path() / ("latentad_cli_" + name);
        fs::remove_all(root);
        fs::create_directories(root);
        cfg.paths = {root / "data", root / "models", root / "out"};
        cfg.cases = 6;
        cfg.seed = 1;
        cfg.codec.model.base_channels = 4;
        cfg.codec.model.codebook_size = 16;
        cfg.codec.iterations = 3;
        cfg.codec.batch_size = 2;
        cfg.denoiser.base_channels = 4;
        cfg.denoiser.levels = 1;
        cfg.denoiser.iterations = 3;
        cfg.denoiser.batch_size = 2;
        cfg.classifier.base_channels = 4;
        cfg.classifier.levels = 1;
        cfg.classifier.epochs = 1;
        cfg.classifier.validation_fraction = 0.5;
        cfg.sampler.level = 100;
        cfg.sampler.stride = 50;
        cfg.sweep.levels = {100};
        cfg.sweep.scales = {0.0};
    }
    ~Workspace() { fs::remove_all(root); }
};

}  // namespace

TEST_CASE("config round-trips through its text form") {
    PipelineConfig c;
    c.seed = 99;
    c.sampler.mode = diffusion::SamplerMode::DDPM;
    c.sampler.guidance_scale = 1800.0;
    c.postprocess.fixed_threshold = 0.125;
    c.sweep.scales = {0.0, 1600.0};
    c.patch_mm = {20.0, 22.5, 30.0};
    c.paths.data = "/abs/data";
    std::ostringstream os;
    write_config(os, c);
    std::istringstream is(os.str());
    const PipelineConfig back = parse_config(is);
    std::ostringstream again;
    write_config(again, back);
    CHECK(again.str() == os.str());
    CHECK(back.sampler.mode == diffusion::SamplerMode::DDPM);
    CHECK(*back.postprocess.fixed_threshold == 0.125);
}

TEST_CASE("config parse errors name the line") {
    auto error_of = [](const std::string& text) {
        std::istringstream is(text);
        try {
            parse_config(is);
        } catch (const std::invalid_argument& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(error_of("seed = 3\n[sampler]\nLL = 5\n").find("line 3") != std::string::npos);
    CHECK(error_of("[nope]\n").find("unknown section") != std::string::npos);
    CHECK(error_of("[sampler]\nL = 5\nL = 6\n").find("duplicate") != std::string::npos);
    CHECK(error_of("[sampler]\nL = five\n").find("line 2") != std::string::npos);
    CHECK(error_of("[sampler]\nL = 2000\n").find("L must be in") != std::string::npos);
    std::istringstream relative("[paths]\ndata = d\n");
    CHECK(parse_config(relative, "/base").paths.data == fs::path("/base/d"));
    std::istringstream comments("# a comment\n\n[sampler] ; trailing\nmode = ddpm\n");
    CHECK(parse_config(comments).sampler.mode == diffusion::SamplerMode::DDPM);
}

TEST_CASE("gen-data is deterministic and handles zero cases") {
    Workspace ws("gen");
    ws.cfg.cases = 0;
    REQUIRE(cmd_gen_data(ws.cfg, ws.log) == 0);
    CHECK(phantom::read_manifest(ws.cfg.paths.data / "manifest.csv").empty());

    ws.cfg.cases = 3;
    ws.cfg.paths.data = ws.root / "a";
    REQUIRE(cmd_gen_data(ws.cfg, ws.log) == 0);
    ws.cfg.paths.data = ws.root / "b";
    REQUIRE(cmd_gen_data(ws.cfg, ws.log) == 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(ws.root / "a")) {
        const auto name = e.path().filename();
        CHECK(slurp(e.path()) == slurp(ws.root / "b" / name));
        ++files;
    }
    CHECK(files == 7);
}

TEST_CASE("training stages: budget zero, resume and missing prerequisites") {
    Workspace ws("train");
    CHECK_THROWS_WITH_AS(cmd_train(ws.cfg, Stage::Codec, false, ws.log),
                         doctest::Contains("dataset manifest"), std::runtime_error);
    REQUIRE(cmd_gen_data(ws.cfg, ws.log) == 0);
    CHECK_THROWS_WITH_AS(cmd_train(ws.cfg, Stage::Denoiser, false, ws.log),
                         doctest::Contains("codec checkpoint"), std::runtime_error);
    REQUIRE(cmd_train(ws.cfg, Stage::Codec, false, ws.log) == 0);
    CHECK(fs::exists(ws.root / "models" / "codec_train.csv"));

    SUBCASE("budget zero saves the initialisation") {
        ws.cfg.denoiser.iterations = 0;
        REQUIRE(cmd_train(ws.cfg, Stage::Denoiser, false, ws.log) == 0);
        std::ifstream is(denoiser_path(ws.cfg), std::ios::binary);
        nn::Network saved = nn::load_network(is);
        nn::Network init(diffusion::denoiser_spec(ws.cfg.codec.model.latent_dim,
                                                  ws.cfg.denoiser.base_channels,
                                                  ws.cfg.denoiser.levels, mix_seed(ws.cfg.seed, 2)));
        CHECK(saved.flat_parameters() == init.flat_parameters());
        CHECK(saved.adam().step == 0);
    }
    SUBCASE("resume continues the step counter") {
        REQUIRE(cmd_train(ws.cfg, Stage::Denoiser, false, ws.log) == 0);
        REQUIRE(cmd_train(ws.cfg, Stage::Denoiser, true, ws.log) == 0);
        std::ifstream is(denoiser_path(ws.cfg), std::ios::binary);
        CHECK(nn::load_network(is).adam().step == 6);
        const std::string csv = slurp(ws.root / "models" / "denoiser_train.csv");
        CHECK(csv.rfind("step,loss\n4,", 0) == 0);
    }
    SUBCASE("classifier trains after the codec") {
        REQUIRE(cmd_train(ws.cfg, Stage::Classifier, false, ws.log) == 0);
        CHECK(fs::exists(classifier_path(ws.cfg)));
        CHECK(slurp(ws.root / "models" / "classifier_train.csv").rfind("epoch,loss,val_auc", 0) == 0);
    }
    SUBCASE("training reruns give byte-identical checkpoints") {
        REQUIRE(cmd_train(ws.cfg, Stage::Denoiser, false, ws.log) == 0);
        REQUIRE(cmd_train(ws.cfg, Stage::Classifier, false, ws.log) == 0);
        PipelineConfig again = ws.cfg;
        again.paths.models = ws.root / "models_again";
        for (Stage st : {Stage::Codec, Stage::Denoiser, Stage::Classifier}) {
            REQUIRE(cmd_train(again, st, false, ws.log) == 0);
        }
        for (const auto& e : fs::directory_iterator(ws.cfg.paths.models)) {
            CHECK_MESSAGE(slurp(e.path()) == slurp(again.paths.models / e.path().filename()),
                          e.path().filename().string());
        }
    }
    CHECK_THROWS(parse_stage("decoder"));
}

TEST_CASE("detect: missing checkpoints and byte-identical reruns") {
    Workspace ws("detect");
    REQUIRE(cmd_gen_data(ws.cfg, ws.log) == 0);
    CHECK_THROWS_WITH_AS(cmd_detect(ws.cfg, {}, ws.log), doctest::Contains("codec checkpoint"),
                         std::runtime_error);
    REQUIRE(cmd_train(ws.cfg, Stage::Codec, false, ws.log) == 0);
    CHECK_THROWS_WITH_AS(cmd_detect(ws.cfg, {}, ws.log),
                         doctest::Contains("denoiser checkpoint"), std::runtime_error);
    REQUIRE(cmd_train(ws.cfg, Stage::Denoiser, false, ws.log) == 0);
    CHECK_THROWS_WITH(cmd_detect(ws.cfg, {"case_nope"}, ws.log), doctest::Contains("case_nope"));

    const auto rows = phantom::read_manifest(ws.cfg.paths.data / "manifest.csv");
    const std::string image_before = slurp(rows[0].image_path);
    ws.cfg.workers = 2;
    REQUIRE(cmd_detect(ws.cfg, {}, ws.log) == 0);
    std::map<std::string, std::string> first;
    for (const auto& e : fs::directory_iterator(ws.cfg.paths.output)) {
        first[e.path().filename().string()] = slurp(e.path());
    }
    CHECK(first.size() == rows.size() * 5);
    CHECK(first.count(rows[0].case_id + "_montage.pgm"));
    CHECK(first[rows[0].case_id + "_montage.pgm"].rfind("P5\n192 48\n255\n", 0) == 0);
    CHECK(slurp(rows[0].image_path) == image_before);

    ws.cfg.workers = 1;
    fs::remove_all(ws.cfg.paths.output);
    REQUIRE(cmd_detect(ws.cfg, {}, ws.log) == 0);
    for (const auto& [name, bytes] : first) {
        CHECK_MESSAGE(slurp(ws.cfg.paths.output / name) == bytes, name);
    }

    ws.cfg.sampler.mode = diffusion::SamplerMode::DDPM;
    for (const char* dir : {"ddpm_a", "ddpm_b"}) {
        ws.cfg.paths.output = ws.root / dir;
        REQUIRE(cmd_detect(ws.cfg, {}, ws.log) == 0);
    }
    for (const auto& e : fs::directory_iterator(ws.root / "ddpm_a")) {
        CHECK_MESSAGE(slurp(e.path()) == slurp(ws.root / "ddpm_b" / e.path().filename()),
                      e.path().filename().string());
    }

    const auto pred = io::load_mask(ws.cfg.paths.output / (rows[0].case_id + "_pred.vol"));
    CHECK(pred.geometry().dims == ws.cfg.phantom.grid_dims);
}

// Identity codec and an untrained denoiser whose output layer starts at zero: the DDIM round
// trip then returns the input, which is the healthy reconstruction of a healthy case.
TEST_CASE("healthy case through the oracle pipeline yields no candidates") {
    phantom::PhantomConfig pc;
    pc.lesion_probability = 0.0;
    pc.seed = 5;
    const auto cases = phantom::generate_dataset(pc, 1);
    PipelineConfig cfg;
    cfg.codec.model.identity = true;
    Models m;
    m.schedule = diffusion::make_schedule(cfg.denoiser.timesteps);
    m.codec.emplace(cfg.codec.model);
    m.denoiser.emplace(diffusion::denoiser_spec(1, 4, 1, 3));
    const auto& c = cases[0];
    const CaseResult r = detect_case("h", c.image, c.roi_centers_mm, cfg, cfg.sampler, m);
    double worst = 0.0;
    for (float v : r.anomaly.data()) worst = std::max(worst, double(v));
    CHECK(worst < 1e-4);
    CHECK(r.candidates.count() == 0);
}

TEST_CASE("eval: perfect predictions, empty predictions, orphans") {
    Workspace ws("eval");
    ws.cfg.phantom.lesion_probability = 1.0;
    REQUIRE(cmd_gen_data(ws.cfg, ws.log) == 0);
    const fs::path pred = ws.root / "pred";
    fs::create_directories(pred);
    const auto rows = phantom::read_manifest(ws.cfg.paths.data / "manifest.csv");
    for (const auto& r : rows) fs::copy_file(r.truth_path, pred / (r.case_id + "_pred.vol"));

    auto summary_all = [&] {
        std::ifstream is(ws.cfg.paths.output / "summary.csv");
        std::string line;
        std::getline(is, line);
        std::getline(is, line);
        return line;
    };
    REQUIRE(cmd_eval(ws.cfg, pred, ws.cfg.paths.data, ws.log) == 0);
    CHECK(summary_all() == "all,6,1,0,1,0,1,0,1,0");

    const fs::path none = ws.root / "none";
    fs::create_directories(none);
    REQUIRE(cmd_eval(ws.cfg, none, ws.cfg.paths.data, ws.log) == 0);
    CHECK(summary_all() == "all,6,0,0,0,0,0,0,0,0");
    CHECK(ws.log.str().find("scoring it as empty") != std::string::npos);

    fs::copy_file(rows[0].truth_path, pred / "case_ghost_pred.vol");
    std::ostringstream log;
    CHECK(cmd_eval(ws.cfg, pred, ws.cfg.paths.data, log) == 2);
    CHECK(log.str().find("case_ghost") != std::string::npos);
}

TEST_CASE("sweep writes the grid and a config with the winning cell") {
    Workspace ws("sweep");
    ws.cfg.cases = 2;
    REQUIRE(cmd_gen_data(ws.cfg, ws.log) == 0);
    REQUIRE(cmd_train(ws.cfg, Stage::Codec, false, ws.log) == 0);
    REQUIRE(cmd_train(ws.cfg, Stage::Denoiser, false, ws.log) == 0);
    REQUIRE(cmd_sweep(ws.cfg, ws.log) == 0);
    const std::string csv = slurp(ws.cfg.paths.output / "sweep.csv");
    CHECK(csv.rfind("mode,L,s,mean_dsc,sd_dsc\nddim,100,0,", 0) == 0);
    const PipelineConfig best = load_config(ws.cfg.paths.output / "config_best.ini");
    CHECK(best.sampler.level == 100);
    CHECK(best.sampler.guidance_scale == 0.0);
    CHECK(best.paths.data == ws.cfg.paths.data);
}

TEST_CASE("shipped config matches the built-in defaults") {
    PipelineConfig shipped = load_config(fs::path(LATENTAD_SOURCE_DIR) / "configs" / "default.ini");
    const PipelineConfig defaults;
    shipped.paths = defaults.paths;
    std::ostringstream a, b;
    write_config(a, shipped);
    write_config(b, defaults);
    CHECK(a.str() == b.str());
}
