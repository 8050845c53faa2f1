#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "latentad/classifier.hpp"
#include "latentad/diffusion.hpp"
#include "latentad/evalkit.hpp"
#include "latentad/phantom.hpp"
#include "latentad/postprocess.hpp"
#include "latentad/vqcodec.hpp"

namespace latentad::cli {

struct CodecSection {
    vq::CodecConfig model;
    int iterations = 600;
    int batch_size = 4;
    double learning_rate = 2e-3;
    int restart_every = 100;
};

struct DenoiserSection {
    int timesteps = 1000;
    int base_channels = 16;
    int levels = 2;
    int iterations = 3000;
    int batch_size = 8;
    double learning_rate = 1e-3;
    int t_max = 1000;
};

struct ClassifierSection {
    int base_channels = 8;
    int levels = 2;
    int epochs = 20;
    int batch_size = 8;
    double learning_rate = 1e-3;
    int patience = 5;
    int t_max = 600;
    double validation_fraction = 0.2;
};

struct EvalSection {
    double iou_threshold = 0.2;
    std::vector<double> bin_edges_cm{2.0, 4.0, 7.0};

    std::vector<eval::SizeBin> bins() const;
};

struct SweepSection {
    std::vector<int> levels{250, 500};
    std::vector<double> scales{0.0, 1600.0, 1800.0};
    int cases = 0;  // 0 = all cases of the dataset
};

struct PathsSection {
    std::filesystem::path data = "data";
    std::filesystem::path models = "models";
    std::filesystem::path output = "out";
};

/// Flat sectioned key=value configuration. Relative paths resolve against the config file.
struct PipelineConfig {
    std::uint64_t seed = 1;
    int workers = 1;
    int cases = 20;  // gen-data case count
    phantom::PhantomConfig phantom;
    CodecSection codec;
    DenoiserSection denoiser;
    ClassifierSection classifier;
    diffusion::SamplerConfig sampler;
    Vec3 patch_mm{24.0, 24.0, 32.0};
    post::PostprocessConfig postprocess;
    EvalSection eval;
    SweepSection sweep;
    PathsSection paths;

    void validate() const;
};

/// Unknown sections or keys, malformed values and duplicates are errors naming the line.
PipelineConfig parse_config(std::istream& is, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);
/// Writes every key; parse_config(write_config(c)) reproduces c.
void write_config(std::ostream& os, const PipelineConfig& cfg);

/// Trained models shared read-only across cases. Each worker takes its own Models copy
/// because networks cache activations during forward passes.
struct Models {
    std::optional<vq::VqCodec> codec;
    std::optional<nn::Network> denoiser;
    std::optional<nn::Network> classifier;
    diffusion::NoiseSchedule schedule;
};

/// Loads the checkpoints the sampler config needs; throws naming the missing artifact.
Models load_models(const PipelineConfig& cfg, bool need_classifier);

std::filesystem::path codec_path(const PipelineConfig& cfg);
std::filesystem::path denoiser_path(const PipelineConfig& cfg);
std::filesystem::path classifier_path(const PipelineConfig& cfg);

struct CaseResult {
    std::string case_id;
    Volume image;
    Volume reconstruction;
    Volume anomaly;
    BinaryMask roi;
    post::ComponentSet candidates;
};

/// Patches at the ROI centres -> healthy reconstruction -> anomaly patches -> full map ->
/// candidates. The reconstruction keeps the input outside the patches.
CaseResult detect_case(const std::string& case_id, const Volume& image,
                       const std::vector<Vec3>& roi_centers_mm, const PipelineConfig& cfg,
                       const diffusion::SamplerConfig& sampler, Models& models);

/// The codec-only baseline: anomaly = |x - decode(encode(x))|, i.e. L = 0.
diffusion::SamplerConfig baseline_sampler(const diffusion::SamplerConfig& sampler);

/// Seed of one trajectory, derived from the sampler seed, case id and kidney index.
std::uint64_t trajectory_seed(std::uint64_t seed, const std::string& case_id, int side);

/// Input | reconstruction | anomaly | prediction mid-slices (axial, z = nz/2) as 8-bit PGM.
void write_montage(const std::filesystem::path& path, const CaseResult& r);

struct TrainLog {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    void write_csv(const std::filesystem::path& path) const;
};

// Subcommands. Each returns the process exit code and reports progress on `log`.
int cmd_gen_data(const PipelineConfig& cfg, std::ostream& log);
enum class Stage { Codec, Denoiser, Classifier };
Stage parse_stage(const std::string& text);
int cmd_train(const PipelineConfig& cfg, Stage stage, bool resume, std::ostream& log);
/// Runs detection on every case of the manifest (or the listed case ids).
int cmd_detect(const PipelineConfig& cfg, const std::vector<std::string>& case_ids,
               std::ostream& log);
int cmd_eval(const PipelineConfig& cfg, const std::filesystem::path& pred_dir,
             const std::filesystem::path& ref_dir, std::ostream& log);
int cmd_sweep(const PipelineConfig& cfg, std::ostream& log);

/// Training entry points used by cmd_train; they return the log written as CSV.
TrainLog train_codec(vq::VqCodec& codec, const std::vector<Volume>& patches,
                     const CodecSection& cfg, std::uint64_t seed, std::ostream* log = nullptr);
TrainLog train_denoiser(nn::Network& net, const std::vector<nn::Tensor>& latents,
                        const diffusion::NoiseSchedule& schedule, const DenoiserSection& cfg,
                        std::uint64_t seed, std::ostream* log = nullptr);

/// Kidney patches of every case in the manifest, with the weak label of their case.
struct PatchSet {
    std::vector<Volume> patches;
    std::vector<phantom::CaseLabel> labels;
    std::vector<std::size_t> case_index;
};
PatchSet collect_patches(const std::vector<phantom::ManifestRow>& rows, const Vec3& patch_mm);

/// Quantized latents normalised by the codec's latent statistics.
nn::Tensor normalized_latent(vq::VqCodec& codec, const Volume& patch);

}  // namespace latentad::cli
