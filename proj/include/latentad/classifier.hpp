#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "latentad/diffusion.hpp"
#include "latentad/nn/network.hpp"
#include "latentad/phantom.hpp"

namespace latentad::classifier {

/// Time-conditioned encoder trunk + global pool + 2-logit head (index 0 = healthy).
nn::ArchSpec classifier_spec(int channels, int base_channels, int levels, std::uint64_t seed);

/// Softmax probability of the healthy class. t must lie in [0, T].
double classify(nn::Network& clf, const nn::Tensor& z_t, int t, const diffusion::NoiseSchedule& s);

/// Exact gradient of log p(target | z_t, t) with respect to z_t. Leaves parameter
/// gradients cleared.
nn::Tensor input_gradient(nn::Network& clf, const nn::Tensor& z_t, int t,
                          phantom::CaseLabel target = phantom::CaseLabel::Healthy);

/// Mann-Whitney AUC of scores against binary labels (1 = positive); ties count 1/2.
double auc(std::span<const double> scores, std::span<const int> labels);

struct Example {
    nn::Tensor latent;
    phantom::CaseLabel label = phantom::CaseLabel::Healthy;
};

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    double val_auc = 0.0;
    double val_loss = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    double best_auc = 0.0;
    bool stopped_early = false;
};

/// Down-samples the majority class so both classes have equal counts.
std::vector<Example> balance(std::span<const Example> data, Rng& rng);

/// Cross-entropy training on noised latents, t uniform in [0, t_max] per example.
/// Stops after `patience` epochs without improvement and restores the best parameters;
/// an epoch improves on higher validation AUC, or equal AUC with lower validation loss. Validation noise and timesteps are drawn once, so epochs compare fairly.
TrainReport train_classifier(nn::Network& clf, std::span<const Example> train,
                             std::span<const Example> validation,
                             const diffusion::NoiseSchedule& schedule, int t_max,
                             const nn::TrainConfig& cfg);

/// Columns: epoch, loss, val_auc, val_loss.
void write_report_csv(const std::filesystem::path& path, const TrainReport& report);

/// Guidance toward the healthy class through a classifier network.
class ClassifierGuidance final : public diffusion::GuidanceSource {
public:
    explicit ClassifierGuidance(nn::Network& clf) : clf_(clf) {}
    nn::Tensor grad_log_healthy(const nn::Tensor& x_t, int t) override {
        return input_gradient(clf_, x_t, t);
    }

private:
    nn::Network& clf_;
};

}  // namespace latentad::classifier
