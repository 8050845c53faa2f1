#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latentad/nn/network.hpp"
#include "latentad/rng.hpp"
#include "latentad/vqcodec.hpp"

namespace latentad::diffusion {

/// Arrays are indexed 0..T; index 0 holds beta 0 and alpha_bar 1.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    void check_t(int t) const;
};

/// Linear beta from beta_start to beta_end, both endpoints included.
NoiseSchedule make_schedule(int steps, double beta_start = 1e-4, double beta_end = 0.02);

/// sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.
nn::Tensor q_sample(const nn::Tensor& x0, int t, const nn::Tensor& eps,
                    const NoiseSchedule& schedule);

/// Noise prediction eps(x_t, t). Implementations may keep per-call caches, so one
/// instance must not be shared between threads.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual nn::Tensor predict(const nn::Tensor& x_t, int t) = 0;
};

/// Gradient of log p(healthy | x_t, t) with respect to x_t.
class GuidanceSource {
public:
    virtual ~GuidanceSource() = default;
    virtual nn::Tensor grad_log_healthy(const nn::Tensor& x_t, int t) = 0;
};

struct Guidance {
    GuidanceSource* source = nullptr;
    double scale = 0.0;

    bool active() const { return source != nullptr && scale != 0.0; }
};

/// eps - s * sqrt(1 - alpha_bar_t) * grad_logp.
nn::Tensor guided_eps(const nn::Tensor& eps, const nn::Tensor& grad_logp, double s, int t,
                      const NoiseSchedule& schedule);

/// Ancestral step from t to t_prev (default t - 1). With t_prev < t - 1 the step uses the
/// respaced beta 1 - alpha_bar_t / alpha_bar_{t_prev}. No noise is added when t_prev is 0.
nn::Tensor ddpm_step(NoisePredictor& model, const nn::Tensor& x_t, int t,
                     const NoiseSchedule& schedule, const Guidance* guidance, Rng& rng,
                     std::optional<int> t_prev = std::nullopt);

/// Deterministic (eta = 0) step from t to t_prev <= t.
nn::Tensor ddim_step(NoisePredictor& model, const nn::Tensor& x_t, int t, int t_prev,
                     const NoiseSchedule& schedule, const Guidance* guidance);

/// Timesteps visited between 0 and L with the given stride, ascending and starting at 0:
/// {0, L - (n-1)*stride, ..., L - stride, L} with n = ceil(L / stride) steps.
std::vector<int> step_sequence(int level, int stride);

/// Deterministic inversion from x0 up to level L along step_sequence(L, stride).
/// Each step evaluates eps at the current point and the destination timestep; with
/// refine_iterations > 0 the eps evaluation point is refined by fixed-point iteration.
nn::Tensor ddim_encode(NoisePredictor& model, const nn::Tensor& x0, int level,
                       const NoiseSchedule& schedule, int stride, int refine_iterations = 0);

/// Reverse DDIM from level L to 0 along step_sequence(L, stride).
nn::Tensor ddim_decode(NoisePredictor& model, const nn::Tensor& x_l, int level,
                       const NoiseSchedule& schedule, int stride, const Guidance* guidance);

/// Reverse DDPM from level L to 0 along step_sequence(L, stride).
nn::Tensor ddpm_decode(NoisePredictor& model, const nn::Tensor& x_l, int level,
                       const NoiseSchedule& schedule, int stride, const Guidance* guidance,
                       Rng& rng);

enum class SamplerMode { DDPM, DDIM };
std::string to_string(SamplerMode mode);
SamplerMode parse_mode(const std::string& text);

struct SamplerConfig {
    SamplerMode mode = SamplerMode::DDIM;
    int level = 500;
    double guidance_scale = 0.0;
    int stride = 20;
    int refine_iterations = 0;
    std::uint64_t seed = 0;

    void validate(const NoiseSchedule& schedule) const;
};

/// Encode (quantized, normalised by the codec's latent stats) -> noise to L -> reverse
/// steps -> de-normalise -> decode. DDIM is deterministic; DDPM is reproducible per seed.
Volume reconstruct_healthy(const Volume& x, const SamplerConfig& cfg,
                           const NoiseSchedule& schedule, vq::VqCodec& codec,
                           NoisePredictor& denoiser, GuidanceSource* classifier = nullptr);

/// |x - x_hat| voxel-wise.
Volume anomaly_map(const Volume& x, const Volume& x_hat);

/// Time-conditioned network as a noise predictor.
class NetworkDenoiser final : public NoisePredictor {
public:
    explicit NetworkDenoiser(nn::Network& net) : net_(net) {}
    nn::Tensor predict(const nn::Tensor& x_t, int t) override { return net_.forward(x_t, t); }

private:
    nn::Network& net_;
};

/// Denoiser architecture used by the pipeline.
nn::ArchSpec denoiser_spec(int channels, int base_channels, int levels, std::uint64_t seed);

/// One Adam step of eps-prediction MSE on a batch of clean latents; t uniform in [1, t_max].
double denoiser_train_step(nn::Network& net, std::span<const nn::Tensor> batch,
                           const NoiseSchedule& schedule, int t_max,
                           const nn::TrainConfig& cfg, Rng& rng);

}  // namespace latentad::diffusion
