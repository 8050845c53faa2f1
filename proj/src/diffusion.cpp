#include "latentad/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace latentad::diffusion {

void NoiseSchedule::check_t(int t) const {
    if (t < 0 || t > steps) {
        throw std::invalid_argument("timestep " + std::to_string(t) + " outside [0, " +
                                    std::to_string(steps) + "]");
    }
}

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
        throw std::invalid_argument("make_schedule: betas must satisfy 0 < start <= end < 1");
    }
    NoiseSchedule s;
    s.steps = steps;
    s.beta.assign(steps + 1, 0.0);
    s.alpha.assign(steps + 1, 1.0);
    s.alpha_bar.assign(steps + 1, 1.0);
    for (int t = 1; t <= steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
        s.beta[t] = beta_start + frac * (beta_end - beta_start);
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    }
    return s;
}

namespace {

void require_same_shape(const nn::Tensor& a, const nn::Tensor& b, const char* what) {
    if (!(a.shape() == b.shape())) {
        throw std::invalid_argument(std::string(what) + ": shape " + a.shape().str() +
                                    " vs " + b.shape().str());
    }
}

nn::Tensor predict_eps(NoisePredictor& model, const nn::Tensor& x_t, int t,
                       const NoiseSchedule& schedule, const Guidance* guidance) {
    nn::Tensor eps = model.predict(x_t, t);
    require_same_shape(eps, x_t, "denoiser output");
    if (guidance && guidance->active()) {
        eps = guided_eps(eps, guidance->source->grad_log_healthy(x_t, t), guidance->scale, t,
                         schedule);
    }
    return eps;
}

nn::Tensor ddim_update(const nn::Tensor& x_t, const nn::Tensor& eps, double ab_t,
                       double ab_prev) {
    const double sa = std::sqrt(ab_t), sn = std::sqrt(1.0 - ab_t);
    const double sa_prev = std::sqrt(ab_prev), sn_prev = std::sqrt(1.0 - ab_prev);
    nn::Tensor out(x_t.shape());
    for (std::size_t i = 0; i < x_t.size(); ++i) {
        const double x0 = (x_t[i] - sn * eps[i]) / sa;
        out[i] = static_cast<float>(sa_prev * x0 + sn_prev * eps[i]);
    }
    return out;
}

}  // namespace

nn::Tensor q_sample(const nn::Tensor& x0, int t, const nn::Tensor& eps,
                    const NoiseSchedule& schedule) {
    schedule.check_t(t);
    require_same_shape(x0, eps, "q_sample");
    const double a = std::sqrt(schedule.alpha_bar[t]);
    const double b = std::sqrt(1.0 - schedule.alpha_bar[t]);
    nn::Tensor out(x0.shape());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        out[i] = static_cast<float>(a * x0[i] + b * eps[i]);
    }
    return out;
}

nn::Tensor guided_eps(const nn::Tensor& eps, const nn::Tensor& grad_logp, double s, int t,
                      const NoiseSchedule& schedule) {
    schedule.check_t(t);
    require_same_shape(eps, grad_logp, "guided_eps");
    if (s < 0.0) throw std::invalid_argument("guided_eps: guidance scale must be >= 0");
    if (s == 0.0) return eps;
    const double k = s * std::sqrt(1.0 - schedule.alpha_bar[t]);
    nn::Tensor out(eps.shape());
    for (std::size_t i = 0; i < eps.size(); ++i) {
        out[i] = static_cast<float>(eps[i] - k * grad_logp[i]);
    }
    return out;
}

nn::Tensor ddpm_step(NoisePredictor& model, const nn::Tensor& x_t, int t,
                     const NoiseSchedule& schedule, const Guidance* guidance, Rng& rng,
                     std::optional<int> t_prev) {
    if (t < 1 || t > schedule.steps) throw std::invalid_argument("ddpm_step: t outside [1, T]");
    const int tp = t_prev.value_or(t - 1);
    if (tp < 0 || tp >= t) throw std::invalid_argument("ddpm_step: t_prev must be in [0, t)");
    const nn::Tensor eps = predict_eps(model, x_t, t, schedule, guidance);
    const double ab_t = schedule.alpha_bar[t];
    const double ab_prev = schedule.alpha_bar[tp];
    const double beta = tp == t - 1 ? schedule.beta[t] : 1.0 - ab_t / ab_prev;
    const double alpha = 1.0 - beta;
    const double coef = beta / std::sqrt(1.0 - ab_t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    const double sigma = tp == 0 ? 0.0 : std::sqrt((1.0 - ab_prev) / (1.0 - ab_t) * beta);
    nn::Tensor out(x_t.shape());
    for (std::size_t i = 0; i < x_t.size(); ++i) {
        const double mu = (x_t[i] - coef * eps[i]) * inv_sqrt_alpha;
        out[i] = static_cast<float>(sigma > 0.0 ? mu + sigma * rng.normal() : mu);
    }
    return out;
}

nn::Tensor ddim_step(NoisePredictor& model, const nn::Tensor& x_t, int t, int t_prev,
                     const NoiseSchedule& schedule, const Guidance* guidance) {
    schedule.check_t(t);
    schedule.check_t(t_prev);
    if (t_prev > t) throw std::invalid_argument("ddim_step: t_prev must not exceed t");
    if (t_prev == t) return x_t;
    if (t == 0) throw std::invalid_argument("ddim_step: t must be >= 1");
    const nn::Tensor eps = predict_eps(model, x_t, t, schedule, guidance);
    return ddim_update(x_t, eps, schedule.alpha_bar[t], schedule.alpha_bar[t_prev]);
}

std::vector<int> step_sequence(int level, int stride) {
    if (level < 0) throw std::invalid_argument("step_sequence: negative level");
    if (stride < 1) throw std::invalid_argument("step_sequence: stride must be >= 1");
    std::vector<int> seq;
    for (int t = level; t > 0; t -= stride) seq.push_back(t);
    seq.push_back(0);
    return {seq.rbegin(), seq.rend()};
}

nn::Tensor ddim_encode(NoisePredictor& model, const nn::Tensor& x0, int level,
                       const NoiseSchedule& schedule, int stride, int refine_iterations) {
    schedule.check_t(level);
    if (refine_iterations < 0 || refine_iterations > 3) {
        throw std::invalid_argument("ddim_encode: refinement iterations must be in [0, 3]");
    }
    const auto seq = step_sequence(level, stride);
    nn::Tensor x = x0;
    for (std::size_t k = 0; k + 1 < seq.size(); ++k) {
        const int t_from = seq[k], t_to = seq[k + 1];
        const double ab_from = schedule.alpha_bar[t_from], ab_to = schedule.alpha_bar[t_to];
        nn::Tensor eps = model.predict(x, t_to);
        require_same_shape(eps, x, "denoiser output");
        nn::Tensor next = ddim_update(x, eps, ab_from, ab_to);
        for (int it = 0; it < refine_iterations; ++it) {
            eps = model.predict(next, t_to);
            next = ddim_update(x, eps, ab_from, ab_to);
        }
        x = std::move(next);
    }
    return x;
}

nn::Tensor ddim_decode(NoisePredictor& model, const nn::Tensor& x_l, int level,
                       const NoiseSchedule& schedule, int stride, const Guidance* guidance) {
    schedule.check_t(level);
    const auto seq = step_sequence(level, stride);
    nn::Tensor x = x_l;
    for (std::size_t k = seq.size() - 1; k > 0; --k) {
        x = ddim_step(model, x, seq[k], seq[k - 1], schedule, guidance);
    }
    return x;
}

nn::Tensor ddpm_decode(NoisePredictor& model, const nn::Tensor& x_l, int level,
                       const NoiseSchedule& schedule, int stride, const Guidance* guidance,
                       Rng& rng) {
    schedule.check_t(level);
    const auto seq = step_sequence(level, stride);
    nn::Tensor x = x_l;
    for (std::size_t k = seq.size() - 1; k > 0; --k) {
        x = ddpm_step(model, x, seq[k], schedule, guidance, rng, seq[k - 1]);
    }
    return x;
}

std::string to_string(SamplerMode mode) { return mode == SamplerMode::DDPM ? "ddpm" : "ddim"; }

SamplerMode parse_mode(const std::string& text) {
    if (text == "ddpm" || text == "DDPM") return SamplerMode::DDPM;
    if (text == "ddim" || text == "DDIM") return SamplerMode::DDIM;
    throw std::invalid_argument("unknown sampler mode '" + text + "'");
}

void SamplerConfig::validate(const NoiseSchedule& schedule) const {
    if (level < 0 || level > schedule.steps) {
        throw std::invalid_argument("sampler: L must be in [0, " +
                                    std::to_string(schedule.steps) + "]");
    }
    if (guidance_scale < 0.0) throw std::invalid_argument("sampler: s must be >= 0");
    if (stride < 1) throw std::invalid_argument("sampler: stride must be >= 1");
    if (refine_iterations < 0 || refine_iterations > 3) {
        throw std::invalid_argument("sampler: refinement iterations must be in [0, 3]");
    }
}

Volume reconstruct_healthy(const Volume& x, const SamplerConfig& cfg,
                           const NoiseSchedule& schedule, vq::VqCodec& codec,
                           NoisePredictor& denoiser, GuidanceSource* classifier) {
    cfg.validate(schedule);
    if (cfg.guidance_scale > 0.0 && classifier == nullptr) {
        throw std::invalid_argument("reconstruct_healthy: guidance scale > 0 needs a classifier");
    }
    vq::LatentGrid latent = codec.quantize(codec.encode(x));
    if (cfg.level == 0) return codec.decode(latent);

    const vq::LatentStats st = codec.latent_stats();
    nn::Tensor z = latent.values;
    for (auto& v : z.data()) v = static_cast<float>((v - st.mean) / st.stddev);

    const Guidance guidance{classifier, cfg.guidance_scale};
    Rng rng(mix_seed(cfg.seed, 0xd1ff));
    if (cfg.mode == SamplerMode::DDIM) {
        const nn::Tensor zl =
            ddim_encode(denoiser, z, cfg.level, schedule, cfg.stride, cfg.refine_iterations);
        z = ddim_decode(denoiser, zl, cfg.level, schedule, cfg.stride, &guidance);
    } else {
        nn::Tensor eps(z.shape());
        for (auto& v : eps.data()) v = static_cast<float>(rng.normal());
        const nn::Tensor zl = q_sample(z, cfg.level, eps, schedule);
        z = ddpm_decode(denoiser, zl, cfg.level, schedule, cfg.stride, &guidance, rng);
    }
    for (auto& v : z.data()) v = static_cast<float>(v * st.stddev + st.mean);
    latent.values = std::move(z);
    latent.indices.clear();
    return codec.decode(latent);
}

Volume anomaly_map(const Volume& x, const Volume& x_hat) {
    require_same_geometry(x.geometry(), x_hat.geometry(), "anomaly_map");
    Volume out(x.geometry());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::abs(x[i] - x_hat[i]);
    return out;
}

nn::ArchSpec denoiser_spec(int channels, int base_channels, int levels, std::uint64_t seed) {
    nn::ArchSpec s;
    s.kind = nn::ArchKind::UNet;
    s.in_channels = channels;
    s.out_channels = channels;
    s.base_channels = base_channels;
    s.levels = levels;
    s.time_conditioned = true;
    s.padding = nn::Padding::Zero;
    s.zero_init_output = true;
    s.init_seed = seed;
    return s;
}

double denoiser_train_step(nn::Network& net, std::span<const nn::Tensor> batch,
                           const NoiseSchedule& schedule, int t_max,
                           const nn::TrainConfig& cfg, Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("denoiser_train_step: empty batch");
    if (t_max < 1 || t_max > schedule.steps) {
        throw std::invalid_argument("denoiser_train_step: t_max outside [1, T]");
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (const auto& x0 : batch) {
        const int t = rng.uniform_int(1, t_max);
        nn::Tensor eps(x0.shape());
        for (auto& v : eps.data()) v = static_cast<float>(rng.normal());
        const nn::Tensor xt = q_sample(x0, t, eps, schedule);
        const nn::Tensor pred = net.forward(xt, t);
        const double n = static_cast<double>(pred.size());
        nn::Tensor g(pred.shape());
        double mse = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double d = static_cast<double>(pred[i]) - eps[i];
            mse += d * d;
            g[i] = static_cast<float>(2.0 * d / n * inv_b);
        }
        loss += mse / n * inv_b;
        net.backward(g);
    }
    nn::adam_step(net, cfg);
    return loss;
}

}  // namespace latentad::diffusion
