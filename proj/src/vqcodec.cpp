#include "latentad/vqcodec.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "latentad/binary_io.hpp"
#include "latentad/rng.hpp"

namespace latentad::vq {

int Codebook::used_codes() const {
    return static_cast<int>(std::count_if(usage.begin(), usage.end(),
                                          [](std::uint64_t u) { return u > 0; }));
}

void Codebook::validate() const {
    if (size < 1 || dim < 1) throw std::invalid_argument("codebook: empty codebook");
    if (codes.size() != static_cast<std::size_t>(size) * dim) {
        throw std::invalid_argument("codebook: code array has the wrong length");
    }
    for (float v : codes) {
        if (!std::isfinite(v)) throw std::invalid_argument("codebook: non-finite entry");
    }
}

LatentGrid quantize(const Codebook& codebook, const LatentGrid& latent) {
    codebook.validate();
    const nn::Shape s = latent.values.shape();
    if (s.c != codebook.dim) {
        throw std::invalid_argument("quantize: latent has " + std::to_string(s.c) +
                                    " channels, codebook dim is " +
                                    std::to_string(codebook.dim));
    }
    const std::size_t sites = s.spatial();
    LatentGrid out{nn::Tensor(s), std::vector<std::uint32_t>(sites), latent.geometry};
    std::vector<float> v(static_cast<std::size_t>(s.c));
    for (std::size_t i = 0; i < sites; ++i) {
        for (int d = 0; d < s.c; ++d) v[d] = latent.values.channel(d)[i];
        int best = 0;
        double best_dist = std::numeric_limits<double>::infinity();
        for (int k = 0; k < codebook.size; ++k) {
            const float* e = codebook.code(k);
            double dist = 0.0;
            for (int d = 0; d < s.c; ++d) {
                const double diff = static_cast<double>(v[d]) - e[d];
                dist += diff * diff;
            }
            if (dist < best_dist) {
                best_dist = dist;
                best = k;
            }
        }
        out.indices[i] = static_cast<std::uint32_t>(best);
        const float* e = codebook.code(best);
        for (int d = 0; d < s.c; ++d) out.values.channel(d)[i] = e[d];
    }
    return out;
}

std::pair<double, double> vq_losses(const nn::Tensor& z, const nn::Tensor& e, double beta) {
    if (!(z.shape() == e.shape())) throw std::invalid_argument("vq_losses: shape mismatch");
    double sq = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double d = static_cast<double>(z[i]) - e[i];
        sq += d * d;
    }
    const double mean = z.size() ? sq / static_cast<double>(z.size()) : 0.0;
    return {mean, beta * mean};
}

void CodecConfig::validate() const {
    if (identity) return;
    if (levels < 1 || levels > 4) throw std::invalid_argument("codec: levels must be in [1, 4]");
    if (latent_dim < 1) throw std::invalid_argument("codec: latent dim must be >= 1");
    if (codebook_size < 2) throw std::invalid_argument("codec: codebook needs K >= 2");
    if (base_channels < 1) throw std::invalid_argument("codec: base channels must be >= 1");
    if (commitment_beta < 0.0) throw std::invalid_argument("codec: negative commitment beta");
}

namespace {

nn::ArchSpec encoder_spec(const CodecConfig& c) {
    nn::ArchSpec s;
    s.kind = nn::ArchKind::Encoder;
    s.in_channels = 1;
    s.out_channels = c.latent_dim;
    s.base_channels = c.base_channels;
    s.levels = c.levels;
    s.padding = nn::Padding::Replicate;
    s.init_seed = mix_seed(c.seed, 11);
    return s;
}

nn::ArchSpec decoder_spec(const CodecConfig& c) {
    nn::ArchSpec s;
    s.kind = nn::ArchKind::Decoder;
    s.in_channels = c.latent_dim;
    s.out_channels = 1;
    s.base_channels = c.base_channels;
    s.levels = c.levels;
    s.padding = nn::Padding::Replicate;
    s.init_seed = mix_seed(c.seed, 12);
    return s;
}

nn::ArchSpec discriminator_spec(const CodecConfig& c) {
    nn::ArchSpec s;
    s.kind = nn::ArchKind::PatchDiscriminator;
    s.in_channels = 1;
    s.out_channels = 1;
    s.base_channels = c.base_channels;
    s.padding = nn::Padding::Replicate;
    s.init_seed = mix_seed(c.seed, 13);
    return s;
}

Volume clamp_to_volume(const nn::Tensor& t, const Geometry& g) {
    Volume out = nn::to_volume(t, g);
    for (auto& v : out.data()) v = std::clamp(v, -1.0f, 1.0f);
    return out;
}

}  // namespace

VqCodec::VqCodec(const CodecConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.identity) return;
    encoder_.emplace(encoder_spec(cfg_));
    decoder_.emplace(decoder_spec(cfg_));
    if (cfg_.adversarial) discriminator_.emplace(discriminator_spec(cfg_));
    codebook_ = Codebook(cfg_.codebook_size, cfg_.latent_dim);
    Rng rng(mix_seed(cfg_.seed, 14));
    for (auto& v : codebook_.codes) v = static_cast<float>(rng.normal() * 0.1);
    codebook_grad_.assign(codebook_.codes.size(), 0.0f);
}

nn::Shape VqCodec::latent_shape(Dims input) const {
    const int f = downsample_factor();
    if (input.nx % f || input.ny % f || input.nz % f) {
        throw std::invalid_argument("codec: input dims must be divisible by " +
                                    std::to_string(f));
    }
    return nn::Shape{latent_channels(), input.nx / f, input.ny / f, input.nz / f};
}

LatentGrid VqCodec::encode(const Volume& vol) {
    const nn::Shape ls = latent_shape(vol.dims());
    if (cfg_.identity) return LatentGrid{nn::to_tensor(vol), {}, vol.geometry()};
    LatentGrid out{encoder_->forward(nn::to_tensor(vol)), {}, vol.geometry()};
    if (!(out.values.shape() == ls)) throw std::logic_error("codec: encoder shape mismatch");
    return out;
}

LatentGrid VqCodec::quantize(const LatentGrid& latent) const {
    if (cfg_.identity) return latent;
    return vq::quantize(codebook_, latent);
}

Volume VqCodec::decode(const LatentGrid& latent) {
    const nn::Shape s = latent.values.shape();
    const int f = downsample_factor();
    const Dims out_dims{s.nx * f, s.ny * f, s.nz * f};
    if (s.c != latent_channels()) {
        throw std::invalid_argument("decode: latent " + s.str() + " does not match codec");
    }
    Geometry g = latent.geometry;
    if (!(g.dims == out_dims)) g = Geometry{out_dims, g.spacing, g.origin};
    if (cfg_.identity) return clamp_to_volume(latent.values, g);
    return clamp_to_volume(decoder_->forward(latent.values), g);
}

Volume VqCodec::reconstruct(const Volume& vol) { return decode(quantize(encode(vol))); }

void VqCodec::init_codebook(std::span<const Volume> sample, std::uint64_t seed) {
    if (cfg_.identity || sample.empty()) return;
    std::vector<float> pool;
    for (const auto& v : sample) {
        const nn::Tensor z = encoder_->forward(nn::to_tensor(v));
        const std::size_t sites = z.shape().spatial();
        for (std::size_t i = 0; i < sites; ++i) {
            for (int d = 0; d < cfg_.latent_dim; ++d) pool.push_back(z.channel(d)[i]);
        }
    }
    const std::size_t n = pool.size() / static_cast<std::size_t>(cfg_.latent_dim);
    Rng rng(seed);
    for (int k = 0; k < codebook_.size; ++k) {
        const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(n) - 1));
        for (int d = 0; d < cfg_.latent_dim; ++d) {
            codebook_.code(k)[d] = pool[pick * cfg_.latent_dim + d] +
                                   static_cast<float>(rng.normal() * 1e-3);
        }
    }
    codebook_ready_ = true;
}

int VqCodec::restart_dead_codes(std::span<const Volume> sample, std::uint64_t seed) {
    if (cfg_.identity || sample.empty()) return 0;
    Rng rng(seed);
    int restarted = 0;
    for (int k = 0; k < codebook_.size; ++k) {
        if (codebook_.usage[k] > 0) continue;
        const auto& v = sample[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(sample.size()) - 1))];
        const nn::Tensor z = encoder_->forward(nn::to_tensor(v));
        const auto site = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(z.shape().spatial()) - 1));
        for (int d = 0; d < cfg_.latent_dim; ++d) codebook_.code(k)[d] = z.channel(d)[site];
        ++restarted;
    }
    reset_usage();
    return restarted;
}

void VqCodec::reset_usage() { std::fill(codebook_.usage.begin(), codebook_.usage.end(), 0); }

CodecLosses VqCodec::train_step(std::span<const Volume> batch, const nn::TrainConfig& cfg) {
    if (batch.empty()) throw std::invalid_argument("codec_train_step: empty batch");
    CodecLosses losses;
    if (cfg_.identity) return losses;
    if (!codebook_ready_) init_codebook(batch, mix_seed(cfg_.seed, 15));
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const double beta = cfg_.commitment_beta;
    std::vector<nn::Tensor> fakes;

    for (const auto& vol : batch) {
        const nn::Tensor x = nn::to_tensor(vol);
        const nn::Tensor z = encoder_->forward(x);
        const LatentGrid q = vq::quantize(codebook_, LatentGrid{z, {}, vol.geometry()});
        const nn::Tensor xh = decoder_->forward(q.values);

        const double n = static_cast<double>(xh.size());
        nn::Tensor g_xh(xh.shape());
        double mse = 0.0;
        for (std::size_t i = 0; i < xh.size(); ++i) {
            const double d = static_cast<double>(xh[i]) - x[i];
            mse += d * d;
            g_xh[i] = static_cast<float>(2.0 * d / n * inv_b);
        }
        losses.reconstruction += mse / n * inv_b;

        if (discriminator_) {
            const nn::Tensor logits = discriminator_->forward(xh);
            const double m = static_cast<double>(logits.size());
            double mean_logit = 0.0;
            for (std::size_t i = 0; i < logits.size(); ++i) mean_logit += logits[i];
            losses.adversarial += -cfg_.adversarial_weight * mean_logit / m * inv_b;
            nn::Tensor g_logits(logits.shape(),
                                static_cast<float>(-cfg_.adversarial_weight / m * inv_b));
            const nn::Tensor g_in = discriminator_->backward(g_logits);
            for (std::size_t i = 0; i < g_xh.size(); ++i) g_xh[i] += g_in[i];
            fakes.push_back(xh);
        }

        const nn::Tensor g_e = decoder_->backward(g_xh);
        const auto [cb, commit] = vq_losses(z, q.values, beta);
        losses.codebook += cb * inv_b;
        losses.commitment += commit * inv_b;

        // Straight-through: the decoder gradient reaches z unchanged.
        const double m = static_cast<double>(z.size());
        nn::Tensor g_z(z.shape());
        const std::size_t sites = z.shape().spatial();
        for (int d = 0; d < z.shape().c; ++d) {
            for (std::size_t i = 0; i < sites; ++i) {
                const std::size_t j = static_cast<std::size_t>(d) * sites + i;
                const double diff = static_cast<double>(z[j]) - q.values[j];
                g_z[j] = static_cast<float>(g_e[j] + beta * 2.0 * diff / m * inv_b);
                const std::uint32_t k = q.indices[i];
                codebook_grad_[static_cast<std::size_t>(k) * codebook_.dim + d] +=
                    static_cast<float>(-2.0 * diff / m * inv_b);
            }
        }
        for (std::size_t i = 0; i < sites; ++i) ++codebook_.usage[q.indices[i]];
        encoder_->backward(g_z);
    }

    ++steps_;
    nn::adam_step(*encoder_, cfg);
    nn::adam_step(*decoder_, cfg);
    nn::adam_update(codebook_.codes, codebook_grad_, codebook_m_, codebook_v_, steps_,
                    cfg.learning_rate);

    if (discriminator_) {
        discriminator_->zero_grad();
        for (std::size_t b = 0; b < batch.size(); ++b) {
            // Hinge: relu(1 - D(real)) + relu(1 + D(fake)).
            for (int pass = 0; pass < 2; ++pass) {
                const nn::Tensor in = pass == 0 ? nn::to_tensor(batch[b]) : fakes[b];
                const nn::Tensor logits = discriminator_->forward(in);
                const double m = static_cast<double>(logits.size());
                nn::Tensor g(logits.shape());
                for (std::size_t i = 0; i < logits.size(); ++i) {
                    const double margin = pass == 0 ? 1.0 - logits[i] : 1.0 + logits[i];
                    if (margin > 0.0) {
                        losses.discriminator += margin / m * inv_b;
                        g[i] = static_cast<float>((pass == 0 ? -1.0 : 1.0) / m * inv_b);
                    }
                }
                discriminator_->backward(g);
            }
        }
        nn::adam_step(*discriminator_, cfg);
    }
    return losses;
}

LatentStats VqCodec::fit_latent_stats(std::span<const Volume> volumes) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& v : volumes) {
        const LatentGrid q = quantize(encode(v));
        for (float a : q.values.data()) {
            sum += a;
            sq += static_cast<double>(a) * a;
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("fit_latent_stats: no volumes");
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(sq / static_cast<double>(n) - mean * mean, 0.0);
    stats_ = LatentStats{mean, var > 1e-12 ? std::sqrt(var) : 1.0};
    return stats_;
}

void VqCodec::save(std::ostream& os) const {
    os.write("VQC1", 4);
    io::put<std::uint8_t>(os, cfg_.identity ? 1 : 0);
    io::put<std::int32_t>(os, cfg_.levels);
    io::put<std::int32_t>(os, cfg_.latent_dim);
    io::put<std::int32_t>(os, cfg_.codebook_size);
    io::put<std::int32_t>(os, cfg_.base_channels);
    io::put<double>(os, cfg_.commitment_beta);
    io::put<std::uint8_t>(os, cfg_.adversarial ? 1 : 0);
    io::put<double>(os, cfg_.adversarial_weight);
    io::put<std::uint64_t>(os, cfg_.seed);
    io::put<std::uint64_t>(os, steps_);
    io::put<double>(os, stats_.mean);
    io::put<double>(os, stats_.stddev);
    if (!cfg_.identity) {
        nn::save_network(os, *encoder_);
        nn::save_network(os, *decoder_);
        if (discriminator_) nn::save_network(os, *discriminator_);
        os.write("CBK1", 4);
        io::put<std::int32_t>(os, codebook_.size);
        io::put<std::int32_t>(os, codebook_.dim);
        io::put_array(os, codebook_.codes);
        io::put_array(os, codebook_.usage);
        io::put<std::uint8_t>(os, codebook_m_.empty() ? 0 : 1);
        if (!codebook_m_.empty()) {
            io::put_array(os, codebook_m_);
            io::put_array(os, codebook_v_);
        }
    }
    if (!os) throw std::runtime_error("VQC1: write failed");
}

VqCodec VqCodec::load(std::istream& is) {
    io::expect_magic(is, "VQC1");
    CodecConfig c;
    c.identity = io::get<std::uint8_t>(is, "VQC1 header") != 0;
    c.levels = io::get<std::int32_t>(is, "VQC1 header");
    c.latent_dim = io::get<std::int32_t>(is, "VQC1 header");
    c.codebook_size = io::get<std::int32_t>(is, "VQC1 header");
    c.base_channels = io::get<std::int32_t>(is, "VQC1 header");
    c.commitment_beta = io::get<double>(is, "VQC1 header");
    c.adversarial = io::get<std::uint8_t>(is, "VQC1 header") != 0;
    c.adversarial_weight = io::get<double>(is, "VQC1 header");
    c.seed = io::get<std::uint64_t>(is, "VQC1 header");
    VqCodec codec(c);
    codec.steps_ = io::get<std::uint64_t>(is, "VQC1 header");
    codec.stats_.mean = io::get<double>(is, "VQC1 header");
    codec.stats_.stddev = io::get<double>(is, "VQC1 header");
    if (c.identity) return codec;
    auto check = [](const nn::Network& net, const nn::ArchSpec& expected) {
        if (!(net.spec() == expected)) throw std::runtime_error("VQC1: network does not match");
    };
    codec.encoder_.emplace(nn::load_network(is));
    check(*codec.encoder_, encoder_spec(c));
    codec.decoder_.emplace(nn::load_network(is));
    check(*codec.decoder_, decoder_spec(c));
    if (c.adversarial) {
        codec.discriminator_.emplace(nn::load_network(is));
        check(*codec.discriminator_, discriminator_spec(c));
    }
    io::expect_magic(is, "CBK1");
    const int k = io::get<std::int32_t>(is, "CBK1 header");
    const int d = io::get<std::int32_t>(is, "CBK1 header");
    if (k != c.codebook_size || d != c.latent_dim) {
        throw std::runtime_error("CBK1: codebook shape does not match codec");
    }
    io::get_array(is, codec.codebook_.codes, "CBK1 codes");
    io::get_array(is, codec.codebook_.usage, "CBK1 usage");
    if (io::get<std::uint8_t>(is, "CBK1 adam flag")) {
        codec.codebook_m_.resize(codec.codebook_.codes.size());
        codec.codebook_v_.resize(codec.codebook_.codes.size());
        io::get_array(is, codec.codebook_m_, "CBK1 adam");
        io::get_array(is, codec.codebook_v_, "CBK1 adam");
    }
    codec.codebook_.validate();
    codec.codebook_ready_ = true;
    return codec;
}

}  // namespace latentad::vq
