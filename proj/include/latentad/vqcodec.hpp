#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "latentad/grid.hpp"
#include "latentad/nn/network.hpp"

namespace latentad::vq {

/// K codes of D dims, row-major (code k occupies [k*D, (k+1)*D)).
struct Codebook {
    int size = 0;
    int dim = 0;
    std::vector<float> codes;
    std::vector<std::uint64_t> usage;

    Codebook() = default;
    Codebook(int k, int d) : size(k), dim(d), codes(static_cast<std::size_t>(k) * d, 0.0f),
                             usage(static_cast<std::size_t>(k), 0) {}

    const float* code(int k) const { return codes.data() + static_cast<std::size_t>(k) * dim; }
    float* code(int k) { return codes.data() + static_cast<std::size_t>(k) * dim; }
    int used_codes() const;
    void validate() const;
};

/// Latent of one volume. `values` holds the continuous encoder output until quantized,
/// then the selected codes. `indices` is empty before quantization (and in identity mode).
/// `geometry` is the geometry decode() restores.
struct LatentGrid {
    nn::Tensor values;
    std::vector<std::uint32_t> indices;
    Geometry geometry;
};

/// Nearest code per spatial site; ties go to the lowest index.
LatentGrid quantize(const Codebook& codebook, const LatentGrid& latent);

struct CodecConfig {
    bool identity = false;
    int levels = 2;
    int latent_dim = 8;
    int codebook_size = 64;
    int base_channels = 8;
    double commitment_beta = 0.25;
    bool adversarial = false;
    double adversarial_weight = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct CodecLosses {
    double reconstruction = 0.0;
    double codebook = 0.0;
    double commitment = 0.0;  // already scaled by beta
    double adversarial = 0.0;
    double discriminator = 0.0;

    double total() const { return reconstruction + codebook + commitment + adversarial; }
};

/// Codebook and commitment terms of one latent against its quantization, each a mean over
/// latent entries; commitment is scaled by beta.
std::pair<double, double> vq_losses(const nn::Tensor& z, const nn::Tensor& e, double beta);

/// Normalisation applied to latents before diffusion: (z - mean) / std.
struct LatentStats {
    double mean = 0.0;
    double stddev = 1.0;
};

class VqCodec {
public:
    explicit VqCodec(const CodecConfig& cfg);

    const CodecConfig& config() const { return cfg_; }
    bool identity() const { return cfg_.identity; }
    int downsample_factor() const { return cfg_.identity ? 1 : (1 << cfg_.levels); }
    int latent_channels() const { return cfg_.identity ? 1 : cfg_.latent_dim; }
    /// Latent shape for an input of the given dims; throws when not divisible.
    nn::Shape latent_shape(Dims input) const;

    /// Continuous latent (not quantized). Deterministic.
    LatentGrid encode(const Volume& vol);
    /// Quantizes with this codec's codebook; identity codecs pass through.
    LatentGrid quantize(const LatentGrid& latent) const;
    /// Decoded volume clamped to [-1, 1].
    Volume decode(const LatentGrid& latent);
    /// decode(quantize(encode(vol))).
    Volume reconstruct(const Volume& vol);

    /// One Adam step on the batch with the straight-through estimator.
    CodecLosses train_step(std::span<const Volume> batch, const nn::TrainConfig& cfg);

    /// Codebook initialised from encoder outputs of the given volumes.
    void init_codebook(std::span<const Volume> sample, std::uint64_t seed);
    /// Replaces codes never selected since the last call with random encoder outputs.
    int restart_dead_codes(std::span<const Volume> sample, std::uint64_t seed);
    void reset_usage();

    /// Mean and sd of quantized latent entries over the given volumes.
    LatentStats fit_latent_stats(std::span<const Volume> volumes);
    const LatentStats& latent_stats() const { return stats_; }
    void set_latent_stats(const LatentStats& s) { stats_ = s; }

    nn::Network& encoder() { return *encoder_; }
    nn::Network& decoder() { return *decoder_; }
    Codebook& codebook() { return codebook_; }
    const Codebook& codebook() const { return codebook_; }
    std::uint64_t steps() const { return steps_; }

    void save(std::ostream& os) const;
    static VqCodec load(std::istream& is);

private:
    CodecConfig cfg_;
    std::optional<nn::Network> encoder_;
    std::optional<nn::Network> decoder_;
    std::optional<nn::Network> discriminator_;
    Codebook codebook_;
    std::vector<float> codebook_grad_, codebook_m_, codebook_v_;
    LatentStats stats_;
    std::uint64_t steps_ = 0;
    bool codebook_ready_ = false;
};

}  // namespace latentad::vq
