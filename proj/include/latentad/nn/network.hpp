#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

#include "latentad/nn/layers.hpp"

namespace latentad::nn {

/// Fixed architectures. Channel widths for the multi-level nets are
/// base * min(2^level, 2): e.g. base 16 gives 16, 32, 32.
enum class ArchKind : std::uint32_t {
    Conv1x1 = 1,     // single 1x1x1 convolution
    TwoLayer = 2,    // conv3 -> SiLU -> conv3
    UNet = 3,        // time-conditioned denoiser
    Encoder = 4,     // codec encoder, downsamples by 2^levels
    Decoder = 5,     // codec decoder, upsamples by 2^levels
    Classifier = 6,  // UNet encoder path + global pool + dense head
    PatchDiscriminator = 7,  // 3 stride-2 convs producing per-patch logits
};

struct ArchSpec {
    ArchKind kind = ArchKind::Conv1x1;
    int in_channels = 1;
    int out_channels = 1;
    int base_channels = 8;
    int levels = 2;
    bool time_conditioned = false;
    Padding padding = Padding::Zero;
    bool zero_init_output = false;
    std::uint64_t init_seed = 0;

    bool operator==(const ArchSpec&) const = default;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 8;
    int iterations = 1000;
    int epochs = 20;
    int patience = 5;
    std::uint64_t seed = 0;

    void validate() const;
};

struct AdamState {
    std::uint64_t step = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
};

class Network {
public:
    explicit Network(const ArchSpec& spec);
    Network(const Network& other);
    Network& operator=(const Network& other);
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;
    ~Network();

    /// Time-conditioned nets require t; others ignore it.
    Tensor forward(const Tensor& input, std::optional<int> t = std::nullopt);
    /// Accumulates parameter gradients from the last forward and returns the input gradient.
    Tensor backward(const Tensor& grad_out);

    void zero_grad();
    std::vector<ParamRef> parameters();
    std::size_t parameter_count() const;
    std::vector<float> flat_parameters() const;
    void set_flat_parameters(const std::vector<float>& flat);
    std::vector<float> flat_gradients() const;

    const ArchSpec& spec() const { return spec_; }
    AdamState& adam() { return adam_; }
    const AdamState& adam() const { return adam_; }

    static constexpr int kTimeEmbedDim = 64;

private:
    ArchSpec spec_;
    std::unique_ptr<Layer> root_;
    AdamState adam_;
    bool forward_done_ = false;
    Shape last_input_;
};

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8); increments the step and clears gradients.
void adam_step(Network& net, const TrainConfig& cfg);

/// One Adam update of a raw parameter array at the given 1-based step; clears grad.
void adam_update(std::vector<float>& value, std::vector<float>& grad, std::vector<float>& m,
                 std::vector<float>& v, std::uint64_t step, double learning_rate);

/// NET1: "NET1", u32 arch kind, i32 in/out/base/levels, u8 time/padding/zero-init,
/// u64 init seed, u64 parameter count, f32 parameters, u8 has-adam [u64 step, f32 m, f32 v].
void save_network(std::ostream& os, const Network& net, bool with_adam = true);
Network load_network(std::istream& is);

}  // namespace latentad::nn
