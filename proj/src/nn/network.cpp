#include "latentad/nn/network.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "latentad/binary_io.hpp"

namespace latentad::nn {

namespace {

int level_channels(int base, int level) { return base * std::min(1 << level, 2); }

std::unique_ptr<Sequential> conv_block(int cin, int cout, const ArchSpec& spec, Rng& rng) {
    auto block = std::make_unique<Sequential>();
    block->emplace<Conv3d>(cin, cout, 3, 1, spec.padding, rng);
    block->emplace<GroupNorm>(cout, 8);
    if (spec.time_conditioned) block->emplace<TimeBias>(Network::kTimeEmbedDim, cout, rng);
    block->emplace<SiLU>();
    return block;
}

class UNet final : public Layer {
public:
    UNet(const ArchSpec& spec, Rng& rng) : levels_(spec.levels) {
        const int base = spec.base_channels;
        in_conv_ = std::make_unique<Conv3d>(spec.in_channels, base, 3, 1, spec.padding, rng);
        enc_.push_back(conv_block(base, base, spec, rng));
        for (int l = 1; l <= levels_; ++l) {
            downs_.push_back(std::make_unique<Conv3d>(level_channels(base, l - 1),
                                                      level_channels(base, l), 3, 2, spec.padding,
                                                      rng));
            enc_.push_back(conv_block(level_channels(base, l), level_channels(base, l), spec, rng));
        }
        mid_ = conv_block(level_channels(base, levels_), level_channels(base, levels_), spec, rng);
        dec_.resize(levels_);
        for (int l = levels_ - 1; l >= 0; --l) {
            dec_[l] = conv_block(level_channels(base, l + 1) + level_channels(base, l),
                                 level_channels(base, l), spec, rng);
        }
        out_ = std::make_unique<Sequential>();
        out_->emplace<GroupNorm>(base, 8);
        out_->emplace<SiLU>();
        out_->emplace<Conv3d>(base, spec.out_channels, 3, 1, spec.padding, rng,
                              spec.zero_init_output);
    }

    Tensor forward(const Tensor& x, const Context& ctx) override {
        skip_channels_.assign(levels_ + 1, 0);
        up_input_shapes_.assign(levels_, Shape{});
        std::vector<Tensor> skips(levels_ + 1);
        Tensor h = in_conv_->forward(x, ctx);
        h = enc_[0]->forward(h, ctx);
        skips[0] = h;
        for (int l = 1; l <= levels_; ++l) {
            h = downs_[l - 1]->forward(h, ctx);
            h = enc_[l]->forward(h, ctx);
            skips[l] = h;
        }
        h = mid_->forward(h, ctx);
        for (int l = levels_ - 1; l >= 0; --l) {
            up_input_shapes_[l] = h.shape();
            const Tensor up = upsample_nearest(h, skips[l].shape().dims());
            h = dec_[l]->forward(concat_channels(up, skips[l]), ctx);
            skip_channels_[l] = skips[l].shape().c;
        }
        return out_->forward(h, ctx);
    }

    Tensor backward(const Tensor& grad_out) override {
        Tensor g = out_->backward(grad_out);
        std::vector<Tensor> skip_grads(levels_ + 1);
        for (int l = 0; l < levels_; ++l) {
            const Tensor g_cat = dec_[l]->backward(g);
            Tensor g_up, g_skip;
            split_channels(g_cat, up_input_shapes_[l].c, g_up, g_skip);
            skip_grads[l] = std::move(g_skip);
            g = upsample_nearest_backward(g_up, up_input_shapes_[l]);
        }
        g = mid_->backward(g);
        for (int l = levels_; l >= 1; --l) {
            if (skip_grads[l].size() == g.size()) add_into(g, skip_grads[l]);
            g = enc_[l]->backward(g);
            g = downs_[l - 1]->backward(g);
        }
        add_into(g, skip_grads[0]);
        g = enc_[0]->backward(g);
        return in_conv_->backward(g);
    }

    void collect(std::vector<ParamRef>& out) override {
        in_conv_->collect(out);
        for (int l = 0; l <= levels_; ++l) {
            enc_[l]->collect(out);
            if (l < levels_) downs_[l]->collect(out);
        }
        mid_->collect(out);
        for (int l = levels_ - 1; l >= 0; --l) dec_[l]->collect(out);
        out_->collect(out);
    }

    std::string name() const override { return "unet"; }

private:
    static void add_into(Tensor& dst, const Tensor& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }

    int levels_;
    std::unique_ptr<Conv3d> in_conv_;
    std::vector<std::unique_ptr<Sequential>> enc_;
    std::vector<std::unique_ptr<Conv3d>> downs_;
    std::unique_ptr<Sequential> mid_;
    std::vector<std::unique_ptr<Sequential>> dec_;
    std::unique_ptr<Sequential> out_;
    std::vector<int> skip_channels_;
    std::vector<Shape> up_input_shapes_;
};

std::unique_ptr<Layer> build(const ArchSpec& spec) {
    if (spec.in_channels <= 0 || spec.out_channels <= 0 || spec.base_channels <= 0 ||
        spec.levels < 0) {
        throw std::invalid_argument("network: invalid architecture parameters");
    }
    Rng rng(mix_seed(spec.init_seed, static_cast<std::uint64_t>(spec.kind)));
    const int base = spec.base_channels;
    switch (spec.kind) {
        case ArchKind::Conv1x1: {
            auto seq = std::make_unique<Sequential>();
            seq->emplace<Conv3d>(spec.in_channels, spec.out_channels, 1, 1, spec.padding, rng,
                                 spec.zero_init_output);
            return seq;
        }
        case ArchKind::TwoLayer: {
            auto seq = std::make_unique<Sequential>();
            seq->emplace<Conv3d>(spec.in_channels, base, 3, 1, spec.padding, rng);
            if (spec.time_conditioned) seq->emplace<TimeBias>(Network::kTimeEmbedDim, base, rng);
            seq->emplace<SiLU>();
            seq->emplace<Conv3d>(base, spec.out_channels, 3, 1, spec.padding, rng,
                                 spec.zero_init_output);
            return seq;
        }
        case ArchKind::UNet:
            if (spec.levels < 1) throw std::invalid_argument("unet: needs at least one level");
            return std::make_unique<UNet>(spec, rng);
        case ArchKind::Classifier: {
            auto seq = std::make_unique<Sequential>();
            seq->emplace<Conv3d>(spec.in_channels, base, 3, 1, spec.padding, rng);
            seq->add(conv_block(base, base, spec, rng));
            for (int l = 1; l <= spec.levels; ++l) {
                seq->emplace<Conv3d>(level_channels(base, l - 1), level_channels(base, l), 3, 2,
                                     spec.padding, rng);
                seq->add(conv_block(level_channels(base, l), level_channels(base, l), spec, rng));
            }
            seq->emplace<GlobalAvgPool>();
            seq->emplace<Dense>(level_channels(base, spec.levels), spec.out_channels, rng,
                                spec.zero_init_output);
            return seq;
        }
        case ArchKind::Encoder: {
            if (spec.levels < 1) throw std::invalid_argument("encoder: needs at least one level");
            auto seq = std::make_unique<Sequential>();
            int c = spec.in_channels;
            for (int l = 0; l < spec.levels; ++l) {
                const int next = level_channels(base, l);
                seq->emplace<Conv3d>(c, next, 3, 2, spec.padding, rng);
                seq->emplace<GroupNorm>(next, 8);
                seq->emplace<SiLU>();
                c = next;
            }
            seq->emplace<Conv3d>(c, c, 3, 1, spec.padding, rng);
            seq->emplace<GroupNorm>(c, 8);
            seq->emplace<SiLU>();
            seq->emplace<Conv3d>(c, spec.out_channels, 1, 1, spec.padding, rng);
            return seq;
        }
        case ArchKind::Decoder: {
            if (spec.levels < 1) throw std::invalid_argument("decoder: needs at least one level");
            auto seq = std::make_unique<Sequential>();
            int c = level_channels(base, spec.levels - 1);
            seq->emplace<Conv3d>(spec.in_channels, c, 1, 1, spec.padding, rng);
            seq->emplace<GroupNorm>(c, 8);
            seq->emplace<SiLU>();
            seq->emplace<Conv3d>(c, c, 3, 1, spec.padding, rng);
            seq->emplace<GroupNorm>(c, 8);
            seq->emplace<SiLU>();
            for (int l = spec.levels - 1; l >= 0; --l) {
                const int next = level_channels(base, std::max(l - 1, 0));
                seq->emplace<Upsample2x>();
                seq->emplace<Conv3d>(c, next, 3, 1, spec.padding, rng);
                seq->emplace<GroupNorm>(next, 8);
                seq->emplace<SiLU>();
                c = next;
            }
            seq->emplace<Conv3d>(c, spec.out_channels, 3, 1, spec.padding, rng,
                                 spec.zero_init_output);
            return seq;
        }
        case ArchKind::PatchDiscriminator: {
            auto seq = std::make_unique<Sequential>();
            seq->emplace<Conv3d>(spec.in_channels, base, 3, 2, spec.padding, rng);
            seq->emplace<SiLU>();
            seq->emplace<Conv3d>(base, 2 * base, 3, 2, spec.padding, rng);
            seq->emplace<SiLU>();
            seq->emplace<Conv3d>(2 * base, spec.out_channels, 3, 1, spec.padding, rng);
            return seq;
        }
    }
    throw std::invalid_argument("network: unknown architecture kind");
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
    if (iterations < 0 || epochs < 0) throw std::invalid_argument("train: negative budget");
    if (patience < 1) throw std::invalid_argument("train: patience must be >= 1");
}

Network::Network(const ArchSpec& spec) : spec_(spec), root_(build(spec)) {}

Network::Network(const Network& other) : spec_(other.spec_), root_(build(other.spec_)) {
    set_flat_parameters(other.flat_parameters());
    adam_ = other.adam_;
}

Network& Network::operator=(const Network& other) {
    if (this != &other) {
        Network copy(other);
        *this = std::move(copy);
    }
    return *this;
}

Network::~Network() = default;

Tensor Network::forward(const Tensor& input, std::optional<int> t) {
    if (input.shape().c != spec_.in_channels) {
        throw std::invalid_argument("network: expected " + std::to_string(spec_.in_channels) +
                                    " input channels, got shape " + input.shape().str());
    }
    std::vector<float> embedding;
    Context ctx;
    if (spec_.time_conditioned) {
        if (!t) throw std::invalid_argument("network: time-conditioned net needs a timestep");
        embedding = timestep_embedding(*t, kTimeEmbedDim);
        ctx.time_embedding = embedding;
    }
    Tensor out = root_->forward(input, ctx);
    forward_done_ = true;
    last_input_ = input.shape();
    return out;
}

Tensor Network::backward(const Tensor& grad_out) {
    if (!forward_done_) throw std::logic_error("network: backward called before forward");
    Tensor g = root_->backward(grad_out);
    if (!(g.shape() == last_input_)) {
        throw std::logic_error("network: input gradient shape mismatch");
    }
    return g;
}

std::vector<ParamRef> Network::parameters() {
    std::vector<ParamRef> out;
    root_->collect(out);
    return out;
}

void Network::zero_grad() {
    for (auto& p : parameters()) std::fill(p.grad->begin(), p.grad->end(), 0.0f);
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (auto& p : const_cast<Network*>(this)->parameters()) n += p.value->size();
    return n;
}

std::vector<float> Network::flat_parameters() const {
    std::vector<float> flat;
    for (auto& p : const_cast<Network*>(this)->parameters()) {
        flat.insert(flat.end(), p.value->begin(), p.value->end());
    }
    return flat;
}

std::vector<float> Network::flat_gradients() const {
    std::vector<float> flat;
    for (auto& p : const_cast<Network*>(this)->parameters()) {
        flat.insert(flat.end(), p.grad->begin(), p.grad->end());
    }
    return flat;
}

void Network::set_flat_parameters(const std::vector<float>& flat) {
    if (flat.size() != parameter_count()) {
        throw std::invalid_argument("network: parameter count mismatch");
    }
    std::size_t offset = 0;
    for (auto& p : parameters()) {
        std::copy(flat.begin() + static_cast<long>(offset),
                  flat.begin() + static_cast<long>(offset + p.value->size()), p.value->begin());
        offset += p.value->size();
    }
}

void adam_step(Network& net, const TrainConfig& cfg) {
    auto params = net.parameters();
    AdamState& st = net.adam();
    if (st.m.size() != params.size()) {
        st.m.clear();
        st.v.clear();
        for (auto& p : params) {
            st.m.emplace_back(p.value->size(), 0.0f);
            st.v.emplace_back(p.value->size(), 0.0f);
        }
    }
    st.step += 1;
    for (std::size_t k = 0; k < params.size(); ++k) {
        adam_update(*params[k].value, *params[k].grad, st.m[k], st.v[k], st.step,
                    cfg.learning_rate);
    }
}

void adam_update(std::vector<float>& value, std::vector<float>& grad, std::vector<float>& m,
                 std::vector<float>& v, std::uint64_t step, double learning_rate) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    if (m.size() != value.size()) m.assign(value.size(), 0.0f);
    if (v.size() != value.size()) v.assign(value.size(), 0.0f);
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i];
        m[i] = static_cast<float>(beta1 * m[i] + (1.0 - beta1) * g);
        v[i] = static_cast<float>(beta2 * v[i] + (1.0 - beta2) * g * g);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        value[i] -= static_cast<float>(learning_rate * mhat / (std::sqrt(vhat) + eps));
        grad[i] = 0.0f;
    }
}

void save_network(std::ostream& os, const Network& net, bool with_adam) {
    const ArchSpec& s = net.spec();
    os.write("NET1", 4);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(s.kind));
    io::put<std::int32_t>(os, s.in_channels);
    io::put<std::int32_t>(os, s.out_channels);
    io::put<std::int32_t>(os, s.base_channels);
    io::put<std::int32_t>(os, s.levels);
    io::put<std::uint8_t>(os, s.time_conditioned ? 1 : 0);
    io::put<std::uint8_t>(os, static_cast<std::uint8_t>(s.padding));
    io::put<std::uint8_t>(os, s.zero_init_output ? 1 : 0);
    io::put<std::uint64_t>(os, s.init_seed);
    const auto flat = net.flat_parameters();
    io::put<std::uint64_t>(os, flat.size());
    io::put_array(os, flat);
    const AdamState& st = net.adam();
    const bool adam = with_adam && !st.m.empty();
    io::put<std::uint8_t>(os, adam ? 1 : 0);
    if (adam) {
        io::put<std::uint64_t>(os, st.step);
        for (const auto& m : st.m) io::put_array(os, m);
        for (const auto& v : st.v) io::put_array(os, v);
    }
    if (!os) throw std::runtime_error("NET1: write failed");
}

Network load_network(std::istream& is) {
    io::expect_magic(is, "NET1");
    ArchSpec s;
    const auto kind = io::get<std::uint32_t>(is, "NET1 header");
    if (kind < 1 || kind > 7) throw std::runtime_error("NET1: unknown architecture id");
    s.kind = static_cast<ArchKind>(kind);
    s.in_channels = io::get<std::int32_t>(is, "NET1 header");
    s.out_channels = io::get<std::int32_t>(is, "NET1 header");
    s.base_channels = io::get<std::int32_t>(is, "NET1 header");
    s.levels = io::get<std::int32_t>(is, "NET1 header");
    s.time_conditioned = io::get<std::uint8_t>(is, "NET1 header") != 0;
    s.padding = static_cast<Padding>(io::get<std::uint8_t>(is, "NET1 header"));
    s.zero_init_output = io::get<std::uint8_t>(is, "NET1 header") != 0;
    s.init_seed = io::get<std::uint64_t>(is, "NET1 header");
    Network net(s);
    const auto count = io::get<std::uint64_t>(is, "NET1 header");
    if (count != net.parameter_count()) {
        throw std::runtime_error("NET1: parameter count " + std::to_string(count) +
                                 " does not match architecture (" +
                                 std::to_string(net.parameter_count()) + ")");
    }
    std::vector<float> flat(count);
    io::get_array(is, flat, "NET1 parameters");
    net.set_flat_parameters(flat);
    if (io::get<std::uint8_t>(is, "NET1 adam flag")) {
        AdamState& st = net.adam();
        st.step = io::get<std::uint64_t>(is, "NET1 adam");
        auto params = net.parameters();
        st.m.clear();
        st.v.clear();
        for (auto& p : params) {
            st.m.emplace_back(p.value->size());
            io::get_array(is, st.m.back(), "NET1 adam m");
        }
        for (auto& p : params) {
            st.v.emplace_back(p.value->size());
            io::get_array(is, st.v.back(), "NET1 adam v");
        }
    }
    return net;
}

}  // namespace latentad::nn
