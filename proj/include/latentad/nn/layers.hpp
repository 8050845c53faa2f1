#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "latentad/nn/tensor.hpp"
#include "latentad/rng.hpp"

namespace latentad::nn {

/// Cache-line aligned storage, so vectorized kernels take the same path on every run.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), alignment));
    }
    void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using AlignedFloats = std::vector<float, AlignedAllocator<float>>;

/// A trainable array and its gradient accumulator.
struct ParamRef {
    std::string name;
    std::vector<float>* value = nullptr;
    std::vector<float>* grad = nullptr;
};

/// Per-call conditioning shared by every layer of a forward pass.
struct Context {
    std::span<const float> time_embedding;
};

/// Layers cache what backward needs during forward; backward accumulates parameter
/// gradients and returns the gradient with respect to the forward input.
class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, const Context& ctx) = 0;
    virtual Tensor backward(const Tensor& grad_out) = 0;
    virtual void collect(std::vector<ParamRef>&) {}
    virtual std::string name() const = 0;
};

enum class Padding : std::uint8_t { Zero = 0, Replicate = 1 };

class Conv3d final : public Layer {
public:
    Conv3d(int in_channels, int out_channels, int kernel, int stride, Padding padding, Rng& rng,
           bool zero_init = false);

    Tensor forward(const Tensor& x, const Context& ctx) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(std::vector<ParamRef>& out) override;
    std::string name() const override { return "conv3d"; }

    std::vector<float>& weight() { return weight_; }
    std::vector<float>& bias() { return bias_; }
    static int output_extent(int n, int kernel, int stride);

private:
    std::vector<int> source_index(int n_in, int n_out) const;  // [k * n_out + o], -1 = zero pad

    int in_, out_, kernel_, stride_;
    Padding padding_;
    std::vector<float> weight_, bias_, grad_weight_, grad_bias_;
    Shape in_shape_, out_shape_;
    AlignedFloats columns_;  // im2col buffer retained for backward
    std::vector<int> src_x_, src_y_, src_z_;
};

class GroupNorm final : public Layer {
public:
    explicit GroupNorm(int channels, int groups = 8);

    Tensor forward(const Tensor& x, const Context& ctx) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(std::vector<ParamRef>& out) override;
    std::string name() const override { return "groupnorm"; }

    int groups() const { return groups_; }
    std::vector<float>& gamma() { return gamma_; }
    std::vector<float>& beta() { return beta_; }

private:
    int channels_, groups_;
    float eps_ = 1e-5f;
    std::vector<float> gamma_, beta_, grad_gamma_, grad_beta_;
    Tensor normalized_;
    std::vector<float> inv_std_;
};

class SiLU final : public Layer {
public:
    Tensor forward(const Tensor& x, const Context& ctx) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string name() const override { return "silu"; }

private:
    Tensor input_;
};

/// Adds a learned projection of the time embedding to every channel.
class TimeBias final : public Layer {
public:
    TimeBias(int embed_dim, int channels, Rng& rng);

    Tensor forward(const Tensor& x, const Context& ctx) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(std::vector<ParamRef>& out) override;
    std::string name() const override { return "timebias"; }

private:
    int embed_dim_, channels_;
    std::vector<float> weight_, bias_, grad_weight_, grad_bias_;
    std::vector<float> embedding_;
};

/// Fully connected layer on a (C,1,1,1) tensor.
class Dense final : public Layer {
public:
    Dense(int in_features, int out_features, Rng& rng, bool zero_init = false);

    Tensor forward(const Tensor& x, const Context& ctx) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(std::vector<ParamRef>& out) override;
    std::string name() const override { return "dense"; }

    std::vector<float>& weight() { return weight_; }
    std::vector<float>& bias() { return bias_; }

private:
    int in_, out_;
    std::vector<float> weight_, bias_, grad_weight_, grad_bias_;
    Tensor input_;
};

class GlobalAvgPool final : public Layer {
public:
    Tensor forward(const Tensor& x, const Context& ctx) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string name() const override { return "avgpool"; }

private:
    Shape in_shape_;
};

/// Nearest-neighbour upsampling onto explicit target dims: output voxel i reads input i/2.
Tensor upsample_nearest(const Tensor& x, Dims target);
Tensor upsample_nearest_backward(const Tensor& grad_out, Shape input_shape);

class Upsample2x final : public Layer {
public:
    Tensor forward(const Tensor& x, const Context& ctx) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string name() const override { return "upsample"; }

private:
    Shape in_shape_;
};

class Sequential final : public Layer {
public:
    Sequential() = default;
    Sequential& add(std::unique_ptr<Layer> layer) {
        layers_.push_back(std::move(layer));
        return *this;
    }
    template <typename L, typename... Args>
    L& emplace(Args&&... args) {
        auto ptr = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *ptr;
        layers_.push_back(std::move(ptr));
        return ref;
    }

    Tensor forward(const Tensor& x, const Context& ctx) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(std::vector<ParamRef>& out) override;
    std::string name() const override { return "sequential"; }

    std::size_t size() const { return layers_.size(); }
    Layer& operator[](std::size_t i) { return *layers_[i]; }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

/// Channel concatenation helpers used by skip connections.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& joined, int first_channels, Tensor& a, Tensor& b);

/// 64-dim sinusoidal embedding of a timestep (sin half then cos half).
std::vector<float> timestep_embedding(int t, int dim = 64);

}  // namespace latentad::nn
