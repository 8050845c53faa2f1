#include "latentad/nn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace latentad::nn {

namespace {

using ConstMatMap = Eigen::Map<const Eigen::MatrixXf>;

void fill_uniform(std::vector<float>& v, double bound, Rng& rng) {
    for (float& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
}

void require_shape(bool ok, const std::string& layer, const Shape& got) {
    if (!ok) {
        throw std::invalid_argument(layer + ": unexpected input shape " + got.str());
    }
}

}  // namespace

// ---------------------------------------------------------------- Conv3d

Conv3d::Conv3d(int in_channels, int out_channels, int kernel, int stride, Padding padding,
               Rng& rng, bool zero_init)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding) {
    if (in_ <= 0 || out_ <= 0 || (kernel_ != 1 && kernel_ != 3) || stride_ < 1) {
        throw std::invalid_argument("conv3d: unsupported configuration");
    }
    const int k3 = kernel_ * kernel_ * kernel_;
    weight_.assign(static_cast<std::size_t>(out_) * in_ * k3, 0.0f);
    bias_.assign(out_, 0.0f);
    grad_weight_.assign(weight_.size(), 0.0f);
    grad_bias_.assign(bias_.size(), 0.0f);
    if (!zero_init) {
        fill_uniform(weight_, std::sqrt(3.0 / (in_ * k3)), rng);
    }
}

int Conv3d::output_extent(int n, int kernel, int stride) {
    const int pad = kernel / 2;
    return (n + 2 * pad - kernel) / stride + 1;
}

std::vector<int> Conv3d::source_index(int n_in, int n_out) const {
    const int pad = kernel_ / 2;
    std::vector<int> idx(static_cast<std::size_t>(kernel_) * n_out);
    for (int k = 0; k < kernel_; ++k) {
        for (int o = 0; o < n_out; ++o) {
            int s = o * stride_ + k - pad;
            if (s < 0 || s >= n_in) {
                s = padding_ == Padding::Replicate ? std::clamp(s, 0, n_in - 1) : -1;
            }
            idx[static_cast<std::size_t>(k) * n_out + o] = s;
        }
    }
    return idx;
}

Tensor Conv3d::forward(const Tensor& x, const Context&) {
    const Shape in = x.shape();
    require_shape(in.c == in_, "conv3d", in);
    in_shape_ = in;
    out_shape_ = Shape{out_, output_extent(in.nx, kernel_, stride_),
                       output_extent(in.ny, kernel_, stride_),
                       output_extent(in.nz, kernel_, stride_)};
    src_x_ = source_index(in.nx, out_shape_.nx);
    src_y_ = source_index(in.ny, out_shape_.ny);
    src_z_ = source_index(in.nz, out_shape_.nz);

    const int k3 = kernel_ * kernel_ * kernel_;
    const std::size_t sites = out_shape_.spatial();
    const int onx = out_shape_.nx, ony = out_shape_.ny, onz = out_shape_.nz;
    columns_.assign(sites * static_cast<std::size_t>(in_) * k3, 0.0f);
    for (int i = 0; i < in_; ++i) {
        const float* src = x.channel(i);
        for (int kz = 0; kz < kernel_; ++kz) {
            for (int ky = 0; ky < kernel_; ++ky) {
                for (int kx = 0; kx < kernel_; ++kx) {
                    const std::size_t col = (static_cast<std::size_t>(i) * kernel_ + kz) *
                                                kernel_ * kernel_ +
                                            static_cast<std::size_t>(ky) * kernel_ + kx;
                    float* dst = columns_.data() + col * sites;
                    const int* sx = src_x_.data() + static_cast<std::size_t>(kx) * onx;
                    const int* sy = src_y_.data() + static_cast<std::size_t>(ky) * ony;
                    const int* sz = src_z_.data() + static_cast<std::size_t>(kz) * onz;
                    for (int oz = 0; oz < onz; ++oz) {
                        if (sz[oz] < 0) {
                            dst += static_cast<std::size_t>(ony) * onx;
                            continue;
                        }
                        for (int oy = 0; oy < ony; ++oy) {
                            if (sy[oy] < 0) {
                                dst += onx;
                                continue;
                            }
                            const float* row =
                                src + (static_cast<std::size_t>(sz[oz]) * in.ny + sy[oy]) * in.nx;
                            for (int ox = 0; ox < onx; ++ox) {
                                dst[ox] = sx[ox] < 0 ? 0.0f : row[sx[ox]];
                            }
                            dst += onx;
                        }
                    }
                }
            }
        }
    }

    // Operands are copied into owned (aligned) matrices: Eigen picks its kernels by pointer
    // alignment, and results would otherwise depend on where the heap placed the tensors.
    ConstMatMap cols(columns_.data(), static_cast<Eigen::Index>(sites),
                     static_cast<Eigen::Index>(in_) * k3);
    const Eigen::MatrixXf wt =
        ConstMatMap(weight_.data(), static_cast<Eigen::Index>(in_) * k3, out_);
    Eigen::MatrixXf ym(static_cast<Eigen::Index>(sites), out_);
    ym.noalias() = cols * wt;
    Tensor y(out_shape_);
    for (int o = 0; o < out_; ++o) {
        float* dst = y.channel(o);
        const float* src = ym.data() + static_cast<std::size_t>(o) * sites;
        for (std::size_t i = 0; i < sites; ++i) dst[i] = src[i] + bias_[o];
    }
    return y;
}

Tensor Conv3d::backward(const Tensor& grad_out) {
    if (columns_.empty()) {
        throw std::logic_error("conv3d: backward without forward");
    }
    require_shape(grad_out.shape() == out_shape_, "conv3d backward", grad_out.shape());
    const int k3 = kernel_ * kernel_ * kernel_;
    const std::size_t sites = out_shape_.spatial();
    const Eigen::MatrixXf dy =
        ConstMatMap(grad_out.data().data(), static_cast<Eigen::Index>(sites), out_);
    ConstMatMap cols(columns_.data(), static_cast<Eigen::Index>(sites),
                     static_cast<Eigen::Index>(in_) * k3);
    Eigen::MatrixXf dwt(static_cast<Eigen::Index>(in_) * k3, out_);
    dwt.noalias() = cols.transpose() * dy;
    for (std::size_t i = 0; i < grad_weight_.size(); ++i) grad_weight_[i] += dwt.data()[i];
    for (int o = 0; o < out_; ++o) {
        const float* col = dy.data() + static_cast<std::size_t>(o) * sites;
        double acc = 0.0;
        for (std::size_t i = 0; i < sites; ++i) acc += col[i];
        grad_bias_[o] += static_cast<float>(acc);
    }

    const Eigen::MatrixXf wt =
        ConstMatMap(weight_.data(), static_cast<Eigen::Index>(in_) * k3, out_);
    Eigen::MatrixXf dcols = dy * wt.transpose();

    Tensor dx(in_shape_);
    const int onx = out_shape_.nx, ony = out_shape_.ny, onz = out_shape_.nz;
    for (int i = 0; i < in_; ++i) {
        float* dst = dx.channel(i);
        for (int kz = 0; kz < kernel_; ++kz) {
            for (int ky = 0; ky < kernel_; ++ky) {
                for (int kx = 0; kx < kernel_; ++kx) {
                    const std::size_t col = (static_cast<std::size_t>(i) * kernel_ + kz) *
                                                kernel_ * kernel_ +
                                            static_cast<std::size_t>(ky) * kernel_ + kx;
                    const float* src = dcols.data() + col * sites;
                    const int* sx = src_x_.data() + static_cast<std::size_t>(kx) * onx;
                    const int* sy = src_y_.data() + static_cast<std::size_t>(ky) * ony;
                    const int* sz = src_z_.data() + static_cast<std::size_t>(kz) * onz;
                    for (int oz = 0; oz < onz; ++oz) {
                        for (int oy = 0; oy < ony; ++oy) {
                            if (sz[oz] < 0 || sy[oy] < 0) {
                                src += onx;
                                continue;
                            }
                            float* row = dst + (static_cast<std::size_t>(sz[oz]) * in_shape_.ny +
                                                sy[oy]) *
                                                   in_shape_.nx;
                            for (int ox = 0; ox < onx; ++ox) {
                                if (sx[ox] >= 0) row[sx[ox]] += src[ox];
                            }
                            src += onx;
                        }
                    }
                }
            }
        }
    }
    return dx;
}

void Conv3d::collect(std::vector<ParamRef>& out) {
    out.push_back({"conv.weight", &weight_, &grad_weight_});
    out.push_back({"conv.bias", &bias_, &grad_bias_});
}

// ---------------------------------------------------------------- GroupNorm

GroupNorm::GroupNorm(int channels, int groups) : channels_(channels) {
    if (channels <= 0) throw std::invalid_argument("groupnorm: channels must be positive");
    // Largest divisor of channels not above the requested group count.
    groups_ = std::max(1, std::min(groups, channels));
    while (channels % groups_ != 0) --groups_;
    gamma_.assign(channels, 1.0f);
    beta_.assign(channels, 0.0f);
    grad_gamma_.assign(channels, 0.0f);
    grad_beta_.assign(channels, 0.0f);
}

Tensor GroupNorm::forward(const Tensor& x, const Context&) {
    const Shape s = x.shape();
    require_shape(s.c == channels_, "groupnorm", s);
    const int per_group = channels_ / groups_;
    const std::size_t sp = s.spatial();
    const double n = static_cast<double>(per_group) * sp;
    normalized_ = Tensor(s);
    inv_std_.assign(groups_, 0.0f);
    Tensor y(s);
    for (int g = 0; g < groups_; ++g) {
        double sum = 0.0;
        for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
            const float* xc = x.channel(c);
            for (std::size_t i = 0; i < sp; ++i) sum += xc[i];
        }
        const double mean = sum / n;
        double var = 0.0;
        for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
            const float* xc = x.channel(c);
            for (std::size_t i = 0; i < sp; ++i) {
                const double d = xc[i] - mean;
                var += d * d;
            }
        }
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[g] = static_cast<float>(inv);
        for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
            const float* xc = x.channel(c);
            float* nc = normalized_.channel(c);
            float* yc = y.channel(c);
            for (std::size_t i = 0; i < sp; ++i) {
                nc[i] = static_cast<float>((xc[i] - mean) * inv);
                yc[i] = gamma_[c] * nc[i] + beta_[c];
            }
        }
    }
    return y;
}

Tensor GroupNorm::backward(const Tensor& grad_out) {
    if (inv_std_.empty()) throw std::logic_error("groupnorm: backward without forward");
    const Shape s = normalized_.shape();
    require_shape(grad_out.shape() == s, "groupnorm backward", grad_out.shape());
    const int per_group = channels_ / groups_;
    const std::size_t sp = s.spatial();
    const double n = static_cast<double>(per_group) * sp;
    Tensor dx(s);
    for (int g = 0; g < groups_; ++g) {
        double sum_dxhat = 0.0;
        double sum_dxhat_xhat = 0.0;
        for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
            const float* dy = grad_out.channel(c);
            const float* nc = normalized_.channel(c);
            double dg = 0.0, db = 0.0;
            for (std::size_t i = 0; i < sp; ++i) {
                dg += static_cast<double>(dy[i]) * nc[i];
                db += dy[i];
            }
            grad_gamma_[c] += static_cast<float>(dg);
            grad_beta_[c] += static_cast<float>(db);
            sum_dxhat += gamma_[c] * db;
            sum_dxhat_xhat += gamma_[c] * dg;
        }
        const double mean_d = sum_dxhat / n;
        const double mean_dx = sum_dxhat_xhat / n;
        for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
            const float* dy = grad_out.channel(c);
            const float* nc = normalized_.channel(c);
            float* out = dx.channel(c);
            for (std::size_t i = 0; i < sp; ++i) {
                const double dxhat = static_cast<double>(dy[i]) * gamma_[c];
                out[i] = static_cast<float>(inv_std_[g] * (dxhat - mean_d - nc[i] * mean_dx));
            }
        }
    }
    return dx;
}

void GroupNorm::collect(std::vector<ParamRef>& out) {
    out.push_back({"gn.gamma", &gamma_, &grad_gamma_});
    out.push_back({"gn.beta", &beta_, &grad_beta_});
}

// ---------------------------------------------------------------- SiLU

Tensor SiLU::forward(const Tensor& x, const Context&) {
    input_ = x;
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float v = x[i];
        y[i] = v / (1.0f + std::exp(-v));
    }
    return y;
}

Tensor SiLU::backward(const Tensor& grad_out) {
    if (!(grad_out.shape() == input_.shape())) {
        throw std::logic_error("silu: backward without matching forward");
    }
    Tensor dx(input_.shape());
    for (std::size_t i = 0; i < input_.size(); ++i) {
        const float v = input_[i];
        const float sig = 1.0f / (1.0f + std::exp(-v));
        dx[i] = grad_out[i] * sig * (1.0f + v * (1.0f - sig));
    }
    return dx;
}

// ---------------------------------------------------------------- TimeBias

TimeBias::TimeBias(int embed_dim, int channels, Rng& rng)
    : embed_dim_(embed_dim), channels_(channels) {
    weight_.assign(static_cast<std::size_t>(channels) * embed_dim, 0.0f);
    bias_.assign(channels, 0.0f);
    grad_weight_.assign(weight_.size(), 0.0f);
    grad_bias_.assign(channels, 0.0f);
    fill_uniform(weight_, std::sqrt(3.0 / embed_dim), rng);
}

Tensor TimeBias::forward(const Tensor& x, const Context& ctx) {
    require_shape(x.shape().c == channels_, "timebias", x.shape());
    if (static_cast<int>(ctx.time_embedding.size()) != embed_dim_) {
        throw std::invalid_argument("timebias: network requires a timestep");
    }
    embedding_.assign(ctx.time_embedding.begin(), ctx.time_embedding.end());
    Tensor y = x;
    const std::size_t sp = x.shape().spatial();
    for (int c = 0; c < channels_; ++c) {
        double shift = bias_[c];
        for (int e = 0; e < embed_dim_; ++e) {
            shift += static_cast<double>(weight_[static_cast<std::size_t>(c) * embed_dim_ + e]) *
                     embedding_[e];
        }
        float* yc = y.channel(c);
        for (std::size_t i = 0; i < sp; ++i) yc[i] += static_cast<float>(shift);
    }
    return y;
}

Tensor TimeBias::backward(const Tensor& grad_out) {
    if (embedding_.empty()) throw std::logic_error("timebias: backward without forward");
    const std::size_t sp = grad_out.shape().spatial();
    for (int c = 0; c < channels_; ++c) {
        const float* dy = grad_out.channel(c);
        double g = 0.0;
        for (std::size_t i = 0; i < sp; ++i) g += dy[i];
        grad_bias_[c] += static_cast<float>(g);
        for (int e = 0; e < embed_dim_; ++e) {
            grad_weight_[static_cast<std::size_t>(c) * embed_dim_ + e] +=
                static_cast<float>(g * embedding_[e]);
        }
    }
    return grad_out;
}

void TimeBias::collect(std::vector<ParamRef>& out) {
    out.push_back({"time.weight", &weight_, &grad_weight_});
    out.push_back({"time.bias", &bias_, &grad_bias_});
}

// ---------------------------------------------------------------- Dense

Dense::Dense(int in_features, int out_features, Rng& rng, bool zero_init)
    : in_(in_features), out_(out_features) {
    weight_.assign(static_cast<std::size_t>(out_) * in_, 0.0f);
    bias_.assign(out_, 0.0f);
    grad_weight_.assign(weight_.size(), 0.0f);
    grad_bias_.assign(out_, 0.0f);
    if (!zero_init) fill_uniform(weight_, std::sqrt(3.0 / in_), rng);
}

Tensor Dense::forward(const Tensor& x, const Context&) {
    require_shape(x.size() == static_cast<std::size_t>(in_) && x.shape().spatial() == 1, "dense",
                  x.shape());
    input_ = x;
    Tensor y(Shape{out_, 1, 1, 1});
    for (int o = 0; o < out_; ++o) {
        double acc = bias_[o];
        for (int i = 0; i < in_; ++i) {
            acc += static_cast<double>(weight_[static_cast<std::size_t>(o) * in_ + i]) * x[i];
        }
        y[o] = static_cast<float>(acc);
    }
    return y;
}

Tensor Dense::backward(const Tensor& grad_out) {
    if (input_.size() == 0) throw std::logic_error("dense: backward without forward");
    Tensor dx(input_.shape());
    for (int o = 0; o < out_; ++o) {
        const float g = grad_out[o];
        grad_bias_[o] += g;
        for (int i = 0; i < in_; ++i) {
            grad_weight_[static_cast<std::size_t>(o) * in_ + i] += g * input_[i];
            dx[i] += g * weight_[static_cast<std::size_t>(o) * in_ + i];
        }
    }
    return dx;
}

void Dense::collect(std::vector<ParamRef>& out) {
    out.push_back({"dense.weight", &weight_, &grad_weight_});
    out.push_back({"dense.bias", &bias_, &grad_bias_});
}

// ---------------------------------------------------------------- pooling / resampling

Tensor GlobalAvgPool::forward(const Tensor& x, const Context&) {
    in_shape_ = x.shape();
    Tensor y(Shape{in_shape_.c, 1, 1, 1});
    const std::size_t sp = in_shape_.spatial();
    for (int c = 0; c < in_shape_.c; ++c) {
        const float* xc = x.channel(c);
        double sum = 0.0;
        for (std::size_t i = 0; i < sp; ++i) sum += xc[i];
        y[c] = static_cast<float>(sum / static_cast<double>(sp));
    }
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
    if (in_shape_.c == 0) throw std::logic_error("avgpool: backward without forward");
    Tensor dx(in_shape_);
    const std::size_t sp = in_shape_.spatial();
    for (int c = 0; c < in_shape_.c; ++c) {
        const float g = grad_out[c] / static_cast<float>(sp);
        std::fill(dx.channel(c), dx.channel(c) + sp, g);
    }
    return dx;
}

Tensor upsample_nearest(const Tensor& x, Dims target) {
    const Shape s = x.shape();
    if (target.nx > 2 * s.nx || target.ny > 2 * s.ny || target.nz > 2 * s.nz ||
        target.nx < 1 || target.ny < 1 || target.nz < 1) {
        throw std::invalid_argument("upsample: target beyond 2x of input " + s.str());
    }
    Tensor y(Shape{s.c, target.nx, target.ny, target.nz});
    for (int c = 0; c < s.c; ++c) {
        for (int z = 0; z < target.nz; ++z) {
            for (int yy = 0; yy < target.ny; ++yy) {
                for (int xx = 0; xx < target.nx; ++xx) {
                    y.at(c, xx, yy, z) = x.at(c, xx / 2, yy / 2, z / 2);
                }
            }
        }
    }
    return y;
}

Tensor upsample_nearest_backward(const Tensor& grad_out, Shape input_shape) {
    Tensor dx(input_shape);
    const Shape s = grad_out.shape();
    for (int c = 0; c < s.c; ++c) {
        for (int z = 0; z < s.nz; ++z) {
            for (int yy = 0; yy < s.ny; ++yy) {
                for (int xx = 0; xx < s.nx; ++xx) {
                    dx.at(c, xx / 2, yy / 2, z / 2) += grad_out.at(c, xx, yy, z);
                }
            }
        }
    }
    return dx;
}

Tensor Upsample2x::forward(const Tensor& x, const Context&) {
    in_shape_ = x.shape();
    return upsample_nearest(x, Dims{2 * in_shape_.nx, 2 * in_shape_.ny, 2 * in_shape_.nz});
}

Tensor Upsample2x::backward(const Tensor& grad_out) {
    if (in_shape_.c == 0) throw std::logic_error("upsample: backward without forward");
    return upsample_nearest_backward(grad_out, in_shape_);
}

// ---------------------------------------------------------------- Sequential

Tensor Sequential::forward(const Tensor& x, const Context& ctx) {
    Tensor h = x;
    for (auto& layer : layers_) h = layer->forward(h, ctx);
    return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
    Tensor g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
}

void Sequential::collect(std::vector<ParamRef>& out) {
    for (auto& layer : layers_) layer->collect(out);
}

// ---------------------------------------------------------------- helpers

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const Shape sa = a.shape(), sb = b.shape();
    if (!(sa.dims() == sb.dims())) {
        throw std::invalid_argument("concat: spatial mismatch " + sa.str() + " vs " + sb.str());
    }
    Tensor out(Shape{sa.c + sb.c, sa.nx, sa.ny, sa.nz});
    std::copy(a.data().begin(), a.data().end(), out.data().begin());
    std::copy(b.data().begin(), b.data().end(), out.data().begin() + static_cast<long>(a.size()));
    return out;
}

void split_channels(const Tensor& joined, int first_channels, Tensor& a, Tensor& b) {
    const Shape s = joined.shape();
    a = Tensor(Shape{first_channels, s.nx, s.ny, s.nz});
    b = Tensor(Shape{s.c - first_channels, s.nx, s.ny, s.nz});
    std::copy(joined.data().begin(), joined.data().begin() + static_cast<long>(a.size()),
              a.data().begin());
    std::copy(joined.data().begin() + static_cast<long>(a.size()), joined.data().end(),
              b.data().begin());
}

std::vector<float> timestep_embedding(int t, int dim) {
    const int half = dim / 2;
    std::vector<float> emb(dim, 0.0f);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        emb[i] = static_cast<float>(std::sin(t * freq));
        emb[half + i] = static_cast<float>(std::cos(t * freq));
    }
    return emb;
}

}  // namespace latentad::nn
