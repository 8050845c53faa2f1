#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentad/grid.hpp"

namespace latentad::nn {

struct Shape {
    int c = 0;
    int nx = 0;
    int ny = 0;
    int nz = 0;

    std::size_t spatial() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
               static_cast<std::size_t>(nz);
    }
    std::size_t size() const { return static_cast<std::size_t>(c) * spatial(); }
    Dims dims() const { return Dims{nx, ny, nz}; }
    bool operator==(const Shape&) const = default;
    std::string str() const {
        return "(" + std::to_string(c) + "," + std::to_string(nx) + "," + std::to_string(ny) +
               "," + std::to_string(nz) + ")";
    }
};

/// One sample: channels x (nx, ny, nz), channel-major then x-fastest.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f) : shape_(shape), data_(shape.size(), fill) {}
    Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.size()) {
            throw std::invalid_argument("tensor data length does not match shape " +
                                        shape_.str());
        }
    }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }

    float* channel(int c) { return data_.data() + static_cast<std::size_t>(c) * shape_.spatial(); }
    const float* channel(int c) const {
        return data_.data() + static_cast<std::size_t>(c) * shape_.spatial();
    }
    float& at(int c, int x, int y, int z) {
        return data_[static_cast<std::size_t>(c) * shape_.spatial() +
                     (static_cast<std::size_t>(z) * shape_.ny + y) * shape_.nx + x];
    }
    float at(int c, int x, int y, int z) const {
        return data_[static_cast<std::size_t>(c) * shape_.spatial() +
                     (static_cast<std::size_t>(z) * shape_.ny + y) * shape_.nx + x];
    }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }

    bool all_finite() const {
        for (float v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

/// Single-channel view of a volume as a tensor, and back.
inline Tensor to_tensor(const Volume& vol) {
    const Dims d = vol.dims();
    return Tensor(Shape{1, d.nx, d.ny, d.nz}, vol.data());
}

inline Volume to_volume(const Tensor& t, const Geometry& geometry) {
    if (t.shape().c != 1 || !(t.shape().dims() == geometry.dims)) {
        throw std::invalid_argument("to_volume: tensor " + t.shape().str() +
                                    " does not fit geometry");
    }
    return Volume(geometry, t.data());
}

}  // namespace latentad::nn
