#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace latentad {

struct Dims {
    int nx = 0;
    int ny = 0;
    int nz = 0;

    std::size_t count() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
               static_cast<std::size_t>(nz);
    }
    int operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
    bool operator==(const Dims&) const = default;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
    double& operator[](int axis) { return axis == 0 ? x : axis == 1 ? y : z; }
    bool operator==(const Vec3&) const = default;
};

/// Physical placement of a voxel grid: dims, mm per voxel, and the position of voxel (0,0,0).
struct Geometry {
    Dims dims;
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin;

    bool operator==(const Geometry&) const = default;

    void validate() const {
        if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) {
            throw std::invalid_argument("grid dims must be positive");
        }
        if (!(spacing.x > 0.0 && spacing.y > 0.0 && spacing.z > 0.0)) {
            throw std::invalid_argument("grid spacing must be positive");
        }
    }

    double voxel_volume_mm3() const { return spacing.x * spacing.y * spacing.z; }
};

/// Dense scalar grid in x-fastest order. Volume, BinaryMask and LabelGrid are instances.
template <typename T>
class Grid {
public:
    using value_type = T;

    Grid() = default;

    explicit Grid(Geometry geometry, T fill = T{})
        : geometry_(geometry), data_((geometry.validate(), geometry.dims.count()), fill) {}

    Grid(Geometry geometry, std::vector<T> data) : geometry_(geometry), data_(std::move(data)) {
        geometry_.validate();
        if (data_.size() != geometry_.dims.count()) {
            throw std::invalid_argument("grid data length " + std::to_string(data_.size()) +
                                        " does not match dims " +
                                        std::to_string(geometry_.dims.count()));
        }
    }

    const Geometry& geometry() const { return geometry_; }
    const Dims& dims() const { return geometry_.dims; }
    const Vec3& spacing() const { return geometry_.spacing; }
    const Vec3& origin() const { return geometry_.origin; }

    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * geometry_.dims.ny + y) * geometry_.dims.nx + x;
    }
    bool contains(int x, int y, int z) const {
        return x >= 0 && y >= 0 && z >= 0 && x < geometry_.dims.nx && y < geometry_.dims.ny &&
               z < geometry_.dims.nz;
    }

    T& at(int x, int y, int z) { return data_[index(x, y, z)]; }
    const T& at(int x, int y, int z) const { return data_[index(x, y, z)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool operator==(const Grid&) const = default;

private:
    Geometry geometry_;
    std::vector<T> data_;
};

using Volume = Grid<float>;
using BinaryMask = Grid<std::uint8_t>;
using LabelGrid = Grid<std::uint32_t>;

/// Throws when two grids do not share dims, spacing and origin.
inline void require_same_geometry(const Geometry& a, const Geometry& b, const char* what) {
    if (!(a == b)) {
        throw std::invalid_argument(std::string(what) + ": geometry mismatch");
    }
}

}  // namespace latentad
