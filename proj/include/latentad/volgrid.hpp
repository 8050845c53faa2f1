#pragma once

#include <span>
#include <utility>
#include <vector>

#include "latentad/grid.hpp"

namespace latentad::volgrid {

/// Corner of an extracted patch inside the full grid, plus the patch size in voxels.
struct PatchPlacement {
    std::array<int, 3> offset_voxels{0, 0, 0};
    Dims patch_dims;

    bool operator==(const PatchPlacement&) const = default;
};

struct Patch {
    Volume volume;
    PatchPlacement placement;
};

/// Trilinear resampling onto an isotropic grid. Sample i of an axis maps to input
/// coordinate i * (n_in - 1) / (n_out - 1), so first and last samples stay anchored.
Volume resample_isotropic(const Volume& vol, double target_mm);

/// Nearest-neighbour variant of resample_isotropic; keeps masks binary.
BinaryMask resample_isotropic(const BinaryMask& mask, double target_mm);

/// Resample a volume onto explicit dims with the same corner-anchored mapping.
Volume resample_to(const Volume& vol, Dims dims, Vec3 spacing);
BinaryMask resample_to(const BinaryMask& mask, Dims dims, Vec3 spacing);

/// Clip to [lo, hi] and map affinely onto [-1, 1].
Volume normalize_intensity(const Volume& vol, double lo = -200.0, double hi = 300.0);

/// Patch of size_mm centred at center_mm (physical coordinates). A window that would
/// leave the grid is shifted back inside; it is never shrunk or padded.
Patch extract_patch(const Volume& vol, const Vec3& center_mm, const Vec3& size_mm);

/// Placement that extract_patch would choose, without copying voxels.
PatchPlacement place_patch(const Geometry& full, const Vec3& center_mm, const Vec3& size_mm);

/// Copy an arbitrary placement out of a grid.
template <typename T>
Grid<T> crop(const Grid<T>& full, const PatchPlacement& placement) {
    const auto& off = placement.offset_voxels;
    const Dims pd = placement.patch_dims;
    if (off[0] < 0 || off[1] < 0 || off[2] < 0 || off[0] + pd.nx > full.dims().nx ||
        off[1] + pd.ny > full.dims().ny || off[2] + pd.nz > full.dims().nz) {
        throw std::invalid_argument("crop: placement outside grid");
    }
    Geometry g{pd, full.spacing(),
               Vec3{full.origin().x + off[0] * full.spacing().x,
                    full.origin().y + off[1] * full.spacing().y,
                    full.origin().z + off[2] * full.spacing().z}};
    Grid<T> out(g);
    for (int z = 0; z < pd.nz; ++z) {
        for (int y = 0; y < pd.ny; ++y) {
            for (int x = 0; x < pd.nx; ++x) {
                out.at(x, y, z) = full.at(x + off[0], y + off[1], z + off[2]);
            }
        }
    }
    return out;
}

/// Paste patches onto a zero background; overlapping voxels keep the maximum.
Volume compose_full_map(std::span<const Patch> patches, const Geometry& full);

/// Union of placement windows as a mask on the full grid.
BinaryMask placement_mask(std::span<const PatchPlacement> placements, const Geometry& full);

}  // namespace latentad::volgrid
