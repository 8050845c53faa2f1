#include "latentad/volgrid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace latentad::volgrid {

namespace {

void require_finite(const Volume& vol, const char* what) {
    for (float v : vol.data()) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument(std::string(what) + ": non-finite voxel value");
        }
    }
}

Dims isotropic_dims(const Geometry& g, double target_mm) {
    if (!(target_mm > 0.0) || !std::isfinite(target_mm)) {
        throw std::invalid_argument("resample: target spacing must be positive");
    }
    auto axis = [&](int n, double s) {
        return std::max(1, static_cast<int>(std::lround(n * s / target_mm)));
    };
    return Dims{axis(g.dims.nx, g.spacing.x), axis(g.dims.ny, g.spacing.y),
                axis(g.dims.nz, g.spacing.z)};
}

// Input coordinate of output sample i along one axis.
double source_coord(int i, int n_in, int n_out) {
    if (n_out <= 1 || n_in <= 1) {
        return 0.0;
    }
    return static_cast<double>(i) * (n_in - 1) / (n_out - 1);
}

struct AxisWeights {
    std::vector<int> lo;
    std::vector<int> hi;
    std::vector<double> frac;
};

AxisWeights linear_axis(int n_in, int n_out) {
    AxisWeights w;
    w.lo.resize(n_out);
    w.hi.resize(n_out);
    w.frac.resize(n_out);
    for (int i = 0; i < n_out; ++i) {
        const double u = source_coord(i, n_in, n_out);
        int lo = static_cast<int>(std::floor(u));
        lo = std::clamp(lo, 0, n_in - 1);
        const int hi = std::min(lo + 1, n_in - 1);
        w.lo[i] = lo;
        w.hi[i] = hi;
        w.frac[i] = u - lo;
    }
    return w;
}

std::vector<int> nearest_axis(int n_in, int n_out) {
    std::vector<int> idx(n_out);
    for (int i = 0; i < n_out; ++i) {
        idx[i] = std::clamp(static_cast<int>(std::lround(source_coord(i, n_in, n_out))), 0,
                            n_in - 1);
    }
    return idx;
}

}  // namespace

Volume resample_to(const Volume& vol, Dims dims, Vec3 spacing) {
    require_finite(vol, "resample");
    Geometry out_geom{dims, spacing, vol.origin()};
    out_geom.validate();
    const Dims in = vol.dims();
    const AxisWeights wx = linear_axis(in.nx, dims.nx);
    const AxisWeights wy = linear_axis(in.ny, dims.ny);
    const AxisWeights wz = linear_axis(in.nz, dims.nz);

    Volume out(out_geom);
    for (int z = 0; z < dims.nz; ++z) {
        const double fz = wz.frac[z];
        for (int y = 0; y < dims.ny; ++y) {
            const double fy = wy.frac[y];
            for (int x = 0; x < dims.nx; ++x) {
                const double fx = wx.frac[x];
                auto v = [&](int xi, int yi, int zi) -> double { return vol.at(xi, yi, zi); };
                // Exact sample positions skip interpolation so grid-aligned copies are bitwise.
                if (fx == 0.0 && fy == 0.0 && fz == 0.0) {
                    out.at(x, y, z) = vol.at(wx.lo[x], wy.lo[y], wz.lo[z]);
                    continue;
                }
                const double c00 = v(wx.lo[x], wy.lo[y], wz.lo[z]) * (1 - fx) +
                                   v(wx.hi[x], wy.lo[y], wz.lo[z]) * fx;
                const double c10 = v(wx.lo[x], wy.hi[y], wz.lo[z]) * (1 - fx) +
                                   v(wx.hi[x], wy.hi[y], wz.lo[z]) * fx;
                const double c01 = v(wx.lo[x], wy.lo[y], wz.hi[z]) * (1 - fx) +
                                   v(wx.hi[x], wy.lo[y], wz.hi[z]) * fx;
                const double c11 = v(wx.lo[x], wy.hi[y], wz.hi[z]) * (1 - fx) +
                                   v(wx.hi[x], wy.hi[y], wz.hi[z]) * fx;
                const double c0 = c00 * (1 - fy) + c10 * fy;
                const double c1 = c01 * (1 - fy) + c11 * fy;
                out.at(x, y, z) = static_cast<float>(c0 * (1 - fz) + c1 * fz);
            }
        }
    }
    return out;
}

BinaryMask resample_to(const BinaryMask& mask, Dims dims, Vec3 spacing) {
    Geometry out_geom{dims, spacing, mask.origin()};
    out_geom.validate();
    const Dims in = mask.dims();
    const auto ix = nearest_axis(in.nx, dims.nx);
    const auto iy = nearest_axis(in.ny, dims.ny);
    const auto iz = nearest_axis(in.nz, dims.nz);
    BinaryMask out(out_geom);
    for (int z = 0; z < dims.nz; ++z) {
        for (int y = 0; y < dims.ny; ++y) {
            for (int x = 0; x < dims.nx; ++x) {
                out.at(x, y, z) = mask.at(ix[x], iy[y], iz[z]) ? 1 : 0;
            }
        }
    }
    return out;
}

Volume resample_isotropic(const Volume& vol, double target_mm) {
    const Dims dims = isotropic_dims(vol.geometry(), target_mm);
    return resample_to(vol, dims, Vec3{target_mm, target_mm, target_mm});
}

BinaryMask resample_isotropic(const BinaryMask& mask, double target_mm) {
    const Dims dims = isotropic_dims(mask.geometry(), target_mm);
    return resample_to(mask, dims, Vec3{target_mm, target_mm, target_mm});
}

Volume normalize_intensity(const Volume& vol, double lo, double hi) {
    if (!(lo < hi)) {
        throw std::invalid_argument("normalize_intensity: lo must be below hi");
    }
    require_finite(vol, "normalize_intensity");
    Volume out(vol.geometry());
    const double scale = 2.0 / (hi - lo);
    for (std::size_t i = 0; i < vol.size(); ++i) {
        const double v = std::clamp(static_cast<double>(vol[i]), lo, hi);
        out[i] = static_cast<float>(std::clamp((v - lo) * scale - 1.0, -1.0, 1.0));
    }
    return out;
}

PatchPlacement place_patch(const Geometry& full, const Vec3& center_mm, const Vec3& size_mm) {
    PatchPlacement p;
    int pd[3];
    for (int a = 0; a < 3; ++a) {
        if (!(size_mm[a] > 0.0)) {
            throw std::invalid_argument("extract_patch: patch size must be positive");
        }
        pd[a] = std::max(1, static_cast<int>(std::lround(size_mm[a] / full.spacing[a])));
        if (pd[a] > full.dims[a]) {
            throw std::invalid_argument("extract_patch: patch larger than volume on axis " +
                                        std::to_string(a));
        }
        const double c_vox = (center_mm[a] - full.origin[a]) / full.spacing[a];
        int corner = static_cast<int>(std::lround(c_vox - pd[a] / 2.0));
        corner = std::clamp(corner, 0, full.dims[a] - pd[a]);
        p.offset_voxels[a] = corner;
    }
    p.patch_dims = Dims{pd[0], pd[1], pd[2]};
    return p;
}

Patch extract_patch(const Volume& vol, const Vec3& center_mm, const Vec3& size_mm) {
    const PatchPlacement placement = place_patch(vol.geometry(), center_mm, size_mm);
    return Patch{crop(vol, placement), placement};
}

Volume compose_full_map(std::span<const Patch> patches, const Geometry& full) {
    full.validate();
    Volume out(full, 0.0f);
    std::vector<std::uint8_t> covered(full.dims.count(), 0);
    for (const Patch& patch : patches) {
        if (!(patch.volume.spacing() == full.spacing)) {
            throw std::invalid_argument("compose_full_map: inconsistent spacing");
        }
        const auto& off = patch.placement.offset_voxels;
        const Dims pd = patch.volume.dims();
        if (!(pd == patch.placement.patch_dims)) {
            throw std::invalid_argument("compose_full_map: patch dims disagree with placement");
        }
        if (off[0] < 0 || off[1] < 0 || off[2] < 0 || off[0] + pd.nx > full.dims.nx ||
            off[1] + pd.ny > full.dims.ny || off[2] + pd.nz > full.dims.nz) {
            throw std::invalid_argument("compose_full_map: placement out of bounds");
        }
        for (int z = 0; z < pd.nz; ++z) {
            for (int y = 0; y < pd.ny; ++y) {
                for (int x = 0; x < pd.nx; ++x) {
                    const std::size_t i = out.index(x + off[0], y + off[1], z + off[2]);
                    const float v = patch.volume.at(x, y, z);
                    out[i] = covered[i] ? std::max(out[i], v) : v;
                    covered[i] = 1;
                }
            }
        }
    }
    return out;
}

BinaryMask placement_mask(std::span<const PatchPlacement> placements, const Geometry& full) {
    BinaryMask mask(full, 0);
    for (const auto& p : placements) {
        for (int z = 0; z < p.patch_dims.nz; ++z) {
            for (int y = 0; y < p.patch_dims.ny; ++y) {
                for (int x = 0; x < p.patch_dims.nx; ++x) {
                    const int gx = x + p.offset_voxels[0];
                    const int gy = y + p.offset_voxels[1];
                    const int gz = z + p.offset_voxels[2];
                    if (mask.contains(gx, gy, gz)) {
                        mask.at(gx, gy, gz) = 1;
                    }
                }
            }
        }
    }
    return mask;
}

}  // namespace latentad::volgrid
