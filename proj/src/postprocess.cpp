#include "latentad/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <stdexcept>

namespace latentad::post {

Histogram histogram(const Volume& map, const BinaryMask* roi, int bins) {
    if (bins < 2) throw std::invalid_argument("otsu: need at least 2 bins");
    if (roi) require_same_geometry(map.geometry(), roi->geometry(), "otsu roi");
    Histogram h;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    bool any = false;
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (roi && !(*roi)[i]) continue;
        const double v = map[i];
        if (!std::isfinite(v)) throw std::invalid_argument("otsu: non-finite map value");
        if (!any) {
            h.lo = h.hi = v;
            any = true;
        }
        h.lo = std::min(h.lo, v);
        h.hi = std::max(h.hi, v);
    }
    if (!any || !(h.hi > h.lo)) throw std::invalid_argument("otsu: degenerate histogram");
    const double scale = static_cast<double>(bins) / (h.hi - h.lo);
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (roi && !(*roi)[i]) continue;
        const int b = std::min(bins - 1, static_cast<int>((map[i] - h.lo) * scale));
        ++h.counts[static_cast<std::size_t>(b)];
    }
    return h;
}

int otsu_bin(const std::vector<std::uint64_t>& counts) {
    // sigma_B^2 is proportional to (N s0 - n0 S)^2 / (n0 n1); the difference is exact in
    // 128-bit integers, so only the final ratio is rounded.
    __int128 n_total = 0, s_total = 0;
    int occupied = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        n_total += counts[i];
        s_total += static_cast<__int128>(counts[i]) * static_cast<__int128>(i);
        if (counts[i]) ++occupied;
    }
    if (occupied < 2) throw std::invalid_argument("otsu: degenerate histogram");
    __int128 n0 = 0, s0 = 0;
    int best = -1;
    long double best_val = -1.0L;
    for (std::size_t k = 0; k + 1 < counts.size(); ++k) {
        n0 += counts[k];
        s0 += static_cast<__int128>(counts[k]) * static_cast<__int128>(k);
        const __int128 n1 = n_total - n0;
        if (n0 == 0 || n1 == 0) continue;
        const auto d = static_cast<long double>(n_total * s0 - n0 * s_total);
        const long double val =
            d * d / (static_cast<long double>(n0) * static_cast<long double>(n1));
        if (val > best_val) {
            best_val = val;
            best = static_cast<int>(k);
        }
    }
    return best;
}

double otsu_threshold(const Volume& map, const BinaryMask* roi, int bins) {
    const Histogram h = histogram(map, roi, bins);
    return h.upper_edge(otsu_bin(h.counts));
}

BinaryMask binarize(const Volume& map, double threshold) {
    BinaryMask out(map.geometry());
    for (std::size_t i = 0; i < map.size(); ++i) out[i] = map[i] >= threshold ? 1 : 0;
    return out;
}

Element structuring_element(int connectivity, int radius) {
    if (radius < 0) throw std::invalid_argument("morphology: negative radius");
    if (connectivity != 6 && connectivity != 18 && connectivity != 26) {
        throw std::invalid_argument("connectivity must be 6, 18 or 26");
    }
    Element se;
    for (int dz = -radius; dz <= radius; ++dz) {
        for (int dy = -radius; dy <= radius; ++dy) {
            for (int dx = -radius; dx <= radius; ++dx) {
                const int l1 = std::abs(dx) + std::abs(dy) + std::abs(dz);
                const int linf = std::max({std::abs(dx), std::abs(dy), std::abs(dz)});
                bool keep = false;
                if (connectivity == 6) keep = l1 <= radius;
                if (connectivity == 18) keep = l1 <= 2 * radius && linf <= radius;
                if (connectivity == 26) keep = true;
                if (keep) se.push_back({dx, dy, dz});
            }
        }
    }
    return se;
}

namespace {

template <bool Erode>
BinaryMask morph(const BinaryMask& mask, const Element& se) {
    const Dims d = mask.dims();
    BinaryMask out(mask.geometry());
    for (int z = 0; z < d.nz; ++z) {
        for (int y = 0; y < d.ny; ++y) {
            for (int x = 0; x < d.nx; ++x) {
                bool v = Erode;
                for (const auto& o : se) {
                    // Dilation reflects the element so that the two operations are duals.
                    const int sx = Erode ? x + o[0] : x - o[0];
                    const int sy = Erode ? y + o[1] : y - o[1];
                    const int sz = Erode ? z + o[2] : z - o[2];
                    if (sx < 0 || sy < 0 || sz < 0 || sx >= d.nx || sy >= d.ny || sz >= d.nz) {
                        continue;
                    }
                    const bool set = mask.at(sx, sy, sz) != 0;
                    if (Erode && !set) {
                        v = false;
                        break;
                    }
                    if (!Erode && set) {
                        v = true;
                        break;
                    }
                }
                out.at(x, y, z) = v ? 1 : 0;
            }
        }
    }
    return out;
}

std::vector<std::array<int, 3>> neighbour_offsets(int connectivity) {
    Element se = structuring_element(connectivity, 1);
    se.erase(std::remove(se.begin(), se.end(), std::array<int, 3>{0, 0, 0}), se.end());
    return se;
}

}  // namespace

BinaryMask erode(const BinaryMask& mask, const Element& se) { return morph<true>(mask, se); }
BinaryMask dilate(const BinaryMask& mask, const Element& se) { return morph<false>(mask, se); }

BinaryMask open_close(const BinaryMask& mask, int radius, int connectivity) {
    const Element se = structuring_element(connectivity, radius);
    const BinaryMask opened = dilate(erode(mask, se), se);
    return erode(dilate(opened, se), se);
}

BinaryMask fill_holes(const BinaryMask& mask, int connectivity) {
    const auto nbrs = neighbour_offsets(connectivity);
    const Dims d = mask.dims();
    BinaryMask outside(mask.geometry());
    std::deque<std::array<int, 3>> queue;
    auto seed = [&](int x, int y, int z) {
        if (!mask.at(x, y, z) && !outside.at(x, y, z)) {
            outside.at(x, y, z) = 1;
            queue.push_back({x, y, z});
        }
    };
    for (int z = 0; z < d.nz; ++z) {
        for (int y = 0; y < d.ny; ++y) {
            for (int x = 0; x < d.nx; ++x) {
                if (x == 0 || y == 0 || z == 0 || x == d.nx - 1 || y == d.ny - 1 ||
                    z == d.nz - 1) {
                    seed(x, y, z);
                }
            }
        }
    }
    while (!queue.empty()) {
        const auto p = queue.front();
        queue.pop_front();
        for (const auto& o : nbrs) {
            const int x = p[0] + o[0], y = p[1] + o[1], z = p[2] + o[2];
            if (x < 0 || y < 0 || z < 0 || x >= d.nx || y >= d.ny || z >= d.nz) continue;
            seed(x, y, z);
        }
    }
    BinaryMask out(mask.geometry());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = outside[i] ? 0 : 1;
    return out;
}

BinaryMask ComponentSet::mask_of(std::uint32_t label) const {
    BinaryMask out(labels.geometry());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = labels[i] == label ? 1 : 0;
    return out;
}

BinaryMask ComponentSet::foreground() const {
    BinaryMask out(labels.geometry());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = labels[i] ? 1 : 0;
    return out;
}

double equivalent_diameter_mm(double volume_mm3) {
    return std::cbrt(6.0 * volume_mm3 / std::numbers::pi);
}

ComponentSet from_labels(const LabelGrid& labels) {
    ComponentSet cs{labels, {}};
    const Dims d = labels.dims();
    const double vv = labels.geometry().voxel_volume_mm3();
    for (int z = 0; z < d.nz; ++z) {
        for (int y = 0; y < d.ny; ++y) {
            for (int x = 0; x < d.nx; ++x) {
                const std::uint32_t l = labels.at(x, y, z);
                if (l == 0) continue;
                if (l > cs.components.size()) {
                    const std::size_t old = cs.components.size();
                    cs.components.resize(l);
                    for (std::size_t k = old; k < l; ++k) {
                        cs.components[k].label = static_cast<std::uint32_t>(k + 1);
                        cs.components[k].bbox_min = {d.nx, d.ny, d.nz};
                        cs.components[k].bbox_max = {-1, -1, -1};
                    }
                }
                Component& c = cs.components[l - 1];
                ++c.voxels;
                const std::array<int, 3> p{x, y, z};
                for (int a = 0; a < 3; ++a) {
                    c.bbox_min[a] = std::min(c.bbox_min[a], p[a]);
                    c.bbox_max[a] = std::max(c.bbox_max[a], p[a]);
                }
            }
        }
    }
    for (auto& c : cs.components) {
        if (c.voxels == 0) throw std::invalid_argument("label grid: labels are not contiguous");
        c.volume_mm3 = static_cast<double>(c.voxels) * vv;
        c.diameter_mm = equivalent_diameter_mm(c.volume_mm3);
    }
    return cs;
}

ComponentSet connected_components(const BinaryMask& mask, int connectivity) {
    const auto nbrs = neighbour_offsets(connectivity);
    const Dims d = mask.dims();
    LabelGrid labels(mask.geometry());
    std::uint32_t next = 0;
    std::deque<std::array<int, 3>> queue;
    for (int z = 0; z < d.nz; ++z) {
        for (int y = 0; y < d.ny; ++y) {
            for (int x = 0; x < d.nx; ++x) {
                if (!mask.at(x, y, z) || labels.at(x, y, z)) continue;
                ++next;
                labels.at(x, y, z) = next;
                queue.push_back({x, y, z});
                while (!queue.empty()) {
                    const auto p = queue.front();
                    queue.pop_front();
                    for (const auto& o : nbrs) {
                        const int qx = p[0] + o[0], qy = p[1] + o[1], qz = p[2] + o[2];
                        if (qx < 0 || qy < 0 || qz < 0 || qx >= d.nx || qy >= d.ny ||
                            qz >= d.nz) {
                            continue;
                        }
                        if (mask.at(qx, qy, qz) && !labels.at(qx, qy, qz)) {
                            labels.at(qx, qy, qz) = next;
                            queue.push_back({qx, qy, qz});
                        }
                    }
                }
            }
        }
    }
    return from_labels(labels);
}

ComponentSet filter_small(const ComponentSet& components, std::size_t min_voxels,
                          double min_diameter_mm) {
    std::vector<std::uint32_t> remap(components.count() + 1, 0);
    ComponentSet out{LabelGrid(components.labels.geometry()), {}};
    for (const auto& c : components.components) {
        if (c.voxels >= min_voxels && c.diameter_mm >= min_diameter_mm) {
            Component kept = c;
            kept.label = static_cast<std::uint32_t>(out.components.size() + 1);
            remap[c.label] = kept.label;
            out.components.push_back(kept);
        }
    }
    for (std::size_t i = 0; i < out.labels.size(); ++i) {
        out.labels[i] = remap[components.labels[i]];
    }
    return out;
}

void PostprocessConfig::validate() const {
    if (bins < 2) throw std::invalid_argument("postprocess: bins must be >= 2");
    if (morphology_radius < 0) throw std::invalid_argument("postprocess: negative radius");
    for (int c : {morphology_connectivity, hole_connectivity, component_connectivity}) {
        if (c != 6 && c != 18 && c != 26) {
            throw std::invalid_argument("postprocess: connectivity must be 6, 18 or 26");
        }
    }
    if (min_diameter_mm < 0.0) throw std::invalid_argument("postprocess: negative diameter");
}

ComponentSet candidates(const Volume& anomaly, const BinaryMask* roi,
                        const PostprocessConfig& cfg) {
    cfg.validate();
    const double thr = cfg.fixed_threshold ? *cfg.fixed_threshold
                                           : otsu_threshold(anomaly, roi, cfg.bins);
    BinaryMask mask = binarize(anomaly, thr);
    if (roi) {
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = mask[i] && (*roi)[i];
    }
    mask = open_close(mask, cfg.morphology_radius, cfg.morphology_connectivity);
    mask = fill_holes(mask, cfg.hole_connectivity);
    return filter_small(connected_components(mask, cfg.component_connectivity), cfg.min_voxels,
                        cfg.min_diameter_mm);
}

}  // namespace latentad::post
