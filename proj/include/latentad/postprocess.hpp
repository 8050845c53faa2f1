#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "latentad/grid.hpp"

namespace latentad::post {

/// Histogram of map values inside roi (whole map when roi is null), `bins` equal-width bins
/// spanning [min, max]. Throws "degenerate histogram" when fewer than 2 distinct values.
struct Histogram {
    std::vector<std::uint64_t> counts;
    double lo = 0.0;
    double hi = 0.0;

    double upper_edge(int bin) const {
        return lo + (hi - lo) * static_cast<double>(bin + 1) / static_cast<double>(counts.size());
    }
};
Histogram histogram(const Volume& map, const BinaryMask* roi, int bins = 256);

/// Cut k maximising between-class variance when class 0 is bins [0, k]; ties go to the
/// lowest k. Needs at least two occupied bins.
int otsu_bin(const std::vector<std::uint64_t>& counts);

/// Upper edge of the Otsu bin: voxels at or above it form the foreground class.
double otsu_threshold(const Volume& map, const BinaryMask* roi = nullptr, int bins = 256);

/// voxel >= threshold -> 1.
BinaryMask binarize(const Volume& map, double threshold);

/// Offsets of a structuring element.
using Element = std::vector<std::array<int, 3>>;
/// connectivity 6: |dx|+|dy|+|dz| <= r; 18: |dx|+|dy|+|dz| <= 2r within the box; 26: the
/// full (2r+1)^3 box.
Element structuring_element(int connectivity, int radius = 1);

/// Voxels outside the grid are ignored, so erosion and dilation are exact duals.
BinaryMask erode(const BinaryMask& mask, const Element& se);
BinaryMask dilate(const BinaryMask& mask, const Element& se);

/// Opening then closing, one iteration each.
BinaryMask open_close(const BinaryMask& mask, int radius = 1, int connectivity = 6);

/// Background not connected to the grid boundary becomes foreground.
BinaryMask fill_holes(const BinaryMask& mask, int connectivity = 6);

struct Component {
    std::uint32_t label = 0;
    std::size_t voxels = 0;
    std::array<int, 3> bbox_min{0, 0, 0};
    std::array<int, 3> bbox_max{0, 0, 0};  // inclusive
    double volume_mm3 = 0.0;
    double diameter_mm = 0.0;  // cbrt(6 V / pi)
};

struct ComponentSet {
    LabelGrid labels;
    std::vector<Component> components;  // components[i].label == i + 1

    std::size_t count() const { return components.size(); }
    /// Mask of one component (label 1-based).
    BinaryMask mask_of(std::uint32_t label) const;
    BinaryMask foreground() const;
};

double equivalent_diameter_mm(double volume_mm3);

/// Labels follow the scan order (x fastest) of each component's first voxel.
ComponentSet connected_components(const BinaryMask& mask, int connectivity = 26);

/// Rebuilds component statistics from a label grid whose labels are 1..N.
ComponentSet from_labels(const LabelGrid& labels);

/// Keeps components with voxels >= min_voxels AND diameter >= min_diameter_mm; relabels 1..M
/// in the original order.
ComponentSet filter_small(const ComponentSet& components, std::size_t min_voxels = 20,
                          double min_diameter_mm = 3.0);

struct PostprocessConfig {
    int bins = 256;
    int morphology_radius = 1;
    int morphology_connectivity = 6;
    int hole_connectivity = 6;
    int component_connectivity = 26;
    std::size_t min_voxels = 20;
    double min_diameter_mm = 3.0;
    /// When set, replaces Otsu.
    std::optional<double> fixed_threshold;

    void validate() const;
};

/// threshold -> open/close -> fill holes -> components -> size filter.
ComponentSet candidates(const Volume& anomaly, const BinaryMask* roi,
                        const PostprocessConfig& cfg);

}  // namespace latentad::post
