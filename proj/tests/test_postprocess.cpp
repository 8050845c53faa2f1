#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>

#include "latentad/postprocess.hpp"
#include "metric_oracles.hpp"
#include "latentad/rng.hpp"

using namespace latentad;
using namespace latentad::post;
using latentad::testing::otsu_oracle;

namespace {

BinaryMask make_mask(Dims d, Vec3 spacing = {1, 1, 1}) {
    return BinaryMask(Geometry{d, spacing, {}});
}

BinaryMask random_mask(Dims d, double p, Rng& rng) {
    BinaryMask m = make_mask(d);
    for (auto& v : m.data()) v = rng.bernoulli(p);
    return m;
}

std::size_t count(const BinaryMask& m) {
    return std::accumulate(m.data().begin(), m.data().end(), std::size_t{0});
}

BinaryMask complement(const BinaryMask& m) {
    BinaryMask out = m;
    for (auto& v : out.data()) v = !v;
    return out;
}

Element mirror(const Element& se) {
    Element out;
    for (const auto& o : se) out.push_back({-o[0], -o[1], -o[2]});
    return out;
}

// Direct definitions; offsets falling outside the grid are skipped.
BinaryMask erode_oracle(const BinaryMask& m, const Element& se) {
    BinaryMask out = make_mask(m.dims());
    const Dims d = m.dims();
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                bool all = true;
                for (const auto& o : se) {
                    const int a = x + o[0], b = y + o[1], c = z + o[2];
                    if (m.contains(a, b, c) && !m.at(a, b, c)) all = false;
                }
                out.at(x, y, z) = all;
            }
    return out;
}

BinaryMask dilate_oracle(const BinaryMask& m, const Element& se) {
    BinaryMask out = make_mask(m.dims());
    const Dims d = m.dims();
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                if (!m.at(x, y, z)) continue;
                for (const auto& o : se) {
                    const int a = x + o[0], b = y + o[1], c = z + o[2];
                    if (out.contains(a, b, c)) out.at(a, b, c) = 1;
                }
            }
    return out;
}

bool adjacent(std::array<int, 3> a, std::array<int, 3> b, int connectivity) {
    const int dx = std::abs(a[0] - b[0]), dy = std::abs(a[1] - b[1]), dz = std::abs(a[2] - b[2]);
    if (std::max({dx, dy, dz}) != 1) return false;
    const int l1 = dx + dy + dz;
    return connectivity == 6 ? l1 == 1 : connectivity == 18 ? l1 <= 2 : true;
}

/// Union-find over all foreground voxel pairs.
std::vector<std::size_t> component_oracle(const BinaryMask& m, int connectivity) {
    std::vector<std::size_t> parent(m.size());
    std::iota(parent.begin(), parent.end(), 0);
    std::function<std::size_t(std::size_t)> find = [&](std::size_t i) {
        return parent[i] == i ? i : parent[i] = find(parent[i]);
    };
    const Dims d = m.dims();
    auto coord = [&](std::size_t i) {
        return std::array<int, 3>{int(i % d.nx), int(i / d.nx % d.ny), int(i / (std::size_t(d.nx) * d.ny))};
    };
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!m[i]) continue;
        for (std::size_t j = i + 1; j < m.size(); ++j) {
            if (m[j] && adjacent(coord(i), coord(j), connectivity)) parent[find(i)] = find(j);
        }
    }
    for (std::size_t i = 0; i < m.size(); ++i) parent[i] = find(i);
    return parent;
}

BinaryMask box(Dims grid, std::array<int, 3> lo, std::array<int, 3> hi, Vec3 spacing = {1, 1, 1}) {
    BinaryMask m = make_mask(grid, spacing);
    for (int z = lo[2]; z <= hi[2]; ++z)
        for (int y = lo[1]; y <= hi[1]; ++y)
            for (int x = lo[0]; x <= hi[0]; ++x) m.at(x, y, z) = 1;
    return m;
}

}  // namespace

TEST_CASE("Otsu on {0,0,0,10,10} splits between the values") {
    Volume v(Geometry{{5, 1, 1}, {1, 1, 1}, {}}, std::vector<float>{0, 0, 0, 10, 10});
    const double t = otsu_threshold(v);
    CHECK(t > 0.0);
    CHECK(t <= 10.0);
    CHECK(binarize(v, t).data() == std::vector<std::uint8_t>{0, 0, 0, 1, 1});
    const Histogram h = histogram(v, nullptr, 256);
    CHECK(otsu_bin(h.counts) == otsu_oracle(h.counts));
}

TEST_CASE("Otsu bin equals the exhaustive maximizer on 100 random histograms") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const auto c = testing::random_histogram(trial, rng);
        CAPTURE(trial);
        REQUIRE(otsu_bin(c) == otsu_oracle(c));
    }
}

TEST_CASE("Otsu on symmetric ties picks the lowest cut") {
    const std::vector<std::uint64_t> c{5, 0, 0, 0, 5};
    CHECK(otsu_bin(c) == 0);
    CHECK(otsu_oracle(c) == 0);
}

TEST_CASE("Otsu ignores an affine rescaling of the map") {
    Rng rng(2);
    Volume v(Geometry{{10, 10, 10}, {1, 1, 1}, {}});
    for (auto& x : v.data()) x = static_cast<float>(rng.uniform_int(0, 40));
    Volume w = v;
    for (auto& x : w.data()) x = 2.0f * x + 3.0f;
    CHECK(binarize(v, otsu_threshold(v)) == binarize(w, otsu_threshold(w)));
}

TEST_CASE("Otsu separates two clusters and honours the ROI") {
    Rng rng(3);
    Volume v(Geometry{{20, 10, 10}, {1, 1, 1}, {}});
    for (int z = 0; z < 10; ++z)
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 20; ++x)
                v.at(x, y, z) = static_cast<float>((x < 14 ? 0.1 : 0.8) + 0.03 * rng.normal());
    const double t = otsu_threshold(v);
    CHECK(t > 0.2);
    CHECK(t < 0.7);
    const Histogram h = histogram(v, nullptr, 256);
    CHECK(otsu_bin(h.counts) == otsu_oracle(h.counts));

    BinaryMask roi = make_mask(v.dims());
    roi.at(0, 0, 0) = 1;
    roi.at(1, 0, 0) = 1;
    Volume flat(v.geometry(), 0.5f);
    CHECK_THROWS_WITH(otsu_threshold(flat), doctest::Contains("degenerate histogram"));
    flat.at(0, 0, 0) = 0.0f;
    CHECK_NOTHROW(otsu_threshold(flat));
    flat.at(0, 0, 0) = 0.5f;
    flat.at(5, 5, 5) = 0.0f;  // outside the ROI
    CHECK_THROWS(otsu_threshold(flat, &roi));
}

TEST_CASE("binarize boundary convention") {
    Volume v(Geometry{{3, 1, 1}, {1, 1, 1}, {}}, std::vector<float>{0.1f, 0.5f, 0.9f});
    CHECK(count(binarize(v, 1.0)) == 0);
    CHECK(count(binarize(v, 0.0)) == 3);
    CHECK(binarize(v, 0.5).data() == std::vector<std::uint8_t>{0, 1, 1});
}

TEST_CASE("erosion and dilation match their definitions and are duals") {
    Rng rng(4);
    for (int conn : {6, 18, 26}) {
        const Element se = structuring_element(conn, 1);
        CHECK(se.size() == static_cast<std::size_t>(conn + 1));
        for (int trial = 0; trial < 10; ++trial) {
            const BinaryMask m = random_mask({6, 5, 4}, 0.6, rng);
            CHECK(erode(m, se) == erode_oracle(m, se));
            CHECK(dilate(m, se) == dilate_oracle(m, se));
            CHECK(erode(m, se) == complement(dilate(complement(m), mirror(se))));
        }
    }
}

TEST_CASE("open_close fixtures") {
    CHECK(count(open_close(make_mask({8, 8, 8}))) == 0);

    BinaryMask dot = make_mask({7, 7, 7});
    dot.at(3, 3, 3) = 1;
    CHECK(count(open_close(dot)) == 0);

    const BinaryMask cube = box({9, 9, 9}, {2, 2, 2}, {6, 6, 6});
    CHECK(open_close(cube, 1, 26) == cube);
    // The 6-connected element cannot rebuild edges and corners after erosion.
    const BinaryMask rounded = open_close(cube, 1, 6);
    CHECK(count(rounded) == 125 - 12 * 3 - 8);
    CHECK(open_close(rounded, 1, 6) == rounded);
}

TEST_CASE("open_close is idempotent on a seed-pinned corpus") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const BinaryMask m = random_mask({8, 7, 6}, 0.3 + 0.02 * trial, rng);
        for (int conn : {6, 26}) {
            const BinaryMask once = open_close(m, 1, conn);
            REQUIRE(open_close(once, 1, conn) == once);
        }
    }
}

TEST_CASE("fill_holes fixtures") {
    BinaryMask shell = box({7, 7, 7}, {1, 1, 1}, {5, 5, 5});
    for (int z = 2; z <= 4; ++z)
        for (int y = 2; y <= 4; ++y)
            for (int x = 2; x <= 4; ++x) shell.at(x, y, z) = 0;
    CHECK(fill_holes(shell) == box({7, 7, 7}, {1, 1, 1}, {5, 5, 5}));

    const BinaryMask solid = box({7, 7, 7}, {1, 1, 1}, {4, 5, 3});
    CHECK(fill_holes(solid) == solid);

    // A cup whose cavity opens onto the grid face stays hollow.
    BinaryMask cup = box({5, 5, 5}, {0, 0, 0}, {4, 4, 4});
    for (int z = 1; z <= 4; ++z) cup.at(2, 2, z) = 0;
    CHECK(fill_holes(cup) == cup);

    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const BinaryMask m = random_mask({6, 6, 6}, 0.5, rng);
        const BinaryMask f = fill_holes(m);
        CHECK(fill_holes(f) == f);
        for (std::size_t i = 0; i < m.size(); ++i) REQUIRE(f[i] >= m[i]);
    }
}

TEST_CASE("connectivity fixtures") {
    BinaryMask diag = make_mask({3, 3, 3});
    diag.at(0, 0, 0) = 1;
    diag.at(1, 1, 1) = 1;
    CHECK(connected_components(diag, 26).count() == 1);
    CHECK(connected_components(diag, 18).count() == 2);
    CHECK(connected_components(diag, 6).count() == 2);

    BinaryMask edge = make_mask({3, 3, 3});
    edge.at(0, 0, 0) = 1;
    edge.at(1, 1, 0) = 1;
    CHECK(connected_components(edge, 18).count() == 1);
    CHECK(connected_components(edge, 6).count() == 2);

    CHECK(connected_components(make_mask({3, 3, 3})).count() == 0);
}

TEST_CASE("components agree with union-find and follow scan order") {
    Rng rng(7);
    for (int conn : {6, 18, 26}) {
        for (int trial = 0; trial < 10; ++trial) {
            const BinaryMask m = random_mask({5, 4, 4}, 0.35, rng);
            const ComponentSet cs = connected_components(m, conn);
            const auto root = component_oracle(m, conn);
            std::uint32_t next = 1;
            std::vector<std::uint32_t> seen(m.size(), 0);
            std::size_t total = 0;
            for (std::size_t i = 0; i < m.size(); ++i) {
                REQUIRE((cs.labels[i] != 0) == (m[i] != 0));
                if (!m[i]) continue;
                // Scan order: the first voxel of each oracle class gets the next label.
                if (!seen[root[i]]) seen[root[i]] = next++;
                REQUIRE(cs.labels[i] == seen[root[i]]);
            }
            REQUIRE(cs.count() == next - 1);
            for (const auto& c : cs.components) total += c.voxels;
            CHECK(total == count(m));
            CHECK(cs.foreground() == m);
        }
    }
}

TEST_CASE("component geometry") {
    const BinaryMask m = box({6, 6, 6}, {1, 2, 3}, {2, 4, 3}, {0.5, 1.0, 2.0});
    const ComponentSet cs = connected_components(m);
    REQUIRE(cs.count() == 1);
    const Component& c = cs.components[0];
    CHECK(c.voxels == 6);
    CHECK(c.bbox_min == std::array<int, 3>{1, 2, 3});
    CHECK(c.bbox_max == std::array<int, 3>{2, 4, 3});
    CHECK(c.volume_mm3 == doctest::Approx(6.0));
    CHECK(c.diameter_mm == doctest::Approx(std::cbrt(36.0 / std::numbers::pi)));
    CHECK(from_labels(cs.labels).components[0].voxels == 6);
}

TEST_CASE("filter_small boundaries") {
    auto line = [](int n, Vec3 spacing) {
        BinaryMask m(Geometry{{40, 3, 3}, spacing, {}});
        for (int x = 0; x < n; ++x) m.at(x, 1, 1) = 1;
        return connected_components(m);
    };
    CHECK(filter_small(line(19, {1, 1, 1})).count() == 0);
    const ComponentSet kept = filter_small(line(20, {1, 1, 1}));
    REQUIRE(kept.count() == 1);
    CHECK(kept.components[0].diameter_mm == doctest::Approx(3.3678).epsilon(1e-4));
    const ComponentSet fine = line(30, {0.5, 0.5, 0.5});
    CHECK(fine.components[0].volume_mm3 == doctest::Approx(3.75));
    CHECK(fine.components[0].diameter_mm == doctest::Approx(1.9276).epsilon(1e-4));
    CHECK(filter_small(fine).count() == 0);

    Rng rng(8);
    const ComponentSet cs = connected_components(random_mask({10, 10, 10}, 0.3, rng));
    const ComponentSet f = filter_small(cs, 5, 0.0);
    CHECK(f.count() <= cs.count());
    std::uint32_t next = 1;
    for (const auto& c : cs.components) {
        if (c.voxels < 5) continue;
        CHECK(f.mask_of(next) == cs.mask_of(c.label));
        ++next;
    }
    CHECK(f.count() == next - 1);
}

TEST_CASE("candidates: threshold, clean, fill, size filter inside the ROI") {
    Volume map(Geometry{{16, 16, 16}, {1, 1, 1}, {}}, 0.0f);
    for (int z = 3; z < 10; ++z)
        for (int y = 3; y < 10; ++y)
            for (int x = 3; x < 10; ++x) map.at(x, y, z) = 0.9f;
    map.at(6, 6, 6) = 0.0f;    // cavity, filled back
    map.at(13, 13, 13) = 0.9f; // speck, removed
    map.at(1, 1, 1) = 0.05f;
    BinaryMask roi = box({16, 16, 16}, {0, 0, 0}, {15, 15, 15});
    PostprocessConfig cfg;
    cfg.morphology_connectivity = 26;
    const ComponentSet cs = candidates(map, &roi, cfg);
    REQUIRE(cs.count() == 1);
    CHECK(cs.components[0].voxels == 343);

    roi = box({16, 16, 16}, {0, 0, 0}, {6, 15, 15});
    const ComponentSet clipped = candidates(map, &roi, cfg);
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (clipped.labels[i]) REQUIRE(roi[i]);
    }

    cfg.fixed_threshold = 2.0;
    CHECK(candidates(map, nullptr, cfg).count() == 0);
    cfg.morphology_connectivity = 7;
    CHECK_THROWS(cfg.validate());
}
