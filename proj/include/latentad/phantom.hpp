#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "latentad/grid.hpp"
#include "latentad/rng.hpp"

namespace latentad::phantom {

enum class CaseLabel : std::uint8_t { Healthy = 0, Unhealthy = 1 };

std::string to_string(CaseLabel label);
CaseLabel parse_label(const std::string& text);

/// Synthetic kidney phantom generator settings. Intensities live directly in [-1, 1].
struct PhantomConfig {
    Dims grid_dims{48, 48, 64};
    double spacing_mm = 1.0;
    int kidneys = 2;
    Vec3 semi_axes_min_mm{9.5, 9.5, 12.5};
    Vec3 semi_axes_max_mm{10.5, 10.5, 13.5};
    double center_jitter_mm = 1.0;
    double background_mean = -0.6;
    double kidney_mean = 0.2;
    double lesion_contrast = 0.6;  // lesion = kidney +/- contrast, sign drawn per lesion
    double noise_sigma = 0.03;
    double smoothing_sigma_vox = 1.0;
    double lesion_probability = 0.5;
    double lesion_diameter_min_mm = 8.0;
    double lesion_diameter_max_mm = 16.0;
    int lesions_min = 1;
    int lesions_max = 2;
    double label_flip_prob = 0.15;
    std::uint64_t seed = 1;

    /// Throws std::invalid_argument on out-of-range fields.
    void validate() const;

    Geometry geometry() const {
        return Geometry{grid_dims, Vec3{spacing_mm, spacing_mm, spacing_mm}, Vec3{}};
    }
};

struct Lesion {
    Vec3 center_mm;
    double diameter_mm = 0.0;
    double contrast = 0.0;  // signed
    int kidney = 0;
};

struct Kidney {
    Vec3 center_mm;
    Vec3 semi_axes_mm;
};

struct LabeledCase {
    std::string case_id;
    Volume image;
    std::vector<Vec3> roi_centers_mm;  // generator-known kidney centroids, left to right
    CaseLabel weak_label = CaseLabel::Healthy;
    CaseLabel true_label = CaseLabel::Healthy;
    BinaryMask truth_lesions;  // evaluation only
    BinaryMask kidney_mask;
    std::vector<Kidney> kidneys;
    std::vector<Lesion> lesions;
};

/// Deterministic in (cfg, seed). force_label overrides the lesion-probability draw;
/// the noise field depends only on the seed, so a forced-healthy twin differs only near lesions.
LabeledCase generate_case(const PhantomConfig& cfg, std::uint64_t seed,
                          std::optional<CaseLabel> force_label = std::nullopt);

/// Case i uses seed cfg.seed + i. With balanced=true labels alternate healthy/unhealthy.
std::vector<LabeledCase> generate_dataset(const PhantomConfig& cfg, int n_cases,
                                          bool balanced = false);

/// Oracle ROI: the kidney centroids used at render time.
std::vector<Vec3> roi_center(const LabeledCase& c);

CaseLabel assign_weak_label(CaseLabel true_label, double flip_prob, Rng& rng);

struct ManifestRow {
    std::string case_id;
    CaseLabel weak_label = CaseLabel::Healthy;
    CaseLabel true_label = CaseLabel::Healthy;
    std::vector<Vec3> roi_centers_mm;
    std::string image_path;
    std::string truth_path;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

/// Writes <dir>/<id>_image.vol and <dir>/<id>_truth.vol for every case plus manifest.csv.
std::vector<ManifestRow> write_dataset(const std::filesystem::path& dir,
                                       const std::vector<LabeledCase>& cases);

}  // namespace latentad::phantom
