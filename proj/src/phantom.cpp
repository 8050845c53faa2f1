#include "latentad/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "latentad/vol_io.hpp"

namespace latentad::phantom {

namespace {

enum Stream : std::uint64_t { kGeometry = 0, kLabel = 1, kLesions = 2, kNoise = 3, kWeak = 4 };

bool inside_ellipsoid(const Vec3& p, const Kidney& k) {
    const double dx = (p.x - k.center_mm.x) / k.semi_axes_mm.x;
    const double dy = (p.y - k.center_mm.y) / k.semi_axes_mm.y;
    const double dz = (p.z - k.center_mm.z) / k.semi_axes_mm.z;
    return dx * dx + dy * dy + dz * dz <= 1.0;
}

Vec3 voxel_position(const Geometry& g, int x, int y, int z) {
    return Vec3{g.origin.x + x * g.spacing.x, g.origin.y + y * g.spacing.y,
                g.origin.z + z * g.spacing.z};
}

double distance(const Vec3& a, const Vec3& b) {
    return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) +
                     (a.z - b.z) * (a.z - b.z));
}

// Voxel-level containment: every voxel of the lesion ball is a kidney voxel.
bool lesion_fits(const Geometry& g, const Kidney& k, const Vec3& c, double radius) {
    const int x0 = static_cast<int>(std::floor((c.x - radius - g.origin.x) / g.spacing.x));
    const int x1 = static_cast<int>(std::ceil((c.x + radius - g.origin.x) / g.spacing.x));
    const int y0 = static_cast<int>(std::floor((c.y - radius - g.origin.y) / g.spacing.y));
    const int y1 = static_cast<int>(std::ceil((c.y + radius - g.origin.y) / g.spacing.y));
    const int z0 = static_cast<int>(std::floor((c.z - radius - g.origin.z) / g.spacing.z));
    const int z1 = static_cast<int>(std::ceil((c.z + radius - g.origin.z) / g.spacing.z));
    for (int z = z0; z <= z1; ++z) {
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const Vec3 p = voxel_position(g, x, y, z);
                if (distance(p, c) > radius) continue;
                if (x < 0 || y < 0 || z < 0 || x >= g.dims.nx || y >= g.dims.ny ||
                    z >= g.dims.nz || !inside_ellipsoid(p, k)) {
                    return false;
                }
            }
        }
    }
    return true;
}

std::vector<float> gaussian_kernel(double sigma) {
    if (sigma <= 0.0) return {1.0f};
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * i * i / (sigma * sigma));
        k[i + radius] = static_cast<float>(w);
        sum += w;
    }
    for (float& w : k) w = static_cast<float>(w / sum);
    return k;
}

// Separable blur with replicated borders.
void gaussian_blur(Volume& vol, double sigma_vox) {
    const auto kernel = gaussian_kernel(sigma_vox);
    const int r = static_cast<int>(kernel.size() / 2);
    if (r == 0) return;
    const Dims d = vol.dims();
    std::vector<float> tmp(vol.size());
    for (int axis = 0; axis < 3; ++axis) {
        const int n = d[axis];
        for (int z = 0; z < d.nz; ++z) {
            for (int y = 0; y < d.ny; ++y) {
                for (int x = 0; x < d.nx; ++x) {
                    const int pos[3] = {x, y, z};
                    double acc = 0.0;
                    for (int k = -r; k <= r; ++k) {
                        int q[3] = {x, y, z};
                        q[axis] = std::clamp(pos[axis] + k, 0, n - 1);
                        acc += kernel[k + r] * vol.at(q[0], q[1], q[2]);
                    }
                    tmp[vol.index(x, y, z)] = static_cast<float>(acc);
                }
            }
        }
        vol.data().swap(tmp);
    }
}

std::vector<Kidney> place_kidneys(const PhantomConfig& cfg, Rng& rng) {
    const Geometry g = cfg.geometry();
    const double ex = (g.dims.nx - 1) * g.spacing.x;
    const double ey = (g.dims.ny - 1) * g.spacing.y;
    const double ez = (g.dims.nz - 1) * g.spacing.z;
    std::vector<Kidney> kidneys;
    for (int k = 0; k < cfg.kidneys; ++k) {
        Kidney kid;
        const double fx = cfg.kidneys == 1 ? 0.5 : (k == 0 ? 0.25 : 0.75);
        kid.center_mm = Vec3{fx * (g.dims.nx * g.spacing.x), 0.5 * ey, 0.5 * ez};
        if (cfg.kidneys == 1) kid.center_mm.x = 0.5 * ex;
        for (int a = 0; a < 3; ++a) {
            kid.center_mm[a] += rng.uniform(-cfg.center_jitter_mm, cfg.center_jitter_mm);
            kid.semi_axes_mm[a] = rng.uniform(cfg.semi_axes_min_mm[a], cfg.semi_axes_max_mm[a]);
        }
        kidneys.push_back(kid);
    }
    return kidneys;
}

std::vector<Lesion> place_lesions(const PhantomConfig& cfg, const std::vector<Kidney>& kidneys,
                                  Rng& rng) {
    const Geometry g = cfg.geometry();
    std::vector<Lesion> lesions;
    const int count = rng.uniform_int(cfg.lesions_min, cfg.lesions_max);
    for (int i = 0; i < count; ++i) {
        Lesion les;
        les.kidney = rng.uniform_int(0, static_cast<int>(kidneys.size()) - 1);
        les.diameter_mm = rng.uniform(cfg.lesion_diameter_min_mm, cfg.lesion_diameter_max_mm);
        les.contrast = (rng.bernoulli(0.5) ? 1.0 : -1.0) * cfg.lesion_contrast;
        const Kidney& kid = kidneys[les.kidney];
        const double radius = 0.5 * les.diameter_mm;
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            Vec3 c;
            for (int a = 0; a < 3; ++a) {
                const double reach = std::max(0.0, kid.semi_axes_mm[a] - radius);
                c[a] = kid.center_mm[a] + rng.uniform(-reach, reach);
            }
            if (!lesion_fits(g, kid, c, radius)) continue;
            bool apart = true;
            for (const Lesion& other : lesions) {
                if (distance(other.center_mm, c) < radius + 0.5 * other.diameter_mm + 2.0) {
                    apart = false;
                }
            }
            if (!apart) continue;
            les.center_mm = c;
            placed = true;
        }
        if (!placed) {
            // The first lesion always fits at the kidney centre (diameter <= minor axis).
            if (!lesions.empty()) continue;
            les.center_mm = kid.center_mm;
        }
        lesions.push_back(les);
    }
    return lesions;
}

}  // namespace

std::string to_string(CaseLabel label) {
    return label == CaseLabel::Healthy ? "healthy" : "unhealthy";
}

CaseLabel parse_label(const std::string& text) {
    if (text == "healthy" || text == "0") return CaseLabel::Healthy;
    if (text == "unhealthy" || text == "1") return CaseLabel::Unhealthy;
    throw std::invalid_argument("unknown case label '" + text + "'");
}

void PhantomConfig::validate() const {
    geometry().validate();
    if (kidneys != 1 && kidneys != 2) {
        throw std::invalid_argument("phantom: kidneys must be 1 or 2");
    }
    if (!(lesion_probability >= 0.0 && lesion_probability <= 1.0)) {
        throw std::invalid_argument("phantom: lesion_probability outside [0,1]");
    }
    if (!(label_flip_prob >= 0.0 && label_flip_prob < 1.0)) {
        throw std::invalid_argument("phantom: label_flip_prob outside [0,1)");
    }
    if (!(lesion_diameter_min_mm > 0.0 && lesion_diameter_min_mm <= lesion_diameter_max_mm)) {
        throw std::invalid_argument("phantom: lesion diameter range must be positive and ordered");
    }
    if (lesions_min < 1 || lesions_max < lesions_min) {
        throw std::invalid_argument("phantom: lesions per case range invalid");
    }
    double minor = 1e300;
    for (int a = 0; a < 3; ++a) {
        if (!(semi_axes_min_mm[a] > 0.0 && semi_axes_min_mm[a] <= semi_axes_max_mm[a])) {
            throw std::invalid_argument("phantom: kidney semi-axis range invalid");
        }
        minor = std::min(minor, semi_axes_min_mm[a]);
    }
    if (lesion_diameter_max_mm > 2.0 * minor) {
        throw std::invalid_argument("phantom: lesion diameter exceeds kidney minor axis");
    }
    for (double v : {background_mean, kidney_mean, kidney_mean + lesion_contrast,
                     kidney_mean - lesion_contrast}) {
        if (!(v >= -1.0 && v <= 1.0)) {
            throw std::invalid_argument("phantom: intensities must lie in [-1,1]");
        }
    }
    if (noise_sigma < 0.0 || smoothing_sigma_vox < 0.0 || center_jitter_mm < 0.0) {
        throw std::invalid_argument("phantom: negative noise, smoothing or jitter");
    }
}

CaseLabel assign_weak_label(CaseLabel true_label, double flip_prob, Rng& rng) {
    if (!(flip_prob >= 0.0 && flip_prob < 1.0)) {
        throw std::invalid_argument("assign_weak_label: flip_prob outside [0,1)");
    }
    if (rng.bernoulli(flip_prob)) {
        return true_label == CaseLabel::Healthy ? CaseLabel::Unhealthy : CaseLabel::Healthy;
    }
    return true_label;
}

LabeledCase generate_case(const PhantomConfig& cfg, std::uint64_t seed,
                          std::optional<CaseLabel> force_label) {
    cfg.validate();
    Rng geometry_rng(mix_seed(seed, kGeometry));
    Rng label_rng(mix_seed(seed, kLabel));
    Rng lesion_rng(mix_seed(seed, kLesions));
    Rng noise_rng(mix_seed(seed, kNoise));
    Rng weak_rng(mix_seed(seed, kWeak));

    LabeledCase out;
    out.case_id = "case_" + std::to_string(seed);
    const Geometry g = cfg.geometry();
    out.kidneys = place_kidneys(cfg, geometry_rng);
    const bool drawn_unhealthy = label_rng.bernoulli(cfg.lesion_probability);
    out.true_label = force_label.value_or(drawn_unhealthy ? CaseLabel::Unhealthy
                                                          : CaseLabel::Healthy);
    if (out.true_label == CaseLabel::Unhealthy) {
        out.lesions = place_lesions(cfg, out.kidneys, lesion_rng);
    }

    Volume image(g, static_cast<float>(cfg.background_mean));
    out.kidney_mask = BinaryMask(g, 0);
    out.truth_lesions = BinaryMask(g, 0);
    for (int z = 0; z < g.dims.nz; ++z) {
        for (int y = 0; y < g.dims.ny; ++y) {
            for (int x = 0; x < g.dims.nx; ++x) {
                const Vec3 p = voxel_position(g, x, y, z);
                for (const Kidney& k : out.kidneys) {
                    if (inside_ellipsoid(p, k)) {
                        image.at(x, y, z) = static_cast<float>(cfg.kidney_mean);
                        out.kidney_mask.at(x, y, z) = 1;
                    }
                }
                for (const Lesion& les : out.lesions) {
                    if (distance(p, les.center_mm) <= 0.5 * les.diameter_mm) {
                        image.at(x, y, z) = static_cast<float>(cfg.kidney_mean + les.contrast);
                        out.truth_lesions.at(x, y, z) = 1;
                    }
                }
            }
        }
    }
    gaussian_blur(image, cfg.smoothing_sigma_vox);
    for (float& v : image.data()) {
        v = std::clamp(static_cast<float>(v + cfg.noise_sigma * noise_rng.normal()), -1.0f, 1.0f);
    }
    out.image = std::move(image);
    for (const Kidney& k : out.kidneys) out.roi_centers_mm.push_back(k.center_mm);
    out.weak_label = assign_weak_label(out.true_label, cfg.label_flip_prob, weak_rng);
    return out;
}

std::vector<LabeledCase> generate_dataset(const PhantomConfig& cfg, int n_cases, bool balanced) {
    if (n_cases < 0) throw std::invalid_argument("generate_dataset: negative case count");
    std::vector<LabeledCase> cases;
    cases.reserve(static_cast<std::size_t>(n_cases));
    for (int i = 0; i < n_cases; ++i) {
        std::optional<CaseLabel> label;
        if (balanced) label = (i % 2 == 0) ? CaseLabel::Healthy : CaseLabel::Unhealthy;
        cases.push_back(generate_case(cfg, cfg.seed + static_cast<std::uint64_t>(i), label));
    }
    return cases;
}

std::vector<Vec3> roi_center(const LabeledCase& c) { return c.roi_centers_mm; }

namespace {

std::string format_centers(const std::vector<Vec3>& centers) {
    std::ostringstream os;
    os.precision(9);
    for (std::size_t i = 0; i < centers.size(); ++i) {
        if (i) os << '|';
        os << centers[i].x << ';' << centers[i].y << ';' << centers[i].z;
    }
    return os.str();
}

std::vector<Vec3> parse_centers(const std::string& text) {
    std::vector<Vec3> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, '|')) {
        if (item.empty()) continue;
        Vec3 v;
        char sep1 = 0, sep2 = 0;
        std::istringstream is(item);
        if (!(is >> v.x >> sep1 >> v.y >> sep2 >> v.z) || sep1 != ';' || sep2 != ';') {
            throw std::runtime_error("manifest: malformed roi center '" + item + "'");
        }
        out.push_back(v);
    }
    return out;
}

}  // namespace

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "case_id,weak_label,true_label,roi_centers,image_path,truth_path\n";
    for (const auto& r : rows) {
        out << r.case_id << ',' << to_string(r.weak_label) << ',' << to_string(r.true_label) << ','
            << format_centers(r.roi_centers_mm) << ',' << r.image_path << ',' << r.truth_path
            << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    std::string line;
    std::getline(in, line);
    if (line.rfind("case_id,", 0) != 0) {
        throw std::runtime_error("manifest: missing header in " + path.string());
    }
    const auto base = path.parent_path();
    std::vector<ManifestRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) f.push_back(field);
        if (f.size() < 5) throw std::runtime_error("manifest: short row '" + line + "'");
        ManifestRow r;
        r.case_id = f[0];
        r.weak_label = parse_label(f[1]);
        r.true_label = parse_label(f[2]);
        r.roi_centers_mm = parse_centers(f[3]);
        auto resolve = [&](const std::string& p) {
            if (p.empty()) return p;
            std::filesystem::path fp(p);
            return (fp.is_absolute() ? fp : base / fp).string();
        };
        r.image_path = resolve(f[4]);
        r.truth_path = f.size() > 5 ? resolve(f[5]) : std::string();
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<ManifestRow> write_dataset(const std::filesystem::path& dir,
                                       const std::vector<LabeledCase>& cases) {
    std::filesystem::create_directories(dir);
    std::vector<ManifestRow> rows;
    for (const auto& c : cases) {
        ManifestRow r;
        r.case_id = c.case_id;
        r.weak_label = c.weak_label;
        r.true_label = c.true_label;
        r.roi_centers_mm = c.roi_centers_mm;
        r.image_path = c.case_id + "_image.vol";
        r.truth_path = c.case_id + "_truth.vol";
        io::save(dir / r.image_path, c.image);
        io::save(dir / r.truth_path, c.truth_lesions);
        rows.push_back(std::move(r));
    }
    write_manifest(dir / "manifest.csv", rows);
    return rows;
}

}  // namespace latentad::phantom
