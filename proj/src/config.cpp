#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "latentad/pipeline.hpp"

namespace latentad::cli {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

template <typename T>
T parse_number(const std::string& text) {
    T value{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || text.empty()) {
        throw std::invalid_argument("expected a number, got '" + text + "'");
    }
    return value;
}

// Shortest text that parses back to the same double.
std::string format_number(double v) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

// Each value type converts to and from its text form.
void from_text(const std::string& t, int& v) { v = parse_number<int>(t); }
void from_text(const std::string& t, std::uint64_t& v) { v = parse_number<std::uint64_t>(t); }
void from_text(const std::string& t, double& v) { v = parse_number<double>(t); }
void from_text(const std::string& t, bool& v) {
    if (t == "true" || t == "1" || t == "yes") v = true;
    else if (t == "false" || t == "0" || t == "no") v = false;
    else throw std::invalid_argument("expected true/false, got '" + t + "'");
}
void from_text(const std::string& t, diffusion::SamplerMode& v) { v = diffusion::parse_mode(t); }
void from_text(const std::string& t, Dims& v) {
    const auto f = split(t, ',');
    if (f.size() != 3) throw std::invalid_argument("expected nx,ny,nz");
    v = Dims{parse_number<int>(f[0]), parse_number<int>(f[1]), parse_number<int>(f[2])};
}
void from_text(const std::string& t, Vec3& v) {
    const auto f = split(t, ',');
    if (f.size() != 3) throw std::invalid_argument("expected x,y,z");
    v = Vec3{parse_number<double>(f[0]), parse_number<double>(f[1]), parse_number<double>(f[2])};
}
void from_text(const std::string& t, std::vector<int>& v) {
    v.clear();
    for (const auto& f : split(t, ',')) v.push_back(parse_number<int>(f));
}
void from_text(const std::string& t, std::vector<double>& v) {
    v.clear();
    for (const auto& f : split(t, ',')) v.push_back(parse_number<double>(f));
}
void from_text(const std::string& t, std::optional<double>& v) {
    if (t == "otsu") v.reset();
    else v = parse_number<double>(t);
}

std::string to_text(int v) { return std::to_string(v); }
std::string to_text(std::uint64_t v) { return std::to_string(v); }
std::string to_text(double v) { return format_number(v); }
std::string to_text(bool v) { return v ? "true" : "false"; }
std::string to_text(diffusion::SamplerMode v) { return diffusion::to_string(v); }
std::string to_text(const Dims& v) {
    return std::to_string(v.nx) + "," + std::to_string(v.ny) + "," + std::to_string(v.nz);
}
std::string to_text(const Vec3& v) {
    return format_number(v.x) + "," + format_number(v.y) + "," + format_number(v.z);
}
template <typename T>
std::string to_text(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + to_text(v[i]);
    return out;
}
std::string to_text(const std::optional<double>& v) { return v ? format_number(*v) : "otsu"; }

struct Entry {
    std::string section;
    std::string key;
    std::function<void(PipelineConfig&, const std::string&, const std::filesystem::path&)> set;
    std::function<std::string(const PipelineConfig&)> get;
};

template <typename Access>
Entry field(std::string section, std::string key, Access access) {
    return Entry{std::move(section), std::move(key),
                 [access](PipelineConfig& c, const std::string& t, const std::filesystem::path&) {
                     from_text(t, access(c));
                 },
                 [access](const PipelineConfig& c) {
                     return to_text(access(const_cast<PipelineConfig&>(c)));
                 }};
}

Entry path_field(std::string key, std::filesystem::path PathsSection::*member) {
    return Entry{"paths", std::move(key),
                 [member](PipelineConfig& c, const std::string& t,
                          const std::filesystem::path& base) {
                     std::filesystem::path p(t);
                     c.paths.*member = p.is_absolute() || base.empty() ? p : base / p;
                 },
                 [member](const PipelineConfig& c) { return (c.paths.*member).string(); }};
}

#define LATENTAD_FIELD(section, key, expr) \
    field(section, key, [](PipelineConfig& c) -> auto& { return expr; })

const std::vector<Entry>& registry() {
    static const std::vector<Entry> entries = {
        LATENTAD_FIELD("global", "seed", c.seed),
        LATENTAD_FIELD("global", "workers", c.workers),
        LATENTAD_FIELD("global", "cases", c.cases),
        LATENTAD_FIELD("phantom", "dims", c.phantom.grid_dims),
        LATENTAD_FIELD("phantom", "spacing_mm", c.phantom.spacing_mm),
        LATENTAD_FIELD("phantom", "kidneys", c.phantom.kidneys),
        LATENTAD_FIELD("phantom", "semi_axes_min_mm", c.phantom.semi_axes_min_mm),
        LATENTAD_FIELD("phantom", "semi_axes_max_mm", c.phantom.semi_axes_max_mm),
        LATENTAD_FIELD("phantom", "center_jitter_mm", c.phantom.center_jitter_mm),
        LATENTAD_FIELD("phantom", "background", c.phantom.background_mean),
        LATENTAD_FIELD("phantom", "kidney", c.phantom.kidney_mean),
        LATENTAD_FIELD("phantom", "lesion_contrast", c.phantom.lesion_contrast),
        LATENTAD_FIELD("phantom", "noise_sigma", c.phantom.noise_sigma),
        LATENTAD_FIELD("phantom", "smoothing_sigma_vox", c.phantom.smoothing_sigma_vox),
        LATENTAD_FIELD("phantom", "lesion_probability", c.phantom.lesion_probability),
        LATENTAD_FIELD("phantom", "lesion_diameter_min_mm", c.phantom.lesion_diameter_min_mm),
        LATENTAD_FIELD("phantom", "lesion_diameter_max_mm", c.phantom.lesion_diameter_max_mm),
        LATENTAD_FIELD("phantom", "lesions_min", c.phantom.lesions_min),
        LATENTAD_FIELD("phantom", "lesions_max", c.phantom.lesions_max),
        LATENTAD_FIELD("phantom", "flip_prob", c.phantom.label_flip_prob),
        LATENTAD_FIELD("codec", "identity", c.codec.model.identity),
        LATENTAD_FIELD("codec", "levels", c.codec.model.levels),
        LATENTAD_FIELD("codec", "latent_dim", c.codec.model.latent_dim),
        LATENTAD_FIELD("codec", "codebook_size", c.codec.model.codebook_size),
        LATENTAD_FIELD("codec", "base_channels", c.codec.model.base_channels),
        LATENTAD_FIELD("codec", "commitment_beta", c.codec.model.commitment_beta),
        LATENTAD_FIELD("codec", "adversarial", c.codec.model.adversarial),
        LATENTAD_FIELD("codec", "adversarial_weight", c.codec.model.adversarial_weight),
        LATENTAD_FIELD("codec", "iterations", c.codec.iterations),
        LATENTAD_FIELD("codec", "batch_size", c.codec.batch_size),
        LATENTAD_FIELD("codec", "learning_rate", c.codec.learning_rate),
        LATENTAD_FIELD("codec", "restart_every", c.codec.restart_every),
        LATENTAD_FIELD("denoiser", "timesteps", c.denoiser.timesteps),
        LATENTAD_FIELD("denoiser", "base_channels", c.denoiser.base_channels),
        LATENTAD_FIELD("denoiser", "levels", c.denoiser.levels),
        LATENTAD_FIELD("denoiser", "iterations", c.denoiser.iterations),
        LATENTAD_FIELD("denoiser", "batch_size", c.denoiser.batch_size),
        LATENTAD_FIELD("denoiser", "learning_rate", c.denoiser.learning_rate),
        LATENTAD_FIELD("denoiser", "t_max", c.denoiser.t_max),
        LATENTAD_FIELD("classifier", "base_channels", c.classifier.base_channels),
        LATENTAD_FIELD("classifier", "levels", c.classifier.levels),
        LATENTAD_FIELD("classifier", "epochs", c.classifier.epochs),
        LATENTAD_FIELD("classifier", "batch_size", c.classifier.batch_size),
        LATENTAD_FIELD("classifier", "learning_rate", c.classifier.learning_rate),
        LATENTAD_FIELD("classifier", "patience", c.classifier.patience),
        LATENTAD_FIELD("classifier", "t_max", c.classifier.t_max),
        LATENTAD_FIELD("classifier", "validation_fraction", c.classifier.validation_fraction),
        LATENTAD_FIELD("sampler", "mode", c.sampler.mode),
        LATENTAD_FIELD("sampler", "L", c.sampler.level),
        LATENTAD_FIELD("sampler", "s", c.sampler.guidance_scale),
        LATENTAD_FIELD("sampler", "stride", c.sampler.stride),
        LATENTAD_FIELD("sampler", "refine", c.sampler.refine_iterations),
        LATENTAD_FIELD("sampler", "seed", c.sampler.seed),
        LATENTAD_FIELD("patch", "size_mm", c.patch_mm),
        LATENTAD_FIELD("postprocess", "bins", c.postprocess.bins),
        LATENTAD_FIELD("postprocess", "threshold", c.postprocess.fixed_threshold),
        LATENTAD_FIELD("postprocess", "morphology_radius", c.postprocess.morphology_radius),
        LATENTAD_FIELD("postprocess", "morphology_connectivity",
                       c.postprocess.morphology_connectivity),
        LATENTAD_FIELD("postprocess", "hole_connectivity", c.postprocess.hole_connectivity),
        LATENTAD_FIELD("postprocess", "component_connectivity",
                       c.postprocess.component_connectivity),
        LATENTAD_FIELD("postprocess", "min_voxels", c.postprocess.min_voxels),
        LATENTAD_FIELD("postprocess", "min_diameter_mm", c.postprocess.min_diameter_mm),
        LATENTAD_FIELD("eval", "iou_threshold", c.eval.iou_threshold),
        LATENTAD_FIELD("eval", "bin_edges_cm", c.eval.bin_edges_cm),
        LATENTAD_FIELD("sweep", "L", c.sweep.levels),
        LATENTAD_FIELD("sweep", "s", c.sweep.scales),
        LATENTAD_FIELD("sweep", "cases", c.sweep.cases),
        path_field("data", &PathsSection::data),
        path_field("models", &PathsSection::models),
        path_field("output", &PathsSection::output),
    };
    return entries;
}

#undef LATENTAD_FIELD

}  // namespace

std::vector<eval::SizeBin> EvalSection::bins() const {
    std::vector<eval::SizeBin> out;
    double lower = 0.0;
    auto label = [](double v) { return format_number(v); };
    for (std::size_t i = 0; i < bin_edges_cm.size(); ++i) {
        const double upper = bin_edges_cm[i];
        out.push_back({i == 0 ? "<=" + label(upper) : label(lower) + "-" + label(upper), lower,
                       upper});
        lower = upper;
    }
    out.push_back({">" + label(lower), lower, std::numeric_limits<double>::infinity()});
    return out;
}

void PipelineConfig::validate() const {
    if (workers < 1) throw std::invalid_argument("config: workers must be >= 1");
    if (cases < 0) throw std::invalid_argument("config: cases must be >= 0");
    phantom.validate();
    codec.model.validate();
    if (codec.iterations < 0 || codec.batch_size < 1 || !(codec.learning_rate > 0.0)) {
        throw std::invalid_argument("config: invalid codec training budget");
    }
    if (denoiser.timesteps < 1) throw std::invalid_argument("config: timesteps must be >= 1");
    if (denoiser.t_max < 1 || denoiser.t_max > denoiser.timesteps) {
        throw std::invalid_argument("config: denoiser t_max must be in [1, timesteps]");
    }
    if (classifier.t_max < 0 || classifier.t_max > denoiser.timesteps) {
        throw std::invalid_argument("config: classifier t_max must be in [0, timesteps]");
    }
    if (!(classifier.validation_fraction > 0.0 && classifier.validation_fraction < 1.0)) {
        throw std::invalid_argument("config: validation_fraction must be in (0, 1)");
    }
    if (sampler.level < 0 || sampler.level > denoiser.timesteps) {
        throw std::invalid_argument("config: sampler L must be in [0, timesteps]");
    }
    if (sampler.guidance_scale < 0.0 || sampler.stride < 1) {
        throw std::invalid_argument("config: invalid sampler settings");
    }
    postprocess.validate();
    if (!(eval.iou_threshold > 0.0 && eval.iou_threshold <= 1.0)) {
        throw std::invalid_argument("config: iou_threshold must be in (0, 1]");
    }
    for (std::size_t i = 0; i < eval.bin_edges_cm.size(); ++i) {
        if (!(eval.bin_edges_cm[i] > 0.0) || (i && eval.bin_edges_cm[i] <= eval.bin_edges_cm[i - 1])) {
            throw std::invalid_argument("config: bin edges must be positive and increasing");
        }
    }
    for (int l : sweep.levels) {
        if (l < 0 || l > denoiser.timesteps) {
            throw std::invalid_argument("config: sweep L outside [0, timesteps]");
        }
    }
    for (double s : sweep.scales) {
        if (s < 0.0) throw std::invalid_argument("config: sweep s must be >= 0");
    }
}

PipelineConfig parse_config(std::istream& is, const std::filesystem::path& base_dir) {
    std::map<std::pair<std::string, std::string>, const Entry*> index;
    std::set<std::string> sections;
    for (const auto& e : registry()) {
        index[{e.section, e.key}] = &e;
        sections.insert(e.section);
    }
    PipelineConfig cfg;
    std::set<std::pair<std::string, std::string>> seen;
    std::string section = "global";
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& msg) {
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + msg);
    };
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        const std::string text = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (text.empty()) continue;
        if (text.front() == '[') {
            if (text.back() != ']') fail("malformed section header");
            section = trim(text.substr(1, text.size() - 2));
            if (!sections.count(section)) fail("unknown section [" + section + "]");
            continue;
        }
        const auto eq = text.find('=');
        if (eq == std::string::npos) fail("expected key = value");
        const std::string key = trim(text.substr(0, eq));
        const std::string value = trim(text.substr(eq + 1));
        const auto it = index.find({section, key});
        if (it == index.end()) fail("unknown key '" + key + "' in [" + section + "]");
        if (!seen.insert({section, key}).second) fail("duplicate key '" + key + "'");
        try {
            it->second->set(cfg, value, base_dir);
        } catch (const std::invalid_argument& e) {
            fail(section + "." + key + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read config " + path.string());
    return parse_config(is, path.parent_path());
}

void write_config(std::ostream& os, const PipelineConfig& cfg) {
    std::string section;
    for (const auto& e : registry()) {
        if (e.section != section) {
            os << (section.empty() ? "" : "\n") << '[' << e.section << "]\n";
            section = e.section;
        }
        os << e.key << " = " << e.get(cfg) << '\n';
    }
}

}  // namespace latentad::cli
