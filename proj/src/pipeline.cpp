#include "latentad/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>

#include "latentad/parallel.hpp"
#include "latentad/vol_io.hpp"
#include "latentad/volgrid.hpp"

namespace latentad::cli {

namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw std::runtime_error("missing " + what + ": " + p.string());
}

std::vector<phantom::ManifestRow> load_manifest(const PipelineConfig& cfg) {
    const fs::path m = cfg.paths.data / "manifest.csv";
    require_file(m, "dataset manifest");
    return phantom::read_manifest(m);
}

vq::VqCodec load_codec(const PipelineConfig& cfg) {
    if (cfg.codec.model.identity) return vq::VqCodec(cfg.codec.model);
    require_file(codec_path(cfg), "codec checkpoint");
    std::ifstream is(codec_path(cfg), std::ios::binary);
    return vq::VqCodec::load(is);
}

nn::Network load_net(const fs::path& p, const std::string& what) {
    require_file(p, what);
    std::ifstream is(p, std::ios::binary);
    return nn::load_network(is);
}

template <typename Save>
void save_atomic(const fs::path& p, Save&& save) {
    fs::create_directories(p.parent_path());
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
        save(os);
    }
    fs::rename(tmp, p);
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

fs::path codec_path(const PipelineConfig& cfg) { return cfg.paths.models / "codec.vqc"; }
fs::path denoiser_path(const PipelineConfig& cfg) { return cfg.paths.models / "denoiser.net"; }
fs::path classifier_path(const PipelineConfig& cfg) {
    return cfg.paths.models / "classifier.net";
}

Models load_models(const PipelineConfig& cfg, bool need_classifier) {
    Models m;
    m.schedule = diffusion::make_schedule(cfg.denoiser.timesteps);
    m.codec.emplace(load_codec(cfg));
    m.denoiser.emplace(load_net(denoiser_path(cfg), "denoiser checkpoint"));
    if (need_classifier) m.classifier.emplace(load_net(classifier_path(cfg), "classifier checkpoint"));
    return m;
}

std::uint64_t trajectory_seed(std::uint64_t seed, const std::string& case_id, int side) {
    return mix_seed(mix_seed(seed, fnv1a(case_id)), static_cast<std::uint64_t>(side));
}

diffusion::SamplerConfig baseline_sampler(const diffusion::SamplerConfig& sampler) {
    diffusion::SamplerConfig b = sampler;
    b.level = 0;
    b.guidance_scale = 0.0;
    return b;
}

nn::Tensor normalized_latent(vq::VqCodec& codec, const Volume& patch) {
    nn::Tensor z = codec.quantize(codec.encode(patch)).values;
    const vq::LatentStats st = codec.latent_stats();
    for (auto& v : z.data()) v = static_cast<float>((v - st.mean) / st.stddev);
    return z;
}

PatchSet collect_patches(const std::vector<phantom::ManifestRow>& rows, const Vec3& patch_mm) {
    PatchSet set;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Volume image = io::load_volume(rows[i].image_path);
        for (const auto& c : rows[i].roi_centers_mm) {
            set.patches.push_back(volgrid::extract_patch(image, c, patch_mm).volume);
            set.labels.push_back(rows[i].weak_label);
            set.case_index.push_back(i);
        }
    }
    return set;
}

CaseResult detect_case(const std::string& case_id, const Volume& image,
                       const std::vector<Vec3>& roi_centers_mm, const PipelineConfig& cfg,
                       const diffusion::SamplerConfig& sampler, Models& models) {
    if (roi_centers_mm.empty()) throw std::invalid_argument(case_id + ": no ROI centres");
    CaseResult r;
    r.case_id = case_id;
    r.image = image;
    r.reconstruction = image;
    std::optional<classifier::ClassifierGuidance> guidance;
    if (models.classifier) guidance.emplace(*models.classifier);
    diffusion::NetworkDenoiser denoiser(*models.denoiser);

    std::vector<volgrid::Patch> anomaly_patches;
    std::vector<volgrid::PatchPlacement> placements;
    for (std::size_t k = 0; k < roi_centers_mm.size(); ++k) {
        const volgrid::Patch patch = volgrid::extract_patch(image, roi_centers_mm[k], cfg.patch_mm);
        diffusion::SamplerConfig sc = sampler;
        sc.seed = trajectory_seed(sampler.seed, case_id, static_cast<int>(k));
        const Volume recon = diffusion::reconstruct_healthy(
            patch.volume, sc, models.schedule, *models.codec, denoiser,
            guidance ? &*guidance : nullptr);
        anomaly_patches.push_back({diffusion::anomaly_map(patch.volume, recon), patch.placement});
        placements.push_back(patch.placement);
        const auto& off = patch.placement.offset_voxels;
        const Dims pd = patch.placement.patch_dims;
        for (int z = 0; z < pd.nz; ++z) {
            for (int y = 0; y < pd.ny; ++y) {
                for (int x = 0; x < pd.nx; ++x) {
                    r.reconstruction.at(x + off[0], y + off[1], z + off[2]) = recon.at(x, y, z);
                }
            }
        }
    }
    r.anomaly = volgrid::compose_full_map(anomaly_patches, image.geometry());
    r.roi = volgrid::placement_mask(placements, image.geometry());
    r.candidates = post::candidates(r.anomaly, &r.roi, cfg.postprocess);
    return r;
}

void write_montage(const fs::path& path, const CaseResult& r) {
    const Dims d = r.image.dims();
    const int z = d.nz / 2;
    float amax = 0.0f;
    for (float v : r.anomaly.data()) amax = std::max(amax, v);
    const int width = 4 * d.nx;
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width) * d.ny);
    for (int y = 0; y < d.ny; ++y) {
        // Image rows run top to bottom, so flip y to keep anatomical "up".
        auto* row = pixels.data() + static_cast<std::size_t>(d.ny - 1 - y) * width;
        for (int x = 0; x < d.nx; ++x) {
            row[x] = to_byte((r.image.at(x, y, z) + 1.0) / 2.0);
            row[d.nx + x] = to_byte((r.reconstruction.at(x, y, z) + 1.0) / 2.0);
            row[2 * d.nx + x] = to_byte(amax > 0.0f ? r.anomaly.at(x, y, z) / amax : 0.0);
            row[3 * d.nx + x] = r.candidates.labels.at(x, y, z) ? 255 : 0;
        }
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "P5\n" << width << ' ' << d.ny << "\n255\n";
    os.write(reinterpret_cast<const char*>(pixels.data()),
             static_cast<std::streamsize>(pixels.size()));
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

void TrainLog::write_csv(const fs::path& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << '\n';
    os.precision(8);
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
        os << '\n';
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

TrainLog train_codec(vq::VqCodec& codec, const std::vector<Volume>& patches,
                     const CodecSection& cfg, std::uint64_t seed, std::ostream* log) {
    TrainLog out{{"step", "reconstruction", "codebook", "commitment", "total"}, {}};
    if (codec.identity() || cfg.iterations == 0) return out;
    if (patches.empty()) throw std::invalid_argument("train_codec: no training patches");
    nn::TrainConfig tc;
    tc.learning_rate = cfg.learning_rate;
    tc.batch_size = cfg.batch_size;
    Rng rng(mix_seed(seed, codec.steps()));
    const int last = static_cast<int>(patches.size()) - 1;
    std::vector<Volume> batch;
    for (int it = 0; it < cfg.iterations; ++it) {
        batch.clear();
        for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(patches[rng.uniform_int(0, last)]);
        const vq::CodecLosses l = codec.train_step(batch, tc);
        out.rows.push_back({static_cast<double>(codec.steps()), l.reconstruction, l.codebook,
                            l.commitment, l.total()});
        if (log && (it + 1) % 100 == 0) {
            *log << "codec step " << codec.steps() << " reconstruction " << l.reconstruction
                 << " codes used " << codec.codebook().used_codes() << '\n';
        }
        if (cfg.restart_every > 0 && (it + 1) % cfg.restart_every == 0 &&
            it + 1 < cfg.iterations) {
            std::vector<Volume> sample;
            for (int b = 0; b < 8; ++b) sample.push_back(patches[rng.uniform_int(0, last)]);
            codec.restart_dead_codes(sample, rng.uniform_int(0, 1 << 30));
        }
    }
    return out;
}

TrainLog train_denoiser(nn::Network& net, const std::vector<nn::Tensor>& latents,
                        const diffusion::NoiseSchedule& schedule, const DenoiserSection& cfg,
                        std::uint64_t seed, std::ostream* log) {
    TrainLog out{{"step", "loss"}, {}};
    if (cfg.iterations == 0) return out;
    if (latents.empty()) throw std::invalid_argument("train_denoiser: no training latents");
    nn::TrainConfig tc;
    tc.learning_rate = cfg.learning_rate;
    tc.batch_size = cfg.batch_size;
    Rng rng(mix_seed(seed, net.adam().step));
    const int last = static_cast<int>(latents.size()) - 1;
    std::vector<nn::Tensor> batch;
    double running = 0.0;
    for (int it = 0; it < cfg.iterations; ++it) {
        batch.clear();
        for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(latents[rng.uniform_int(0, last)]);
        const double loss =
            diffusion::denoiser_train_step(net, batch, schedule, cfg.t_max, tc, rng);
        out.rows.push_back({static_cast<double>(net.adam().step), loss});
        running += loss;
        if (log && (it + 1) % 200 == 0) {
            *log << "denoiser step " << net.adam().step << " mean loss " << running / 200.0
                 << '\n';
            running = 0.0;
        }
    }
    return out;
}

int cmd_gen_data(const PipelineConfig& cfg, std::ostream& log) {
    phantom::PhantomConfig pc = cfg.phantom;
    pc.seed = cfg.seed;
    const auto cases = phantom::generate_dataset(pc, cfg.cases);
    const auto rows = phantom::write_dataset(cfg.paths.data, cases);
    int unhealthy = 0;
    for (const auto& c : cases) unhealthy += c.true_label == phantom::CaseLabel::Unhealthy;
    log << "wrote " << rows.size() << " cases (" << unhealthy << " with lesions) to "
        << cfg.paths.data.string() << '\n';
    return 0;
}

Stage parse_stage(const std::string& text) {
    if (text == "codec") return Stage::Codec;
    if (text == "denoiser") return Stage::Denoiser;
    if (text == "classifier") return Stage::Classifier;
    throw std::invalid_argument("unknown training stage '" + text +
                                "' (expected codec, denoiser or classifier)");
}

int cmd_train(const PipelineConfig& cfg, Stage stage, bool resume, std::ostream& log) {
    fs::create_directories(cfg.paths.models);
    if (stage == Stage::Codec) {
        const auto rows = load_manifest(cfg);
        const PatchSet ps = collect_patches(rows, cfg.patch_mm);
        vq::CodecConfig cc = cfg.codec.model;
        cc.seed = mix_seed(cfg.seed, 1);
        vq::VqCodec codec = resume && fs::exists(codec_path(cfg)) ? load_codec(cfg) : vq::VqCodec(cc);
        const TrainLog tl = train_codec(codec, ps.patches, cfg.codec, cfg.seed, &log);
        codec.fit_latent_stats(ps.patches);
        save_atomic(codec_path(cfg), [&](std::ostream& os) { codec.save(os); });
        tl.write_csv(cfg.paths.models / "codec_train.csv");
        log << "codec saved to " << codec_path(cfg).string() << " (latent mean "
            << codec.latent_stats().mean << ", sd " << codec.latent_stats().stddev << ")\n";
        return 0;
    }

    // Both later stages work on codec latents.
    vq::VqCodec codec = load_codec(cfg);
    const auto rows = load_manifest(cfg);
    const PatchSet ps = collect_patches(rows, cfg.patch_mm);
    const auto schedule = diffusion::make_schedule(cfg.denoiser.timesteps);

    if (stage == Stage::Denoiser) {
        std::vector<nn::Tensor> latents;
        for (std::size_t i = 0; i < ps.patches.size(); ++i) {
            if (ps.labels[i] == phantom::CaseLabel::Healthy) {
                latents.push_back(normalized_latent(codec, ps.patches[i]));
            }
        }
        if (latents.empty()) throw std::runtime_error("no healthy-labelled cases to train on");
        const int channels = latents.front().shape().c;
        nn::Network net = resume && fs::exists(denoiser_path(cfg))
                              ? load_net(denoiser_path(cfg), "denoiser checkpoint")
                              : nn::Network(diffusion::denoiser_spec(
                                    channels, cfg.denoiser.base_channels, cfg.denoiser.levels,
                                    mix_seed(cfg.seed, 2)));
        const TrainLog tl = train_denoiser(net, latents, schedule, cfg.denoiser, cfg.seed, &log);
        save_atomic(denoiser_path(cfg), [&](std::ostream& os) { nn::save_network(os, net); });
        tl.write_csv(cfg.paths.models / "denoiser_train.csv");
        log << "denoiser saved to " << denoiser_path(cfg).string() << " after "
            << net.adam().step << " steps\n";
        return 0;
    }

    // Classifier: split by case so both kidneys of a case land on the same side, and per
    // weak label so validation always holds both classes.
    std::vector<std::size_t> by_label[2];
    for (std::size_t i = 0; i < rows.size(); ++i) {
        by_label[rows[i].weak_label == phantom::CaseLabel::Healthy ? 0 : 1].push_back(i);
    }
    Rng rng(mix_seed(cfg.seed, 3));
    std::set<std::size_t> val_cases;
    for (auto& group : by_label) {
        if (group.size() < 2) throw std::runtime_error("classifier: needs two cases of each weak label");
        for (std::size_t i = group.size(); i > 1; --i) {
            std::swap(group[i - 1], group[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        }
        const auto n_val = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::lround(cfg.classifier.validation_fraction * group.size())), 1,
            group.size() - 1);
        val_cases.insert(group.begin(), group.begin() + static_cast<std::ptrdiff_t>(n_val));
    }
    std::vector<classifier::Example> train, val;
    for (std::size_t i = 0; i < ps.patches.size(); ++i) {
        classifier::Example e{normalized_latent(codec, ps.patches[i]), ps.labels[i]};
        (val_cases.count(ps.case_index[i]) ? val : train).push_back(std::move(e));
    }
    if (train.empty() || val.empty()) throw std::runtime_error("classifier: dataset too small");
    const int channels = train.front().latent.shape().c;
    nn::Network net = resume && fs::exists(classifier_path(cfg))
                          ? load_net(classifier_path(cfg), "classifier checkpoint")
                          : nn::Network(classifier::classifier_spec(
                                channels, cfg.classifier.base_channels, cfg.classifier.levels,
                                mix_seed(cfg.seed, 4)));
    nn::TrainConfig tc;
    tc.learning_rate = cfg.classifier.learning_rate;
    tc.batch_size = cfg.classifier.batch_size;
    tc.epochs = cfg.classifier.epochs;
    tc.patience = cfg.classifier.patience;
    tc.seed = mix_seed(cfg.seed, 5 + net.adam().step);
    const auto report =
        classifier::train_classifier(net, train, val, schedule, cfg.classifier.t_max, tc);
    save_atomic(classifier_path(cfg), [&](std::ostream& os) { nn::save_network(os, net); });
    classifier::write_report_csv(cfg.paths.models / "classifier_train.csv", report);
    log << "classifier saved to " << classifier_path(cfg).string() << " (best validation AUC "
        << report.best_auc << " at epoch " << report.best_epoch << ")\n";
    return 0;
}

int cmd_detect(const PipelineConfig& cfg, const std::vector<std::string>& case_ids,
               std::ostream& log) {
    auto rows = load_manifest(cfg);
    if (!case_ids.empty()) {
        std::map<std::string, phantom::ManifestRow> by_id;
        for (auto& r : rows) by_id[r.case_id] = r;
        std::vector<phantom::ManifestRow> picked;
        std::string unknown;
        for (const auto& id : case_ids) {
            const auto it = by_id.find(id);
            if (it == by_id.end()) unknown += " " + id;
            else picked.push_back(it->second);
        }
        if (!unknown.empty()) throw std::invalid_argument("unknown case ids:" + unknown);
        rows = std::move(picked);
    }
    const Models shared = load_models(cfg, cfg.sampler.guidance_scale > 0.0);
    fs::create_directories(cfg.paths.output);
    const int workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(rows.size())));
    std::vector<Models> per_worker(static_cast<std::size_t>(workers), shared);
    std::vector<std::string> errors(rows.size());
    parallel_for(rows.size(), workers, [&](std::size_t i, std::size_t w) {
        const auto& row = rows[i];
        try {
            const Volume image = io::load_volume(row.image_path);
            const CaseResult r =
                detect_case(row.case_id, image, row.roi_centers_mm, cfg, cfg.sampler, per_worker[w]);
            const fs::path base = cfg.paths.output / row.case_id;
            io::save(fs::path(base.string() + "_anomaly.vol"), r.anomaly);
            io::save(fs::path(base.string() + "_recon.vol"), r.reconstruction);
            io::save(fs::path(base.string() + "_pred.vol"), r.candidates.foreground());
            io::save(fs::path(base.string() + "_labels.vol"), r.candidates.labels);
            write_montage(fs::path(base.string() + "_montage.pgm"), r);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    int failed = 0;
    std::ofstream failures;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (errors[i].empty()) continue;
        if (!failures.is_open()) {
            failures.open(cfg.paths.output / "failures.csv");
            failures << "case_id,error\n";
        }
        failures << rows[i].case_id << ",\"" << errors[i] << "\"\n";
        log << "case " << rows[i].case_id << " failed: " << errors[i] << '\n';
        ++failed;
    }
    log << "detect: " << rows.size() - failed << " of " << rows.size() << " cases written to "
        << cfg.paths.output.string() << '\n';
    return failed ? 1 : 0;
}

int cmd_eval(const PipelineConfig& cfg, const fs::path& pred_dir, const fs::path& ref_dir,
             std::ostream& log) {
    auto ids_with_suffix = [](const fs::path& dir, const std::string& suffix) {
        std::map<std::string, fs::path> out;
        if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
        for (const auto& e : fs::directory_iterator(dir)) {
            const std::string name = e.path().filename().string();
            if (name.size() > suffix.size() &&
                name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
                out[name.substr(0, name.size() - suffix.size())] = e.path();
            }
        }
        return out;
    };
    const auto refs = ids_with_suffix(ref_dir, "_truth.vol");
    const auto preds = ids_with_suffix(pred_dir, "_pred.vol");
    std::string orphans;
    for (const auto& [id, p] : preds) {
        if (!refs.count(id)) orphans += " " + id;
    }
    if (!orphans.empty()) {
        log << "predictions without a reference:" << orphans << '\n';
        return 2;
    }
    if (refs.empty()) throw std::runtime_error("no reference masks in " + ref_dir.string());
    const int conn = cfg.postprocess.component_connectivity;
    std::vector<eval::CaseInput> cases;
    for (const auto& [id, ref_path] : refs) {
        eval::CaseInput in;
        in.case_id = id;
        in.ref = post::connected_components(io::load_mask(ref_path), conn);
        const auto it = preds.find(id);
        if (it == preds.end()) {
            log << "no prediction for " << id << ", scoring it as empty\n";
            in.pred = post::ComponentSet{LabelGrid(in.ref.labels.geometry()), {}};
        } else if (io::peek_dtype(it->second) == io::VolDtype::Label32) {
            in.pred = post::from_labels(io::load_labels(it->second));
            in.segmentation = false;
        } else {
            in.pred = post::connected_components(io::load_mask(it->second), conn);
        }
        cases.push_back(std::move(in));
    }
    const auto bins = cfg.eval.bins();
    const eval::DetectionReport rep = eval::evaluate(cases, bins, cfg.eval.iou_threshold);
    fs::create_directories(cfg.paths.output);
    eval::write_report_csv(cfg.paths.output / "report.csv", rep);
    eval::write_summary_csv(cfg.paths.output / "summary.csv", rep);
    log << "cases " << cases.size() << "  DSC ";
    if (rep.dsc.n) log << rep.dsc.mean << " (" << rep.dsc.sd << ")";
    else log << "N/A";
    log << "  precision " << rep.precision.mean << "  recall " << rep.recall.mean << "  F1 "
        << rep.f1.mean << '\n';
    for (const auto& b : rep.bins) {
        log << "  bin " << b.bin.name << " cm (n=" << b.cases.size() << ")";
        if (!b.cases.empty()) log << "  recall " << b.recall.mean << "  precision " << b.precision.mean;
        log << '\n';
    }
    return 0;
}

int cmd_sweep(const PipelineConfig& cfg, std::ostream& log) {
    auto rows = load_manifest(cfg);
    if (cfg.sweep.cases > 0 && static_cast<std::size_t>(cfg.sweep.cases) < rows.size()) {
        rows.resize(static_cast<std::size_t>(cfg.sweep.cases));
    }
    if (rows.empty()) throw std::runtime_error("sweep: dataset is empty");
    const bool guided = std::any_of(cfg.sweep.scales.begin(), cfg.sweep.scales.end(),
                                    [](double s) { return s > 0.0; });
    const Models shared = load_models(cfg, guided);
    const int workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(rows.size())));
    std::vector<Models> per_worker(static_cast<std::size_t>(workers), shared);
    std::vector<Volume> images;
    std::vector<BinaryMask> truths;
    for (const auto& r : rows) {
        images.push_back(io::load_volume(r.image_path));
        truths.push_back(io::load_mask(r.truth_path));
    }
    auto run = [&](int level, double scale) {
        diffusion::SamplerConfig sc = cfg.sampler;
        sc.level = level;
        sc.guidance_scale = scale;
        std::vector<double> dsc(rows.size());
        parallel_for(rows.size(), workers, [&](std::size_t i, std::size_t w) {
            const CaseResult r = detect_case(rows[i].case_id, images[i], rows[i].roi_centers_mm,
                                             cfg, sc, per_worker[w]);
            dsc[i] = eval::dice(r.candidates.foreground(), truths[i]);
        });
        log << "sweep L=" << level << " s=" << scale << " mean DSC "
            << eval::summarize(dsc).mean << '\n';
        return dsc;
    };
    const eval::SweepResult res = eval::sweep(cfg.sweep.levels, cfg.sweep.scales, run, 1);
    fs::create_directories(cfg.paths.output);
    eval::write_sweep_csv(cfg.paths.output / "sweep.csv", diffusion::to_string(cfg.sampler.mode),
                          res);
    PipelineConfig best = cfg;
    best.sampler.level = res.cells[res.best].level;
    best.sampler.guidance_scale = res.cells[res.best].scale;
    std::ofstream os(cfg.paths.output / "config_best.ini");
    write_config(os, best);
    if (!os) throw std::runtime_error("cannot write config_best.ini");
    log << "best L=" << best.sampler.level << " s=" << best.sampler.guidance_scale
        << " mean DSC " << res.cells[res.best].dsc.mean << '\n';
    return 0;
}

}  // namespace latentad::cli
