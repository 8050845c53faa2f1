#include "latentad/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "latentad/parallel.hpp"

namespace latentad::eval {

namespace {

struct Overlap {
    std::size_t a = 0, b = 0, both = 0;
};

Overlap overlap(const BinaryMask& a, const BinaryMask& b, const char* what) {
    require_same_geometry(a.geometry(), b.geometry(), what);
    Overlap o;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0, y = b[i] != 0;
        o.a += x;
        o.b += y;
        o.both += x && y;
    }
    return o;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "N/A"; }

Stat summarize_optional(const std::vector<CaseMetrics>& cases,
                        std::optional<double> CaseMetrics::*field) {
    std::vector<double> values;
    for (const auto& c : cases) {
        if (c.*field) values.push_back(*(c.*field));
    }
    return summarize(values);
}

Stat summarize_precision(const std::vector<CaseMetrics>& cases) {
    std::vector<double> values;
    for (const auto& c : cases) values.push_back(c.precision);
    return summarize(values);
}

void fill_stats(std::vector<CaseMetrics>& cases, Stat& dsc, Stat& p, Stat& r, Stat& f1) {
    dsc = summarize_optional(cases, &CaseMetrics::dsc);
    p = summarize_precision(cases);
    r = summarize_optional(cases, &CaseMetrics::recall);
    f1 = summarize_optional(cases, &CaseMetrics::f1);
}

BinaryMask union_of(const post::ComponentSet& cs, const std::vector<bool>& keep) {
    BinaryMask out(cs.labels.geometry());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::uint32_t l = cs.labels[i];
        out[i] = l && keep[l] ? 1 : 0;
    }
    return out;
}

}  // namespace

double dice(const BinaryMask& a, const BinaryMask& b) {
    const Overlap o = overlap(a, b, "dice");
    if (o.a + o.b == 0) return 1.0;
    return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.a + o.b);
}

double iou(const BinaryMask& a, const BinaryMask& b) {
    const Overlap o = overlap(a, b, "iou");
    const std::size_t uni = o.a + o.b - o.both;
    if (uni == 0) throw std::invalid_argument("iou: both components are empty");
    return static_cast<double>(o.both) / static_cast<double>(uni);
}

std::vector<Match> pairwise_iou(const post::ComponentSet& pred, const post::ComponentSet& ref) {
    require_same_geometry(pred.labels.geometry(), ref.labels.geometry(), "match_lesions");
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> inter;
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
        const std::uint32_t p = pred.labels[i], r = ref.labels[i];
        if (p && r) ++inter[{p, r}];
    }
    std::vector<Match> out;
    for (const auto& [key, both] : inter) {
        const std::size_t a = pred.components[key.first - 1].voxels;
        const std::size_t b = ref.components[key.second - 1].voxels;
        out.push_back({key.first, key.second,
                       static_cast<double>(both) / static_cast<double>(a + b - both)});
    }
    return out;
}

MatchTable match_lesions(const post::ComponentSet& pred, const post::ComponentSet& ref,
                         double threshold) {
    std::vector<Match> pairs = pairwise_iou(pred, ref);
    std::erase_if(pairs, [&](const Match& m) { return m.iou < threshold; });
    std::sort(pairs.begin(), pairs.end(), [](const Match& a, const Match& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (a.pred != b.pred) return a.pred < b.pred;
        return a.ref < b.ref;
    });
    std::vector<bool> pred_used(pred.count() + 1, false), ref_used(ref.count() + 1, false);
    MatchTable table;
    for (const auto& m : pairs) {
        if (pred_used[m.pred] || ref_used[m.ref]) continue;
        pred_used[m.pred] = ref_used[m.ref] = true;
        table.matches.push_back(m);
    }
    for (std::uint32_t p = 1; p <= pred.count(); ++p) {
        if (!pred_used[p]) table.unmatched_pred.push_back(p);
    }
    for (std::uint32_t r = 1; r <= ref.count(); ++r) {
        if (!ref_used[r]) table.unmatched_ref.push_back(r);
    }
    return table;
}

Stat summarize(std::span<const double> values) {
    Stat s;
    s.n = values.size();
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(s.n);
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(sq / static_cast<double>(s.n));
    return s;
}

CaseMetrics case_metrics(std::string case_id, std::size_t tp, std::size_t fp, std::size_t fn) {
    CaseMetrics c;
    c.case_id = std::move(case_id);
    c.tp = tp;
    c.fp = fp;
    c.fn = fn;
    c.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    if (tp + fn) {
        const double r = static_cast<double>(tp) / static_cast<double>(tp + fn);
        c.recall = r;
        c.f1 = c.precision + r > 0.0 ? 2.0 * c.precision * r / (c.precision + r) : 0.0;
    }
    return c;
}

bool SizeBin::contains(double d) const {
    const bool above = lower_cm <= 0.0 ? d >= 0.0 : d > lower_cm;
    return above && d <= upper_cm;
}

std::vector<SizeBin> default_bins() {
    return {{"<=2", 0.0, 2.0}, {"2-4", 2.0, 4.0}, {"4-7", 4.0, 7.0},
            {">7", 7.0, std::numeric_limits<double>::infinity()}};
}

DetectionReport detection_metrics(std::span<const CaseInput> cases, double iou_threshold) {
    if (cases.empty()) throw std::invalid_argument("detection_metrics: no cases");
    DetectionReport rep;
    for (const auto& in : cases) {
        const MatchTable t = match_lesions(in.pred, in.ref, iou_threshold);
        CaseMetrics c = case_metrics(in.case_id, t.matches.size(), t.unmatched_pred.size(),
                                     t.unmatched_ref.size());
        if (in.segmentation) c.dsc = dice(in.pred.foreground(), in.ref.foreground());
        rep.cases.push_back(std::move(c));
    }
    fill_stats(rep.cases, rep.dsc, rep.precision, rep.recall, rep.f1);
    return rep;
}

std::vector<BinReport> stratified_eval(std::span<const CaseInput> cases,
                                       std::span<const SizeBin> bins, double iou_threshold) {
    std::vector<MatchTable> tables;
    for (const auto& in : cases) tables.push_back(match_lesions(in.pred, in.ref, iou_threshold));
    std::vector<BinReport> out;
    for (const auto& bin : bins) {
        BinReport br{bin, {}, {}, {}, {}, {}};
        for (std::size_t k = 0; k < cases.size(); ++k) {
            const CaseInput& in = cases[k];
            const MatchTable& t = tables[k];
            std::vector<bool> ref_in(in.ref.count() + 1, false), pred_in(in.pred.count() + 1, false);
            bool any_ref = false;
            for (const auto& c : in.ref.components) {
                ref_in[c.label] = bin.contains(c.diameter_mm / 10.0);
                any_ref = any_ref || ref_in[c.label];
            }
            if (!any_ref) continue;
            std::size_t tp = 0, fp = 0, fn = 0;
            for (const auto& m : t.matches) {
                if (ref_in[m.ref]) {
                    ++tp;
                    pred_in[m.pred] = true;
                }
            }
            for (auto r : t.unmatched_ref) fn += ref_in[r];
            for (auto p : t.unmatched_pred) {
                if (bin.contains(in.pred.components[p - 1].diameter_mm / 10.0)) {
                    ++fp;
                    pred_in[p] = true;
                }
            }
            CaseMetrics c = case_metrics(in.case_id, tp, fp, fn);
            c.bin = bin.name;
            if (in.segmentation) c.dsc = dice(union_of(in.pred, pred_in), union_of(in.ref, ref_in));
            br.cases.push_back(std::move(c));
        }
        fill_stats(br.cases, br.dsc, br.precision, br.recall, br.f1);
        out.push_back(std::move(br));
    }
    return out;
}

DetectionReport evaluate(std::span<const CaseInput> cases, std::span<const SizeBin> bins,
                         double iou_threshold) {
    DetectionReport rep = detection_metrics(cases, iou_threshold);
    rep.bins = stratified_eval(cases, bins, iou_threshold);
    return rep;
}

void write_report_csv(const std::filesystem::path& path, const DetectionReport& report) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "case_id,bin,TP,FP,FN,precision,recall,f1,dsc\n";
    auto row = [&](const CaseMetrics& c) {
        os << c.case_id << ',' << c.bin << ',' << c.tp << ',' << c.fp << ',' << c.fn << ','
           << fmt(c.precision) << ',' << fmt(c.recall) << ',' << fmt(c.f1) << ',' << fmt(c.dsc)
           << '\n';
    };
    for (const auto& c : report.cases) row(c);
    for (const auto& b : report.bins) {
        for (const auto& c : b.cases) row(c);
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

void write_summary_csv(const std::filesystem::path& path, const DetectionReport& report) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "bin,n,dsc_mean,dsc_sd,precision_mean,precision_sd,recall_mean,recall_sd,f1_mean,"
          "f1_sd\n";
    auto stat = [&](const Stat& s) {
        if (s.n == 0) return std::string("N/A,N/A");
        return fmt(s.mean) + ',' + fmt(s.sd);
    };
    auto row = [&](const std::string& name, std::size_t n, const Stat& dsc, const Stat& p,
                   const Stat& r, const Stat& f1) {
        os << name << ',' << n << ',' << stat(dsc) << ',' << stat(p) << ',' << stat(r) << ','
           << stat(f1) << '\n';
    };
    row("all", report.cases.size(), report.dsc, report.precision, report.recall, report.f1);
    for (const auto& b : report.bins) {
        row(b.bin.name, b.cases.size(), b.dsc, b.precision, b.recall, b.f1);
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

SweepResult sweep(std::span<const int> levels, std::span<const double> scales,
                  const std::function<std::vector<double>(int, double)>& run, int workers) {
    if (levels.empty() || scales.empty()) throw std::invalid_argument("sweep: empty grid");
    SweepResult res;
    for (int l : levels) {
        for (double s : scales) res.cells.push_back({l, s, {}});
    }
    parallel_for(res.cells.size(), workers, [&](std::size_t i) {
        const auto dsc = run(res.cells[i].level, res.cells[i].scale);
        res.cells[i].dsc = summarize(dsc);
    });
    for (std::size_t i = 1; i < res.cells.size(); ++i) {
        const SweepCell& c = res.cells[i];
        const SweepCell& b = res.cells[res.best];
        const bool better =
            c.dsc.mean > b.dsc.mean ||
            (c.dsc.mean == b.dsc.mean &&
             (c.level < b.level || (c.level == b.level && c.scale < b.scale)));
        if (better) res.best = i;
    }
    return res;
}

void write_sweep_csv(const std::filesystem::path& path, const std::string& mode,
                     const SweepResult& result) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "mode,L,s,mean_dsc,sd_dsc\n";
    for (const auto& c : result.cells) {
        os << mode << ',' << c.level << ',' << fmt(c.scale) << ',' << fmt(c.dsc.mean) << ','
           << fmt(c.dsc.sd) << '\n';
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace latentad::eval
