#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latentad/grid.hpp"
#include "latentad/postprocess.hpp"

namespace latentad::eval {

/// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dice(const BinaryMask& a, const BinaryMask& b);
/// |A n B| / |A u B|; throws when both are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

struct Match {
    std::uint32_t pred = 0;
    std::uint32_t ref = 0;
    double iou = 0.0;
};

struct MatchTable {
    std::vector<Match> matches;
    std::vector<std::uint32_t> unmatched_pred;
    std::vector<std::uint32_t> unmatched_ref;
};

/// IoU of every overlapping (pred, ref) component pair, keyed by 1-based labels.
std::vector<Match> pairwise_iou(const post::ComponentSet& pred, const post::ComponentSet& ref);

/// Greedy one-to-one matching by descending IoU over pairs with IoU >= threshold; equal IoU
/// falls back to lower pred label, then lower ref label.
MatchTable match_lesions(const post::ComponentSet& pred, const post::ComponentSet& ref,
                         double threshold = 0.2);

struct Stat {
    double mean = 0.0;
    double sd = 0.0;  // population sd
    std::size_t n = 0;
};
Stat summarize(std::span<const double> values);

struct CaseMetrics {
    std::string case_id;
    std::string bin = "all";
    std::size_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0;           // 0 when there are no predictions
    std::optional<double> recall;     // absent when there are no references
    std::optional<double> f1;         // absent with recall
    std::optional<double> dsc;        // absent for detection-only predictions
};

/// Per-case precision/recall/F1 from counts.
CaseMetrics case_metrics(std::string case_id, std::size_t tp, std::size_t fp, std::size_t fn);

struct SizeBin {
    std::string name;
    double lower_cm = 0.0;  // exclusive, except the first bin which starts at 0 inclusive
    double upper_cm = std::numeric_limits<double>::infinity();  // inclusive

    bool contains(double diameter_cm) const;
};
/// <=2, 2-4, 4-7, >7 cm.
std::vector<SizeBin> default_bins();

struct CaseInput {
    std::string case_id;
    post::ComponentSet pred;
    post::ComponentSet ref;
    bool segmentation = true;  // false: detection-only predictions, no DSC
};

struct BinReport {
    SizeBin bin;
    std::vector<CaseMetrics> cases;  // only retained cases
    Stat dsc, precision, recall, f1;
};

struct DetectionReport {
    std::vector<CaseMetrics> cases;
    Stat dsc, precision, recall, f1;
    std::vector<BinReport> bins;
};

/// Per-case metrics over all lesions, aggregated as mean and sd across cases.
DetectionReport detection_metrics(std::span<const CaseInput> cases, double iou_threshold = 0.2);

/// Size-stratified metrics: per bin only reference lesions in the bin count (matched -> TP,
/// unmatched -> FN), unmatched predictions in the bin are FP, and cases without reference
/// lesions in the bin are excluded. Matching is done once over all lesions. Bin DSC compares
/// the in-bin reference lesions with the predictions counted in that bin (TP and FP).
std::vector<BinReport> stratified_eval(std::span<const CaseInput> cases,
                                       std::span<const SizeBin> bins,
                                       double iou_threshold = 0.2);

/// detection_metrics plus stratified bins.
DetectionReport evaluate(std::span<const CaseInput> cases, std::span<const SizeBin> bins,
                         double iou_threshold = 0.2);

/// case_id,bin,TP,FP,FN,precision,recall,f1,dsc (N/A where undefined).
void write_report_csv(const std::filesystem::path& path, const DetectionReport& report);
/// bin,n,dsc_mean,dsc_sd,precision_mean,precision_sd,recall_mean,recall_sd,f1_mean,f1_sd.
void write_summary_csv(const std::filesystem::path& path, const DetectionReport& report);

struct SweepCell {
    int level = 0;
    double scale = 0.0;
    Stat dsc;
};

struct SweepResult {
    std::vector<SweepCell> cells;  // grid order: L outer, s inner
    std::size_t best = 0;
};

/// Evaluates every (L, s) cell with `run` (returning per-case DSC values) using up to
/// `workers` threads and picks the highest mean DSC; ties go to smaller L, then smaller s.
SweepResult sweep(std::span<const int> levels, std::span<const double> scales,
                  const std::function<std::vector<double>(int, double)>& run, int workers = 1);

/// mode,L,s,mean_dsc,sd_dsc.
void write_sweep_csv(const std::filesystem::path& path, const std::string& mode,
                     const SweepResult& result);

}  // namespace latentad::eval
