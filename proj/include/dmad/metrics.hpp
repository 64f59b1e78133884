#pragma once

#include <span>
#include <string>
#include <vector>

#include "dmad/tensor.hpp"

namespace dmad {

/// One scored sample. Scores are attack likelihoods in [0, 1]: higher means
/// more morph-like (the morph-class softmax probability in this project).
struct ScoreRecord {
    std::string sample_id;
    bool is_morph = false;
    double score = 0.0;
    std::string technique; // empty for bona fide records
};

struct DetPoint {
    double threshold; // classify as attack iff score >= threshold
    double macer;     // fraction of morphs with score < threshold
    double bpcer;     // fraction of bona fide with score >= threshold
};

/// (macer, bpcer) at one threshold. Requires at least one record per label.
std::pair<double, double> error_rates_at(std::span<const ScoreRecord> records, double threshold);

/// Sweep over the sorted distinct scores plus sentinels -inf/+inf, ascending.
/// Endpoints are (macer 0, bpcer 1) and (macer 1, bpcer 0); macer is
/// non-decreasing and bpcer non-increasing along the sweep.
std::vector<DetPoint> det_curve(std::span<const ScoreRecord> records);

struct EerResult {
    double eer;
    double threshold;
};

/// Detection equal error rate. An exact macer == bpcer tie at a sweep point is
/// returned directly (smallest such threshold); otherwise both rates are
/// interpolated linearly in threshold across the first sign change of
/// (macer - bpcer). The interpolated rate depends only on the rate values at
/// the bracketing sweep points, so it is invariant under strictly increasing
/// score transforms.
EerResult d_eer(std::span<const ScoreRecord> records);

/// Smallest BPCER over all sweep thresholds whose MACER <= target. The -inf
/// sentinel (macer 0, bpcer 1) always qualifies, so the result is never empty.
double bpcer_at_macer(std::span<const ScoreRecord> records, double target);

struct TechniqueRow {
    std::string technique;
    double eer = 0.0;
    double bpcer_at_5 = 0.0;
    double bpcer_at_10 = 0.0;
    bool omitted = false; // technique tag seen but without any morph record
};

/// Per-technique metrics over (all bona fide) + (that technique's morphs),
/// one row per tag, sorted by tag.
std::vector<TechniqueRow> per_technique_report(std::span<const ScoreRecord> records);

// Score file: CSV "sample_id,label,score,technique", label in {bonafide,morph},
// rates and scores serialized as decimals via shortest round-trip formatting.
std::string format_double(double v);
double parse_double(const std::string& s, const std::string& context);

void write_scores_csv(const std::string& path, std::span<const ScoreRecord> records);
std::vector<ScoreRecord> read_scores_csv(const std::string& path);

// DET export: CSV "threshold,macer,bpcer" (sentinels serialized as -inf/inf).
void write_det_csv(const std::string& path, std::span<const DetPoint> points);
std::vector<DetPoint> read_det_csv(const std::string& path);

} // namespace dmad
