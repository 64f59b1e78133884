#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dmad/rng.hpp"
#include "dmad/tensor.hpp"

namespace dmad {

struct LimeConfig {
    int grid = 8;               // g x g superpixel grid
    int num_samples = 1000;     // perturbations, including the all-ones mask
    double keep_prob = 0.5;     // Bernoulli keep probability per region
    double kernel_width = 0.25; // exponential kernel over cosine distance
    double ridge_penalty = 1.0;
    double baseline = 0.5;      // fill for masked-off regions
    std::uint64_t seed = 7;
    int topk = 8;

    void validate() const;
};

/// Signed region importances for the morph class, on the g x g grid.
struct Attribution {
    Tensor weights; // [g x g]
    double intercept = 0.0;
    double local_fidelity_r2 = 0.0;
};

/// Region id per pixel (row-major), g*g near-equal rectangles. When the side
/// is not divisible by g the boundary rows/columns absorb the remainder, so
/// region extents differ by at most one row/column.
std::vector<int> segment_grid(int height, int width, int g);

struct PerturbBatch {
    std::vector<std::vector<std::uint8_t>> masks; // [num_samples][g*g], first row all ones
    std::vector<Tensor> images;
};

/// Bernoulli(keep_prob) region masks; masked-off regions become the baseline
/// fill. The first sample is always the unperturbed image.
PerturbBatch perturb_batch(const Tensor& image, std::span<const int> region_map,
                           const LimeConfig& cfg, RngState rng);

/// Weighted ridge fit of scores against binary masks.
///
/// Sample weights pi_i = exp(-d_i^2 / kernel_width^2), d_i the cosine distance
/// to the all-ones mask. Weights are normalized to sum to one (so globally
/// rescaling pi changes nothing) and the system is solved on pi-centered data
/// with the intercept recovered afterwards, leaving the intercept unpenalized:
///   (Zc' Pi Zc + ridge * I) w = Zc' Pi fc.
Attribution fit_local_surrogate(std::span<const std::vector<std::uint8_t>> masks,
                                std::span<const double> scores, const LimeConfig& cfg);

/// Same solve with caller-supplied sample weights (normalized internally, so
/// rescaling all weights leaves the solution unchanged).
Attribution fit_local_surrogate_weighted(std::span<const std::vector<std::uint8_t>> masks,
                                         std::span<const double> scores,
                                         std::span<const double> sample_weights,
                                         const LimeConfig& cfg);

using ScoreFn = std::function<double(const Tensor&)>;

struct ExplainResult {
    Attribution attribution;
    Tensor overlay; // input with top-k positive region boundaries brightened
};

/// segment -> perturb -> score -> fit -> render. `score` must be
/// deterministic (model in evaluation mode).
ExplainResult explain(const ScoreFn& score, const Tensor& image, const LimeConfig& cfg);

/// CSV "region_row,region_col,weight", g*g rows.
void write_attribution_csv(const std::string& path, const Attribution& attribution);

} // namespace dmad
