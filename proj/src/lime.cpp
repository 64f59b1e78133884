#include "dmad/lime.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dmad/error.hpp"
#include "dmad/metrics.hpp" // format_double

namespace dmad {

void LimeConfig::validate() const {
    if (grid < 2) throw ConfigError("lime: grid must be >= 2");
    if (num_samples < grid * grid)
        throw ConfigError("lime: num_samples must be >= grid^2");
    if (!(keep_prob > 0.0 && keep_prob < 1.0))
        throw ConfigError("lime: keep_prob must lie in (0, 1)");
    if (!(kernel_width > 0.0)) throw ConfigError("lime: kernel_width must be > 0");
    if (!(ridge_penalty > 0.0)) throw ConfigError("lime: ridge_penalty must be > 0");
    if (!(baseline >= 0.0 && baseline <= 1.0))
        throw ConfigError("lime: baseline must lie in [0, 1]");
    if (topk < 1) throw ConfigError("lime: topk must be >= 1");
}

std::vector<int> segment_grid(int height, int width, int g) {
    if (g < 2) throw ConfigError("segment_grid: g must be >= 2");
    std::vector<int> map(static_cast<std::size_t>(height) * width);
    for (int y = 0; y < height; ++y) {
        const int ry = std::min(g - 1, y * g / height);
        for (int x = 0; x < width; ++x) {
            const int rx = std::min(g - 1, x * g / width);
            map[static_cast<std::size_t>(y) * width + x] = ry * g + rx;
        }
    }
    return map;
}

PerturbBatch perturb_batch(const Tensor& image, std::span<const int> region_map,
                           const LimeConfig& cfg, RngState rng) {
    cfg.validate();
    const int regions = cfg.grid * cfg.grid;
    const std::size_t pixels = image.size();
    if (region_map.size() != pixels)
        throw DimensionError("perturb_batch: region map does not cover the image");
    PerturbBatch out;
    out.masks.reserve(static_cast<std::size_t>(cfg.num_samples));
    out.images.reserve(static_cast<std::size_t>(cfg.num_samples));
    for (int s = 0; s < cfg.num_samples; ++s) {
        std::vector<std::uint8_t> mask(static_cast<std::size_t>(regions), 1);
        if (s > 0)
            for (auto& m : mask) m = rng.next_double() < cfg.keep_prob ? 1 : 0;
        Tensor img = image;
        for (std::size_t px = 0; px < pixels; ++px)
            if (!mask[static_cast<std::size_t>(region_map[px])])
                img[px] = static_cast<float>(cfg.baseline);
        out.masks.push_back(std::move(mask));
        out.images.push_back(std::move(img));
    }
    return out;
}

namespace {

/// Cholesky solve of the SPD system A x = b (A consumed as workspace).
std::vector<double> cholesky_solve(std::vector<double> a, std::vector<double> b, int n) {
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double sum = a[static_cast<std::size_t>(i) * n + j];
            for (int k = 0; k < j; ++k)
                sum -= a[static_cast<std::size_t>(i) * n + k] * a[static_cast<std::size_t>(j) * n + k];
            if (i == j) {
                if (sum <= 0.0) throw EvalError("lime: ridge system is not positive definite");
                a[static_cast<std::size_t>(i) * n + j] = std::sqrt(sum);
            } else {
                a[static_cast<std::size_t>(i) * n + j] = sum / a[static_cast<std::size_t>(j) * n + j];
            }
        }
    }
    for (int i = 0; i < n; ++i) {
        double sum = b[static_cast<std::size_t>(i)];
        for (int k = 0; k < i; ++k) sum -= a[static_cast<std::size_t>(i) * n + k] * b[static_cast<std::size_t>(k)];
        b[static_cast<std::size_t>(i)] = sum / a[static_cast<std::size_t>(i) * n + i];
    }
    for (int i = n - 1; i >= 0; --i) {
        double sum = b[static_cast<std::size_t>(i)];
        for (int k = i + 1; k < n; ++k) sum -= a[static_cast<std::size_t>(k) * n + i] * b[static_cast<std::size_t>(k)];
        b[static_cast<std::size_t>(i)] = sum / a[static_cast<std::size_t>(i) * n + i];
    }
    return b;
}

} // namespace

Attribution fit_local_surrogate(std::span<const std::vector<std::uint8_t>> masks,
                                std::span<const double> scores, const LimeConfig& cfg) {
    cfg.validate();
    const int d = cfg.grid * cfg.grid;
    const std::size_t n = masks.size();
    if (n != scores.size() || n < static_cast<std::size_t>(d))
        throw DimensionError("fit_local_surrogate: need at least g^2 scored masks");
    for (double s : scores)
        if (!std::isfinite(s)) throw EvalError("fit_local_surrogate: non-finite model score");

    // pi_i = exp(-d_i^2 / width^2), d_i = cosine distance of mask i to all-ones.
    std::vector<double> pi(n);
    double pi_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double on = 0.0;
        for (std::uint8_t m : masks[i]) on += m;
        const double dist = on > 0.0 ? 1.0 - std::sqrt(on / d) : 1.0;
        pi[i] = std::exp(-dist * dist / (cfg.kernel_width * cfg.kernel_width));
        pi_sum += pi[i];
    }
    for (double& p : pi) p /= pi_sum;

    std::vector<double> z_mean(static_cast<std::size_t>(d), 0.0);
    double f_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) z_mean[static_cast<std::size_t>(j)] += pi[i] * masks[i][static_cast<std::size_t>(j)];
        f_mean += pi[i] * scores[i];
    }

    std::vector<double> a(static_cast<std::size_t>(d) * d, 0.0);
    std::vector<double> b(static_cast<std::size_t>(d), 0.0);
    std::vector<double> zc(static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) zc[static_cast<std::size_t>(j)] = masks[i][static_cast<std::size_t>(j)] - z_mean[static_cast<std::size_t>(j)];
        const double fc = scores[i] - f_mean;
        for (int r = 0; r < d; ++r) {
            const double w = pi[i] * zc[static_cast<std::size_t>(r)];
            if (w == 0.0) continue;
            double* row = a.data() + static_cast<std::size_t>(r) * d;
            for (int c = 0; c <= r; ++c) row[c] += w * zc[static_cast<std::size_t>(c)];
            b[static_cast<std::size_t>(r)] += w * fc;
        }
    }
    for (int r = 0; r < d; ++r) {
        for (int c = r + 1; c < d; ++c)
            a[static_cast<std::size_t>(r) * d + c] = a[static_cast<std::size_t>(c) * d + r];
        a[static_cast<std::size_t>(r) * d + r] += cfg.ridge_penalty;
    }
    const std::vector<double> w = cholesky_solve(std::move(a), std::move(b), d);

    Attribution out;
    out.weights = Tensor(Shape{cfg.grid, cfg.grid});
    for (int j = 0; j < d; ++j) out.weights[static_cast<std::size_t>(j)] = static_cast<float>(w[static_cast<std::size_t>(j)]);
    double zw = 0.0;
    for (int j = 0; j < d; ++j) zw += z_mean[static_cast<std::size_t>(j)] * w[static_cast<std::size_t>(j)];
    out.intercept = f_mean - zw;

    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double pred = out.intercept;
        for (int j = 0; j < d; ++j) pred += w[static_cast<std::size_t>(j)] * masks[i][static_cast<std::size_t>(j)];
        ss_res += pi[i] * (scores[i] - pred) * (scores[i] - pred);
        ss_tot += pi[i] * (scores[i] - f_mean) * (scores[i] - f_mean);
    }
    out.local_fidelity_r2 = ss_tot < 1e-18 ? (ss_res < 1e-18 ? 1.0 : 0.0)
                                           : 1.0 - ss_res / ss_tot;
    return out;
}

ExplainResult explain(const ScoreFn& score, const Tensor& image, const LimeConfig& cfg) {
    cfg.validate();
    const int h = image.extent(1), w = image.extent(2);
    const std::vector<int> regions = segment_grid(h, w, cfg.grid);
    RngState rng(cfg.seed);
    const PerturbBatch batch = perturb_batch(image, regions, cfg, rng.split("lime.masks"));
    std::vector<double> scores(batch.images.size());
    for (std::size_t i = 0; i < batch.images.size(); ++i) {
        scores[i] = score(batch.images[i]);
        if (!std::isfinite(scores[i]))
            throw EvalError("explain: model returned a non-finite score");
    }
    ExplainResult out;
    out.attribution = fit_local_surrogate(batch.masks, scores, cfg);

    // Overlay: brighten the boundaries of the top-k positively attributed regions.
    const int d = cfg.grid * cfg.grid;
    std::vector<int> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int x, int y) {
        const float wx = out.attribution.weights[static_cast<std::size_t>(x)];
        const float wy = out.attribution.weights[static_cast<std::size_t>(y)];
        return wx != wy ? wx > wy : x < y;
    });
    std::vector<char> picked(static_cast<std::size_t>(d), 0);
    for (int k = 0; k < std::min(cfg.topk, d); ++k) {
        const int region = order[static_cast<std::size_t>(k)];
        if (out.attribution.weights[static_cast<std::size_t>(region)] > 0.0f)
            picked[static_cast<std::size_t>(region)] = 1;
    }
    out.overlay = image;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int r = regions[static_cast<std::size_t>(y) * w + x];
            if (!picked[static_cast<std::size_t>(r)]) continue;
            const bool boundary =
                y == 0 || x == 0 || y == h - 1 || x == w - 1 ||
                regions[static_cast<std::size_t>(y - 1) * w + x] != r ||
                regions[static_cast<std::size_t>(y + 1) * w + x] != r ||
                regions[static_cast<std::size_t>(y) * w + x - 1] != r ||
                regions[static_cast<std::size_t>(y) * w + x + 1] != r;
            if (boundary)
                out.overlay.at(0, y, x) = std::min(1.0f, out.overlay.at(0, y, x) + 0.5f);
        }
    return out;
}

void write_attribution_csv(const std::string& path, const Attribution& attribution) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "region_row,region_col,weight\n";
    const int g = attribution.weights.extent(0);
    for (int r = 0; r < g; ++r)
        for (int c = 0; c < g; ++c)
            out << r << ',' << c << ',' << format_double(attribution.weights.at(r, c)) << '\n';
    if (!out) throw IoError("short write to " + path);
}

} // namespace dmad
