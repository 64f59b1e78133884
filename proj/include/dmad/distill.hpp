#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "dmad/adapter.hpp"
#include "dmad/graph.hpp"

namespace dmad {

struct DistillConfig {
    double lambda = 0.5;      // KL weight
    double temperature = 3.0; // softening temperature T
    double teacher_lr = 1e-4;
    double student_lr = 5e-4;
    double min_lr = 1e-5;
    int epochs = 30;
    int batch_size = 64;
    int patience = 5;
    std::uint64_t seed = 42;

    void validate() const {
        if (!(temperature > 0)) throw ConfigError("distill: temperature must be > 0");
        if (lambda < 0) throw ConfigError("distill: lambda must be >= 0");
        if (min_lr > teacher_lr || min_lr > student_lr)
            throw ConfigError("distill: min_lr must not exceed the initial learning rates");
        if (patience < 1) throw ConfigError("distill: patience must be >= 1");
        if (epochs < 1) throw ConfigError("distill: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("distill: batch_size must be >= 1");
    }
};

/// Temperature-softened probability rows (softmax(v / T)).
template <class S>
struct SoftDistributionT {
    TensorT<S> probs;
    S temperature;
};

using SoftDistribution = SoftDistributionT<float>;

/// Mean over the batch of -log softmax(z)[y], in log-sum-exp form; never
/// materializes probabilities.
template <class S>
S cross_entropy(const TensorT<S>& logits, std::span<const int> labels) {
    const int c = logits.last_extent();
    const int rows = logits.leading_rows();
    if (static_cast<int>(labels.size()) != rows)
        throw DimensionError("cross_entropy: got " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(rows) + " logit rows");
    const TensorT<S> lsm = log_softmax_rows(logits);
    S acc = 0;
    for (int r = 0; r < rows; ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= c)
            throw DataError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                            std::to_string(c) + ")");
        acc += lsm[static_cast<std::size_t>(r) * c + y];
    }
    // same accumulation and scaling order as the graph builder, so a
    // lambda = 0 combined loss equals this value bit-for-bit
    return acc * (S(-1) / S(rows));
}

template <class S>
SoftDistributionT<S> soften(const TensorT<S>& v, S temperature) {
    if (!(temperature > S(0)))
        throw ConfigError("soften: temperature must be > 0");
    TensorT<S> scaled = v;
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] /= temperature;
    return {softmax_rows(scaled), temperature};
}

/// Mean over the batch of sum_j p_t[j] * log(p_t[j] / p_s[j]). Zero teacher
/// mass contributes zero; the student side is floored at 1e-12 inside the log.
template <class S>
S kl_divergence(const SoftDistributionT<S>& p_t, const SoftDistributionT<S>& p_s) {
    if (!p_t.probs.same_shape(p_s.probs))
        throw DimensionError("kl_divergence: shape mismatch " + shape_str(p_t.probs.shape()) +
                             " vs " + shape_str(p_s.probs.shape()));
    if (p_t.temperature != p_s.temperature)
        throw ConfigError("kl_divergence: operands were softened at different temperatures");
    const int cols = p_t.probs.last_extent();
    const int rows = p_t.probs.leading_rows();
    S acc = 0;
    for (int r = 0; r < rows; ++r) {
        for (int j = 0; j < cols; ++j) {
            const S pt = p_t.probs[static_cast<std::size_t>(r) * cols + j];
            if (pt <= S(0)) continue;
            const S ps = std::max(p_s.probs[static_cast<std::size_t>(r) * cols + j], S(1e-12));
            acc += pt * (std::log(pt) - std::log(ps));
        }
    }
    return acc / S(rows);
}

/// lr_min + 0.5 * (lr0 - lr_min) * (1 + cos(pi * step / total_steps)).
inline double cosine_lr(int step, int total_steps, double lr0, double lr_min) {
    if (total_steps < 1) throw ScheduleError("cosine_lr: total_steps must be >= 1");
    if (step < 0 || step > total_steps)
        throw ScheduleError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + "]");
    return lr_min + 0.5 * (lr0 - lr_min) *
                        (1.0 + std::cos(std::numbers::pi * step / total_steps));
}

// ---------------------------------------------------------------------------
// Graph builders: the same losses as differentiable nodes.
// ---------------------------------------------------------------------------

template <class S>
typename GraphT<S>::Var ce_loss_graph(GraphT<S>& g, typename GraphT<S>::Var logits,
                                      std::span<const int> labels) {
    const TensorT<S>& z = g.value(logits);
    const int c = z.last_extent();
    const int rows = z.leading_rows();
    if (static_cast<int>(labels.size()) != rows)
        throw DimensionError("ce_loss: label count does not match logit rows");
    std::vector<int> pick(labels.size());
    for (int r = 0; r < rows; ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= c)
            throw DataError("ce_loss: label " + std::to_string(y) + " outside [0, " +
                            std::to_string(c) + ")");
        pick[static_cast<std::size_t>(r)] = r * c + y;
    }
    auto lsm = g.log_softmax_rows(logits);
    auto picked = g.gather(lsm, std::move(pick), Shape{rows});
    return g.reduce_sum(picked, S(-1) / S(rows));
}

/// KL(soften(t, T) || soften(s, T)), mean over rows; differentiable in both
/// operands (gradients reach the adapter through t and the student through s).
template <class S>
typename GraphT<S>::Var kl_soften_graph(GraphT<S>& g, typename GraphT<S>::Var t,
                                        typename GraphT<S>::Var s, S temperature) {
    if (!(temperature > S(0))) throw ConfigError("kl_soften: temperature must be > 0");
    const int rows = g.value(t).leading_rows();
    auto ts = g.scale(t, S(1) / temperature);
    auto ss = g.scale(s, S(1) / temperature);
    auto p_t = g.softmax_rows(ts);
    auto diff = g.sub(g.log_softmax_rows(ts), g.log_softmax_rows(ss));
    return g.reduce_sum(g.mul(p_t, diff), S(1) / S(rows));
}

template <class S>
struct CombinedLossVars {
    typename GraphT<S>::Var total;
    typename GraphT<S>::Var kl; // unweighted; -1 when lambda == 0 (not built)
    typename GraphT<S>::Var ce;
    S kl_value;                 // raw KL component (0 when lambda == 0)
    S ce_value;
    S total_value;
};

/// Eq. 4: total = lambda * KL(soften(adapter(teacher_emb), T), soften(student_emb, T))
///               + CE(student_logits, y).
/// No T^2 rescaling of the KL term. With lambda == 0 the KL path is skipped
/// entirely and reported as zero.
template <class S>
CombinedLossVars<S> combined_loss_graph(GraphT<S>& g, typename GraphT<S>::Var student_logits,
                                        std::span<const int> labels,
                                        typename GraphT<S>::Var teacher_emb,
                                        typename GraphT<S>::Var student_emb,
                                        AdapterT<S>& adapter, const DistillConfig& cfg,
                                        bool training, RngState& rng) {
    CombinedLossVars<S> out;
    out.ce = ce_loss_graph(g, student_logits, labels);
    out.ce_value = g.value(out.ce)[0];
    if (cfg.lambda == 0.0) {
        out.kl = -1;
        out.kl_value = 0;
        out.total = out.ce;
        out.total_value = out.ce_value;
        return out;
    }
    auto adapted = adapter.forward(g, teacher_emb, training, rng);
    if (g.value(adapted).last_extent() != g.value(student_emb).last_extent())
        throw DimensionError("combined_loss: adapted width differs from student embedding width");
    out.kl = kl_soften_graph(g, adapted, student_emb, S(cfg.temperature));
    out.kl_value = g.value(out.kl)[0];
    out.total = g.add(g.scale(out.kl, S(cfg.lambda)), out.ce);
    out.total_value = g.value(out.total)[0];
    return out;
}

template <class S>
struct CombinedLossValue {
    S total, kl, ce;
};

/// Non-graph convenience evaluation of the combined loss (eval mode).
template <class S>
CombinedLossValue<S> combined_loss(const TensorT<S>& student_logits, std::span<const int> labels,
                                   const TensorT<S>& teacher_emb, const TensorT<S>& student_emb,
                                   AdapterT<S>& adapter, const DistillConfig& cfg) {
    GraphT<S> g;
    RngState rng(0);
    auto vars = combined_loss_graph(g, g.input(student_logits), labels, g.input(teacher_emb),
                                    g.input(student_emb), adapter, cfg, false, rng);
    return {vars.total_value, vars.kl_value, vars.ce_value};
}

} // namespace dmad
