#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dmad/error.hpp"
#include "dmad/nn.hpp"

namespace dmad {

template <class S>
struct GradCheckEntry {
    std::string name;
    S max_rel_err = 0; // over the parameter's scalars
    bool trainable = true;
    bool pass = true;
};

template <class S>
struct GradCheckReport {
    std::vector<GradCheckEntry<S>> params;
    S max_rel_err = 0;
    bool pass = true;
};

/// Central-difference check of analytic gradients.
///
/// loss_fn(true) must zero nothing itself: it runs forward+backward and
/// accumulates gradients into the parameters (grad_check zeroes them first).
/// loss_fn(false) must evaluate the loss at the current parameter values with
/// no side effects. Both are expected to be deterministic; run models in
/// evaluation mode or with pinned dropout streams.
///
/// For each trainable scalar t the relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8); the report keeps
/// the per-parameter maximum. Non-trainable parameters are instead checked to
/// have exactly zero accumulated gradient.
template <class S>
GradCheckReport<S> grad_check(const std::function<S(bool)>& loss_fn,
                              std::span<ParameterT<S>* const> params, S h, S tol) {
    if (!(h > S(0))) throw ConfigError("grad_check step h must be > 0");
    for (ParameterT<S>* p : params) p->zero_grad();
    const S base = loss_fn(true);
    if (!std::isfinite(static_cast<double>(base)))
        throw EvalError("grad_check: loss is not finite");

    GradCheckReport<S> report;
    for (ParameterT<S>* p : params) {
        GradCheckEntry<S> entry;
        entry.name = p->name;
        entry.trainable = p->trainable;
        if (!p->trainable) {
            for (std::size_t i = 0; i < p->grad.size(); ++i)
                if (p->grad[i] != S(0)) entry.pass = false;
            report.params.push_back(entry);
            report.pass = report.pass && entry.pass;
            continue;
        }
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const S saved = p->value[i];
            p->value[i] = saved + h;
            const S up = loss_fn(false);
            p->value[i] = saved - h;
            const S down = loss_fn(false);
            p->value[i] = saved;
            if (!std::isfinite(static_cast<double>(up)) ||
                !std::isfinite(static_cast<double>(down)))
                throw EvalError("grad_check: perturbed loss is not finite");
            const S numeric = (up - down) / (S(2) * h);
            const S analytic = p->grad[i];
            const S denom = std::max({std::abs(analytic), std::abs(numeric), S(1e-8)});
            entry.max_rel_err = std::max(entry.max_rel_err, std::abs(analytic - numeric) / denom);
        }
        entry.pass = entry.max_rel_err < tol;
        report.params.push_back(entry);
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.pass = report.pass && entry.pass;
    }
    return report;
}

} // namespace dmad
