#pragma once

#include <cmath>
#include <string>

#include "dmad/graph.hpp"
#include "dmad/nn.hpp"

namespace dmad {

/// Plain affine layer, weight stored [out x in].
template <class S>
struct LinearT {
    ParameterT<S> w;
    ParameterT<S> b;

    LinearT() = default;
    LinearT(std::string name, int in_dim, int out_dim, double std_dev, RngState& rng,
            bool trainable = true)
        : w(name + ".w", trunc_normal<S>(Shape{out_dim, in_dim}, std_dev, rng), trainable),
          b(name + ".b", TensorT<S>(Shape{out_dim}), trainable) {}

    int in_dim() const { return w.value.extent(1); }
    int out_dim() const { return w.value.extent(0); }

    typename GraphT<S>::Var forward(GraphT<S>& g, typename GraphT<S>::Var x) {
        return g.add_row(g.matmul(x, g.param(w), false, true), g.param(b));
    }

    void set_trainable(bool t) {
        w.trainable = t;
        b.trainable = t;
    }

    void collect(NamedParams<S>& out) {
        out.emplace_back(w.name, &w);
        out.emplace_back(b.name, &b);
    }
};

struct LoRAConfig {
    int rank = 8;
    double alpha = 16.0;
    double dropout = 0.1;
    bool target_qkv = true;
    bool target_fc = true;

    double scale() const { return alpha / rank; }

    void validate() const {
        if (rank < 1) throw ConfigError("lora rank must be >= 1");
        if (!(alpha > 0) || !std::isfinite(alpha / rank))
            throw ConfigError("lora scale alpha/rank must be finite and positive");
        if (!(dropout >= 0.0 && dropout < 1.0))
            throw ConfigError("lora dropout must lie in [0, 1)");
    }
};

/// Frozen base linear plus trainable low-rank factors:
///   y = W x + b + scale * B (A drop(x)),  scale = alpha / rank.
/// Dropout hits only the low-rank path and only in training mode. With B = 0
/// (the initial state) the layer is bit-identical to its base.
template <class S>
struct LoRALinearT {
    LinearT<S> base;
    ParameterT<S> lora_a; // [r x in]
    ParameterT<S> lora_b; // [out x r]
    S scale = 0;
    S dropout_rate = 0;
    bool has_lora = false;

    LoRALinearT() = default;
    LoRALinearT(std::string name, int in_dim, int out_dim, double std_dev, RngState& rng)
        : base(std::move(name), in_dim, out_dim, std_dev, rng, true) {}

    /// Freeze the base and attach zero-initialized low-rank factors.
    /// A ~ N(0, 1/r), B = 0, so attaching never changes the forward pass.
    void attach_lora(const LoRAConfig& cfg, RngState& rng) {
        const int in_dim = base.in_dim();
        const int out_dim = base.out_dim();
        if (cfg.rank > std::min(in_dim, out_dim))
            throw ConfigError("lora rank " + std::to_string(cfg.rank) +
                              " exceeds min(fan_in, fan_out) of layer " + base.w.name);
        base.set_trainable(false);
        lora_a = ParameterT<S>(layer_name() + ".lora.A",
                               normal_init<S>(Shape{cfg.rank, in_dim},
                                              1.0 / std::sqrt(static_cast<double>(cfg.rank)), rng),
                               true);
        lora_b = ParameterT<S>(layer_name() + ".lora.B",
                               TensorT<S>(Shape{out_dim, cfg.rank}), true);
        scale = static_cast<S>(cfg.scale());
        dropout_rate = static_cast<S>(cfg.dropout);
        has_lora = true;
    }

    std::string layer_name() const {
        // strip the trailing ".w" of the base weight name
        return base.w.name.substr(0, base.w.name.size() - 2);
    }

    typename GraphT<S>::Var forward(GraphT<S>& g, typename GraphT<S>::Var x, bool training,
                                    RngState& rng) {
        auto y = base.forward(g, x);
        if (!has_lora) return y;
        auto xin = x;
        if (training && dropout_rate > S(0)) {
            auto mask = g.input(dropout_mask<S>(g.value(x).shape(), dropout_rate, rng));
            xin = g.mul(x, mask);
        }
        auto low = g.matmul(g.matmul(xin, g.param(lora_a), false, true), g.param(lora_b), false, true);
        return g.add(y, g.scale(low, scale));
    }

    /// Collapse into a plain layer with weight W + scale * B A. Merging the
    /// result again is the identity: no factors remain.
    LinearT<S> merge() const {
        LinearT<S> out;
        out.w = base.w;
        out.b = base.b;
        if (has_lora) {
            TensorT<S> delta = matmul(lora_b.value, lora_a.value);
            for (std::size_t i = 0; i < out.w.value.size(); ++i)
                out.w.value[i] += scale * delta[i];
        }
        return out;
    }

    void collect(NamedParams<S>& out) {
        base.collect(out);
        if (has_lora) {
            out.emplace_back(lora_a.name, &lora_a);
            out.emplace_back(lora_b.name, &lora_b);
        }
    }
};

/// Gain/bias for layer_norm / channel_norm.
template <class S>
struct NormParamsT {
    ParameterT<S> gain;
    ParameterT<S> bias;

    NormParamsT() = default;
    NormParamsT(const std::string& name, int width, bool trainable = true)
        : gain(name + ".gain", TensorT<S>::full(Shape{width}, S(1)), trainable),
          bias(name + ".bias", TensorT<S>(Shape{width}), trainable) {}

    typename GraphT<S>::Var layer_norm(GraphT<S>& g, typename GraphT<S>::Var x, S eps) {
        return g.layer_norm(x, g.param(gain), g.param(bias), eps);
    }

    typename GraphT<S>::Var channel_norm(GraphT<S>& g, typename GraphT<S>::Var x, S eps) {
        return g.channel_norm(x, g.param(gain), g.param(bias), eps);
    }

    void set_trainable(bool t) {
        gain.trainable = t;
        bias.trainable = t;
    }

    void collect(NamedParams<S>& out) {
        out.emplace_back(gain.name, &gain);
        out.emplace_back(bias.name, &bias);
    }
};

} // namespace dmad
