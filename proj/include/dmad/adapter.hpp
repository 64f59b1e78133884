#pragma once

#include <string>

#include "dmad/layers.hpp"

namespace dmad {

struct AdapterConfig {
    int d_in = 64;     // teacher embedding width D_t
    int d_out = 64;    // student embedding width D_s
    int hidden = 0;    // 0 -> defaults to 2 * d_out
    double dropout = 0.1;

    int hidden_dim() const { return hidden > 0 ? hidden : 2 * d_out; }

    void validate() const {
        if (d_in < 1 || d_out < 1 || hidden_dim() < 1)
            throw ConfigError("adapter: widths must be >= 1");
        if (!(dropout >= 0.0 && dropout < 1.0))
            throw ConfigError("adapter: dropout must lie in [0, 1)");
    }
};

/// Maps teacher embeddings into the student's embedding space before the KL
/// term:
///   p = proj(x)                      [d_in -> d_out]
///   h = fc2(drop(gelu(norm(fc1(p))))) [d_out -> hidden -> d_out]
///   out = p + h
/// The residual is taken from the projected input: with d_in != d_out the raw
/// input would not typecheck. fc2 starts at zero, so a fresh adapter is
/// exactly the projection. Trains jointly with the student; every parameter
/// here is trainable and excluded from the teacher freeze set.
template <class S>
class AdapterT {
public:
    AdapterConfig cfg;
    LinearT<S> proj; // d_in -> d_out
    LinearT<S> fc1;  // d_out -> hidden
    NormParamsT<S> norm; // width hidden
    LinearT<S> fc2;  // hidden -> d_out, zero-initialized

    static AdapterT init(const AdapterConfig& cfg, const RngState& rng) {
        cfg.validate();
        AdapterT a;
        a.cfg = cfg;
        RngState r = rng.split("adapter.init");
        const int hidden = cfg.hidden_dim();
        a.proj = LinearT<S>("adapter.proj", cfg.d_in, cfg.d_out,
                            1.0 / std::sqrt(static_cast<double>(cfg.d_in)), r);
        a.fc1 = LinearT<S>("adapter.fc1", cfg.d_out, hidden,
                           1.0 / std::sqrt(static_cast<double>(cfg.d_out)), r);
        a.norm = NormParamsT<S>("adapter.norm", hidden);
        a.fc2 = LinearT<S>("adapter.fc2", hidden, cfg.d_out, 0.0, r);
        a.fc2.w.value.fill(S(0));
        return a;
    }

    typename GraphT<S>::Var forward(GraphT<S>& g, typename GraphT<S>::Var teacher_emb,
                                    bool training, RngState& rng) {
        const TensorT<S>& in = g.value(teacher_emb);
        if (in.last_extent() != cfg.d_in)
            throw DimensionError("adapter: input width " + shape_str(in.shape()) +
                                 " does not match d_in=" + std::to_string(cfg.d_in));
        auto p = proj.forward(g, teacher_emb);
        auto z = fc1.forward(g, p);
        z = norm.layer_norm(g, z, S(1e-5));
        z = g.gelu(z);
        if (training && cfg.dropout > 0.0) {
            auto mask = g.input(dropout_mask<S>(g.value(z).shape(), S(cfg.dropout), rng));
            z = g.mul(z, mask);
        }
        auto h = fc2.forward(g, z);
        return g.add(p, h);
    }

    NamedParams<S> named_parameters() {
        NamedParams<S> out;
        proj.collect(out);
        fc1.collect(out);
        norm.collect(out);
        fc2.collect(out);
        return out;
    }

    /// All adapter parameters, all trainable.
    std::vector<ParameterT<S>*> trainables() {
        std::vector<ParameterT<S>*> out;
        for (auto& [name, p] : named_parameters()) out.push_back(p);
        return out;
    }
};

using Adapter = AdapterT<float>;

} // namespace dmad
