#pragma once

#include <span>
#include <string>
#include <vector>

#include "dmad/layers.hpp"

namespace dmad {

struct TeacherConfig {
    std::vector<int> channels{16, 32, 64}; // width per stage; D_t = channels.back()
    std::vector<int> blocks{1, 1, 1};      // residual blocks per stage
    int num_classes = 2;
    int in_channels = 1;

    int embed_dim() const { return channels.back(); }

    void validate() const {
        if (channels.size() != blocks.size() || channels.size() < 2)
            throw ConfigError("teacher: channels and blocks must have equal length >= 2");
        for (int c : channels)
            if (c < 1) throw ConfigError("teacher: stage widths must be >= 1");
        for (int b : blocks)
            if (b < 1) throw ConfigError("teacher: blocks per stage must be >= 1");
        if (num_classes < 2) throw ConfigError("teacher: num_classes must be >= 2");
        if (in_channels < 1) throw ConfigError("teacher: in_channels must be >= 1");
    }
};

template <class S>
struct ConvLayerT {
    ParameterT<S> w; // [c_out x c_in x 3 x 3]
    ParameterT<S> b; // [c_out]
    int stride = 1;

    ConvLayerT() = default;
    ConvLayerT(const std::string& name, int c_in, int c_out, int stride_, RngState& rng)
        : w(name + ".w",
            normal_init<S>(Shape{c_out, c_in, 3, 3}, std::sqrt(2.0 / (9.0 * c_in)), rng)),
          b(name + ".b", TensorT<S>(Shape{c_out})),
          stride(stride_) {}

    typename GraphT<S>::Var forward(GraphT<S>& g, typename GraphT<S>::Var x) {
        return g.add_chan(g.conv2d(x, g.param(w), stride, 1), g.param(b));
    }

    void collect(NamedParams<S>& out) {
        out.emplace_back(w.name, &w);
        out.emplace_back(b.name, &b);
    }
};

template <class S>
struct TeacherBlockT {
    ConvLayerT<S> conv1, conv2;
    NormParamsT<S> norm1, norm2;
};

template <class S>
struct TeacherOutputT {
    typename GraphT<S>::Var logits;    // [batch x C]
    typename GraphT<S>::Var embedding; // [batch x D_t], post-pooling, pre-classifier
};

/// Compact residual conv net standing in for a fine-tuned large CNN: stem,
/// stages of (conv3x3 -> channel norm -> GELU -> conv3x3 -> channel norm,
/// + residual), stride-2 downsample between stages, global average pool,
/// linear head. No dropout path, so eval and train forwards coincide.
template <class S>
class TeacherT {
public:
    TeacherConfig cfg;
    ConvLayerT<S> stem;
    std::vector<std::vector<TeacherBlockT<S>>> stages;
    std::vector<ConvLayerT<S>> downsamples;
    LinearT<S> head;

    static TeacherT init(const TeacherConfig& cfg, const RngState& rng) {
        cfg.validate();
        TeacherT m;
        m.cfg = cfg;
        RngState r = rng.split("teacher.init");
        m.stem = ConvLayerT<S>("teacher.stem", cfg.in_channels, cfg.channels[0], 1, r);
        const int n_stages = static_cast<int>(cfg.channels.size());
        m.stages.resize(static_cast<std::size_t>(n_stages));
        for (int s = 0; s < n_stages; ++s) {
            for (int b = 0; b < cfg.blocks[static_cast<std::size_t>(s)]; ++b) {
                const std::string pre =
                    "teacher.stage" + std::to_string(s) + ".block" + std::to_string(b);
                TeacherBlockT<S> blk;
                const int c = cfg.channels[static_cast<std::size_t>(s)];
                blk.conv1 = ConvLayerT<S>(pre + ".conv1", c, c, 1, r);
                blk.conv2 = ConvLayerT<S>(pre + ".conv2", c, c, 1, r);
                blk.norm1 = NormParamsT<S>(pre + ".norm1", c);
                blk.norm2 = NormParamsT<S>(pre + ".norm2", c);
                m.stages[static_cast<std::size_t>(s)].push_back(std::move(blk));
            }
            if (s + 1 < n_stages)
                m.downsamples.emplace_back("teacher.down" + std::to_string(s),
                                           cfg.channels[static_cast<std::size_t>(s)],
                                           cfg.channels[static_cast<std::size_t>(s + 1)], 2, r);
        }
        m.head = LinearT<S>("teacher.head", cfg.embed_dim(), cfg.num_classes, 0.02, r);
        return m;
    }

    TeacherOutputT<S> forward(GraphT<S>& g, std::span<const TensorT<S>> images,
                              [[maybe_unused]] bool training, RngState&) {
        std::vector<typename GraphT<S>::Var> emb_rows;
        emb_rows.reserve(images.size());
        for (const TensorT<S>& img : images) {
            if (img.rank() != 3 || img.extent(0) != cfg.in_channels)
                throw DimensionError("teacher: image " + shape_str(img.shape()) +
                                     " does not match configured channels");
            auto x = stem.forward(g, g.input(img));
            for (std::size_t s = 0; s < stages.size(); ++s) {
                for (TeacherBlockT<S>& blk : stages[s]) {
                    auto h = blk.conv1.forward(g, x);
                    h = blk.norm1.channel_norm(g, h, S(1e-5));
                    h = g.gelu(h);
                    h = blk.conv2.forward(g, h);
                    h = blk.norm2.channel_norm(g, h, S(1e-5));
                    x = g.add(x, h); // widths match inside a stage
                }
                if (s < downsamples.size()) x = downsamples[s].forward(g, x);
            }
            emb_rows.push_back(g.mean_spatial(x));
        }
        TeacherOutputT<S> out;
        out.embedding = g.stack_rows(emb_rows);
        out.logits = head.forward(g, out.embedding);
        return out;
    }

    /// Mark every parameter non-trainable. Idempotent; subsequent training
    /// steps leave all teacher tensors bit-identical.
    void freeze() {
        for (ParameterT<S>* p : parameters()) p->trainable = false;
    }

    bool frozen() const {
        for (const ParameterT<S>* p : const_cast<TeacherT*>(this)->parameters())
            if (p->trainable) return false;
        return true;
    }

    NamedParams<S> named_parameters() {
        NamedParams<S> out;
        stem.collect(out);
        for (auto& stage : stages)
            for (TeacherBlockT<S>& blk : stage) {
                blk.conv1.collect(out);
                blk.norm1.collect(out);
                blk.conv2.collect(out);
                blk.norm2.collect(out);
            }
        for (auto& d : downsamples) d.collect(out);
        head.collect(out);
        return out;
    }

    std::vector<ParameterT<S>*> parameters() {
        std::vector<ParameterT<S>*> out;
        for (auto& [name, p] : named_parameters()) out.push_back(p);
        return out;
    }
};

using Teacher = TeacherT<float>;

} // namespace dmad
