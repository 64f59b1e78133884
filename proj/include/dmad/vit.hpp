#pragma once

#include <span>
#include <string>
#include <vector>

#include "dmad/layers.hpp"

namespace dmad {

struct ViTConfig {
    int image_size = 32;
    int patch_size = 8;
    int channels = 1;
    int dim = 64; // embedding width D_s
    int depth = 4;
    int heads = 4;
    double mlp_ratio = 2.0;
    int num_classes = 2;

    int patches_per_side() const { return image_size / patch_size; }
    int n_patches() const { return patches_per_side() * patches_per_side(); }
    int n_tokens() const { return n_patches() + 1; } // class token at index 0
    int head_dim() const { return dim / heads; }
    int mlp_hidden() const { return static_cast<int>(dim * mlp_ratio); }

    void validate() const {
        if (image_size < 1 || patch_size < 1 || image_size % patch_size != 0)
            throw ConfigError("vit: image_size must be a positive multiple of patch_size");
        if (dim < 1 || heads < 1 || dim % heads != 0)
            throw ConfigError("vit: dim must be a positive multiple of heads");
        if (depth < 1) throw ConfigError("vit: depth must be >= 1");
        if (num_classes < 2) throw ConfigError("vit: num_classes must be >= 2");
        if (mlp_ratio <= 0) throw ConfigError("vit: mlp_ratio must be > 0");
    }
};

/// Captured attention matrices (one per block) for inspection in tests.
template <class S>
using AttentionTrace = std::vector<std::vector<TensorT<S>>>; // [block][head] -> [n x n]

template <class S>
struct StudentOutputT {
    typename GraphT<S>::Var logits;    // [batch x C]
    typename GraphT<S>::Var embedding; // [batch x D_s], post-final-norm class tokens
};

template <class S>
struct ViTBlockT {
    NormParamsT<S> norm1, norm2;
    LoRALinearT<S> qkv;      // D -> 3D fused projection
    LinearT<S> attn_out;     // D -> D
    LoRALinearT<S> mlp1;     // D -> hidden
    LoRALinearT<S> mlp2;     // hidden -> D
};

/// Patch transformer student. Pre-norm blocks; low-rank adaptation targets the
/// fused QKV projection and the MLP linears; the classification head stays
/// fully trainable. Everything else is frozen once LoRA is attached.
template <class S>
class ViTT {
public:
    ViTConfig cfg;
    LoRAConfig lora;
    bool lora_attached = false;

    LinearT<S> patch_embed; // [D x c*p*p]
    ParameterT<S> cls;      // [1 x D]
    ParameterT<S> pos;      // [n_tokens x D]
    std::vector<ViTBlockT<S>> blocks;
    NormParamsT<S> final_norm;
    LinearT<S> head; // [C x D]

    static ViTT init(const ViTConfig& cfg, const LoRAConfig& lora, const RngState& rng,
                     bool attach_lora = true) {
        cfg.validate();
        lora.validate();
        ViTT m;
        m.cfg = cfg;
        m.lora = lora;
        RngState r = rng.split("student.init");
        const double sd = 0.02;
        const int d = cfg.dim;
        m.patch_embed = LinearT<S>("student.patch_embed", cfg.channels * cfg.patch_size * cfg.patch_size,
                                   d, sd, r);
        m.cls = ParameterT<S>("student.cls", trunc_normal<S>(Shape{1, d}, sd, r));
        m.pos = ParameterT<S>("student.pos", trunc_normal<S>(Shape{cfg.n_tokens(), d}, sd, r));
        m.blocks.resize(static_cast<std::size_t>(cfg.depth));
        for (int i = 0; i < cfg.depth; ++i) {
            const std::string pre = "student.block" + std::to_string(i);
            ViTBlockT<S>& blk = m.blocks[static_cast<std::size_t>(i)];
            blk.norm1 = NormParamsT<S>(pre + ".norm1", d);
            blk.norm2 = NormParamsT<S>(pre + ".norm2", d);
            blk.qkv = LoRALinearT<S>(pre + ".qkv", d, 3 * d, sd, r);
            blk.attn_out = LinearT<S>(pre + ".attn_out", d, d, sd, r);
            blk.mlp1 = LoRALinearT<S>(pre + ".mlp1", d, cfg.mlp_hidden(), sd, r);
            blk.mlp2 = LoRALinearT<S>(pre + ".mlp2", cfg.mlp_hidden(), d, sd, r);
        }
        m.final_norm = NormParamsT<S>("student.norm", d);
        m.head = LinearT<S>("student.head", d, cfg.num_classes, sd, r);
        if (attach_lora) m.attach(rng);
        return m;
    }

    /// Freeze the backbone and attach LoRA factors per the target set. The
    /// head stays trainable: the detection classes differ from any
    /// pre-training task, so it has to train.
    void attach(const RngState& rng) {
        RngState r = rng.split("student.lora");
        patch_embed.set_trainable(false);
        cls.trainable = false;
        pos.trainable = false;
        final_norm.set_trainable(false);
        for (ViTBlockT<S>& blk : blocks) {
            blk.norm1.set_trainable(false);
            blk.norm2.set_trainable(false);
            blk.attn_out.set_trainable(false);
            if (lora.target_qkv)
                blk.qkv.attach_lora(lora, r);
            else
                blk.qkv.base.set_trainable(false);
            if (lora.target_fc) {
                blk.mlp1.attach_lora(lora, r);
                blk.mlp2.attach_lora(lora, r);
            } else {
                blk.mlp1.base.set_trainable(false);
                blk.mlp2.base.set_trainable(false);
            }
        }
        head.set_trainable(true);
        lora_attached = true;
    }

    /// Tokenize one [c x H x W] image: flatten patches, project to D, prepend
    /// the class token, add positional embeddings.
    typename GraphT<S>::Var patchify(GraphT<S>& g, typename GraphT<S>::Var image) {
        const TensorT<S>& img = g.value(image);
        if (img.rank() != 3 || img.extent(0) != cfg.channels ||
            img.extent(1) != cfg.image_size || img.extent(2) != cfg.image_size)
            throw DimensionError("patchify: image " + shape_str(img.shape()) +
                                 " does not match config geometry " +
                                 shape_str({cfg.channels, cfg.image_size, cfg.image_size}));
        auto flat = g.gather(image, patch_map(), Shape{cfg.n_patches(), patch_dim()});
        auto tokens = g.add_row(g.matmul(flat, g.param(patch_embed.w), false, true),
                                g.param(patch_embed.b));
        auto with_cls = g.concat_rows(g.param(cls), tokens);
        return g.add(with_cls, g.param(pos));
    }

    /// Multi-head self-attention with pre-norm and residual. Attention scale
    /// is 1/sqrt(head_dim); per-row attention weights sum to 1.
    typename GraphT<S>::Var mhsa(GraphT<S>& g, typename GraphT<S>::Var tokens, ViTBlockT<S>& blk,
                                 bool training, RngState& rng,
                                 std::vector<TensorT<S>>* attn_trace = nullptr) {
        const int n = g.value(tokens).extent(0);
        const int d = cfg.dim;
        const int dh = cfg.head_dim();
        auto normed = blk.norm1.layer_norm(g, tokens, S(1e-5));
        auto qkv = blk.qkv.forward(g, normed, training, rng);
        std::vector<typename GraphT<S>::Var> heads;
        heads.reserve(static_cast<std::size_t>(cfg.heads));
        const S att_scale = S(1) / std::sqrt(S(dh));
        for (int h = 0; h < cfg.heads; ++h) {
            auto q = g.gather(qkv, col_slice(n, 3 * d, h * dh, dh), Shape{n, dh});
            auto k = g.gather(qkv, col_slice(n, 3 * d, d + h * dh, dh), Shape{n, dh});
            auto v = g.gather(qkv, col_slice(n, 3 * d, 2 * d + h * dh, dh), Shape{n, dh});
            auto att = g.softmax_rows(g.scale(g.matmul(q, k, false, true), att_scale));
            if (attn_trace) attn_trace->push_back(g.value(att));
            heads.push_back(g.matmul(att, v));
        }
        auto merged = cfg.heads == 1 ? heads[0] : g.concat_cols(heads);
        auto projected = blk.attn_out.forward(g, merged);
        return g.add(tokens, projected);
    }

    /// Full forward over a batch of images (one tokens subgraph per sample).
    StudentOutputT<S> forward(GraphT<S>& g, std::span<const TensorT<S>> images, bool training,
                              RngState& rng, AttentionTrace<S>* trace = nullptr) {
        std::vector<typename GraphT<S>::Var> emb_rows;
        emb_rows.reserve(images.size());
        for (const TensorT<S>& img : images) {
            auto tokens = patchify(g, g.input(img));
            for (ViTBlockT<S>& blk : blocks) {
                std::vector<TensorT<S>>* blk_trace = nullptr;
                if (trace) {
                    trace->emplace_back();
                    blk_trace = &trace->back();
                }
                tokens = mhsa(g, tokens, blk, training, rng, blk_trace);
                auto normed = blk.norm2.layer_norm(g, tokens, S(1e-5));
                auto h = blk.mlp1.forward(g, normed, training, rng);
                h = g.gelu(h);
                h = blk.mlp2.forward(g, h, training, rng);
                tokens = g.add(tokens, h);
            }
            auto normed = final_norm.layer_norm(g, tokens, S(1e-5));
            emb_rows.push_back(g.gather(normed, col_slice(1, cfg.dim, 0, cfg.dim), Shape{cfg.dim}));
        }
        StudentOutputT<S> out;
        out.embedding = g.stack_rows(emb_rows);
        out.logits = head.forward(g, out.embedding);
        return out;
    }

    NamedParams<S> named_parameters() {
        NamedParams<S> out;
        patch_embed.collect(out);
        out.emplace_back(cls.name, &cls);
        out.emplace_back(pos.name, &pos);
        for (ViTBlockT<S>& blk : blocks) {
            blk.norm1.collect(out);
            blk.qkv.collect(out);
            blk.attn_out.collect(out);
            blk.norm2.collect(out);
            blk.mlp1.collect(out);
            blk.mlp2.collect(out);
        }
        final_norm.collect(out);
        head.collect(out);
        return out;
    }

    std::vector<ParameterT<S>*> parameters() {
        std::vector<ParameterT<S>*> out;
        for (auto& [name, p] : named_parameters()) out.push_back(p);
        return out;
    }

    /// Merge every LoRA layer into its base, producing a plain (LoRA-free)
    /// model whose eval forward matches the adapted one within float error.
    ViTT merged() const {
        ViTT m = *this;
        for (ViTBlockT<S>& blk : m.blocks) {
            if (blk.qkv.has_lora) {
                LinearT<S> plain = blk.qkv.merge();
                blk.qkv.base = plain;
                blk.qkv.has_lora = false;
                blk.qkv.lora_a = ParameterT<S>();
                blk.qkv.lora_b = ParameterT<S>();
            }
            for (LoRALinearT<S>* l : {&blk.mlp1, &blk.mlp2}) {
                if (!l->has_lora) continue;
                LinearT<S> plain = l->merge();
                l->base = plain;
                l->has_lora = false;
                l->lora_a = ParameterT<S>();
                l->lora_b = ParameterT<S>();
            }
        }
        m.lora_attached = false;
        return m;
    }

private:
    int patch_dim() const { return cfg.channels * cfg.patch_size * cfg.patch_size; }

    /// Flat index map turning [c x H x W] into patch-major rows
    /// [(py,px) x (c,ky,kx)].
    std::vector<int> patch_map() const {
        const int p = cfg.patch_size;
        const int side = cfg.patches_per_side();
        std::vector<int> map;
        map.reserve(static_cast<std::size_t>(cfg.n_patches() * patch_dim()));
        for (int py = 0; py < side; ++py)
            for (int px = 0; px < side; ++px)
                for (int c = 0; c < cfg.channels; ++c)
                    for (int ky = 0; ky < p; ++ky)
                        for (int kx = 0; kx < p; ++kx)
                            map.push_back((c * cfg.image_size + py * p + ky) * cfg.image_size +
                                          px * p + kx);
        return map;
    }

    static std::vector<int> col_slice(int rows, int width, int from, int count) {
        std::vector<int> map;
        map.reserve(static_cast<std::size_t>(rows) * count);
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < count; ++j) map.push_back(r * width + from + j);
        return map;
    }
};

using ViT = ViTT<float>;

/// (trainable, total) scalar counts over a parameter list.
template <class S>
std::pair<long long, long long> trainable_param_count(const NamedParams<S>& params) {
    long long trainable = 0, total = 0;
    for (const auto& [name, p] : params) {
        total += static_cast<long long>(p->value.size());
        if (p->trainable) trainable += static_cast<long long>(p->value.size());
    }
    return {trainable, total};
}

} // namespace dmad
