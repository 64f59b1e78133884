#include <doctest.h>

#include <cmath>

#include "dmad/grad_check.hpp"
#include "dmad/vit.hpp"

using namespace dmad;

namespace {

template <class S>
TensorT<S> random_image(const ViTConfig& cfg, RngState& rng) {
    TensorT<S> img(Shape{cfg.channels, cfg.image_size, cfg.image_size});
    for (std::size_t i = 0; i < img.size(); ++i)
        img[i] = static_cast<S>(rng.next_double());
    return img;
}

ViTConfig micro_cfg() {
    ViTConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.dim = 8;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.mlp_ratio = 2.0;
    return cfg;
}

} // namespace

TEST_CASE("config invariants and token arithmetic") {
    ViTConfig cfg;
    cfg.image_size = 32;
    cfg.patch_size = 8;
    CHECK(cfg.n_tokens() == 17); // 16 patches + class token

    ViTConfig paper;
    paper.image_size = 224;
    paper.patch_size = 16;
    CHECK(paper.n_tokens() == 197);

    ViTConfig bad = cfg;
    bad.patch_size = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.heads = 3;
    bad.dim = 64;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.num_classes = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("patchify: zero image with zero projection leaves positional rows") {
    ViTConfig cfg = micro_cfg();
    auto vit = ViTT<float>::init(cfg, LoRAConfig{}, RngState(5), false);
    vit.patch_embed.w.value.fill(0);
    vit.patch_embed.b.value.fill(0);
    vit.cls.value.fill(0);
    Graph g;
    Tensor zero(Shape{1, cfg.image_size, cfg.image_size});
    auto tokens = vit.patchify(g, g.input(zero));
    const Tensor& out = g.value(tokens);
    REQUIRE(out.shape() == Shape{cfg.n_tokens(), cfg.dim});
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == vit.pos.value[i]);

    Tensor wrong(Shape{1, 16, 16});
    CHECK_THROWS_AS(vit.patchify(g, g.input(wrong)), DimensionError);
}

TEST_CASE("lora_forward: zero-init identity, scale, dense reconstruction") {
    RngState rng(11);
    LoRAConfig lcfg;
    lcfg.rank = 8;
    lcfg.alpha = 16.0;
    lcfg.dropout = 0.0;
    CHECK(lcfg.scale() == doctest::Approx(2.0));

    LoRALinearT<float> layer("layer", 16, 12, 0.2, rng);
    const Tensor w_before = layer.base.w.value;
    layer.attach_lora(lcfg, rng);
    CHECK(layer.base.w.trainable == false);
    CHECK(layer.lora_a.trainable);
    CHECK(layer.lora_b.trainable);

    Tensor x(Shape{5, 16});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.next_normal());

    // B == 0: bit-identical to the base layer
    {
        Graph g;
        RngState r2(0);
        auto with = layer.forward(g, g.input(x), false, r2);
        LinearT<float> base;
        base.w = ParameterT<float>("w", w_before, false);
        base.b = layer.base.b;
        auto plain = base.forward(g, g.input(x));
        const Tensor& yw = g.value(with);
        const Tensor& yp = g.value(plain);
        for (std::size_t i = 0; i < yw.size(); ++i) CHECK(yw[i] == yp[i]);
    }

    // random factors: eval forward equals the dense (W + scale B A) map
    for (std::size_t i = 0; i < layer.lora_b.value.size(); ++i)
        layer.lora_b.value[i] = static_cast<float>(rng.next_normal() * 0.3);
    {
        Graph g;
        RngState r2(0);
        auto y = layer.forward(g, g.input(x), false, r2);
        Tensor dense = layer.base.w.value;
        const Tensor delta = matmul(layer.lora_b.value, layer.lora_a.value);
        for (std::size_t i = 0; i < dense.size(); ++i) dense[i] += layer.scale * delta[i];
        Tensor expect = matmul_ex(x, dense, false, true);
        for (int r = 0; r < 5; ++r)
            for (int c = 0; c < 12; ++c) expect.at(r, c) += layer.base.b.value[static_cast<std::size_t>(c)];
        const Tensor& got = g.value(y);
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(std::abs(got[i] - expect[i]) < 1e-5f);
    }

    // merge: equals lora forward on 100 random inputs; merging twice changes nothing
    const LinearT<float> merged = layer.merge();
    RngState probe(123);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor xi(Shape{1, 16});
        for (std::size_t i = 0; i < xi.size(); ++i) xi[i] = static_cast<float>(probe.next_normal());
        Graph g;
        RngState r2(0);
        auto adapted = layer.forward(g, g.input(xi), false, r2);
        LinearT<float> m2 = merged;
        auto plain = m2.forward(g, g.input(xi));
        const Tensor& ya = g.value(adapted);
        const Tensor& yp = g.value(plain);
        for (std::size_t i = 0; i < ya.size(); ++i) CHECK(std::abs(ya[i] - yp[i]) < 1e-5f);
    }

    // rank bound
    LoRALinearT<float> narrow("narrow", 4, 64, 0.2, rng);
    LoRAConfig too_big;
    too_big.rank = 8;
    CHECK_THROWS_AS(narrow.attach_lora(too_big, rng), ConfigError);
}

TEST_CASE("lora merge with B=0 returns W exactly") {
    RngState rng(3);
    LoRALinearT<float> layer("l", 6, 6, 0.1, rng);
    LoRAConfig lcfg;
    lcfg.rank = 2;
    lcfg.dropout = 0.0;
    const Tensor w0 = layer.base.w.value;
    layer.attach_lora(lcfg, rng);
    const LinearT<float> merged = layer.merge();
    for (std::size_t i = 0; i < w0.size(); ++i) CHECK(merged.w.value[i] == w0[i]);
}

TEST_CASE("mhsa: singleton softmax, uniform attention, per-head loop oracle") {
    using S = double;
    ViTConfig cfg = micro_cfg();
    auto vit = ViTT<S>::init(cfg, LoRAConfig{}, RngState(21), false);
    RngState none(0);

    // one token: attention matrix is [[1]]
    {
        Graph64 g;
        TensorT<S> tok(Shape{1, cfg.dim});
        for (std::size_t i = 0; i < tok.size(); ++i) tok[i] = 0.3 * static_cast<double>(i);
        std::vector<TensorT<S>> trace;
        vit.mhsa(g, g.input(tok), vit.blocks[0], false, none, &trace);
        REQUIRE(trace.size() == static_cast<std::size_t>(cfg.heads));
        for (const auto& att : trace) {
            REQUIRE(att.shape() == Shape{1, 1});
            CHECK(att[0] == doctest::Approx(1.0));
        }
    }

    // zero Q and K weight rows -> uniform attention over n tokens
    {
        auto uniform_vit = ViTT<S>::init(cfg, LoRAConfig{}, RngState(22), false);
        auto& qkv = uniform_vit.blocks[0].qkv.base;
        for (int row = 0; row < 2 * cfg.dim; ++row)
            for (int colp = 0; colp < cfg.dim; ++colp) qkv.w.value.at(row, colp) = 0;
        for (int row = 0; row < 2 * cfg.dim; ++row) qkv.b.value[static_cast<std::size_t>(row)] = 0;
        Graph64 g;
        const int n = 5;
        TensorT<S> toks(Shape{n, cfg.dim});
        RngState r(9);
        for (std::size_t i = 0; i < toks.size(); ++i) toks[i] = r.next_normal();
        std::vector<TensorT<S>> trace;
        uniform_vit.mhsa(g, g.input(toks), uniform_vit.blocks[0], false, none, &trace);
        for (const auto& att : trace)
            for (std::size_t i = 0; i < att.size(); ++i)
                CHECK(att[i] == doctest::Approx(1.0 / n).epsilon(1e-9));
    }

    // 3 tokens vs a literal per-head reference
    {
        Graph64 g;
        const int n = 3, d = cfg.dim, dh = cfg.head_dim();
        TensorT<S> toks(Shape{n, d});
        RngState r(10);
        for (std::size_t i = 0; i < toks.size(); ++i) toks[i] = r.next_normal();
        std::vector<TensorT<S>> trace;
        auto out = vit.mhsa(g, g.input(toks), vit.blocks[0], false, none, &trace);

        // reference: norm -> qkv -> per-head attention -> concat -> proj -> residual
        auto& blk = vit.blocks[0];
        const TensorT<S> normed =
            layer_norm(toks, blk.norm1.gain.value, blk.norm1.bias.value, S(1e-5));
        TensorT<S> qkv = matmul_ex(normed, blk.qkv.base.w.value, false, true);
        for (int row = 0; row < n; ++row)
            for (int c = 0; c < 3 * d; ++c) qkv.at(row, c) += blk.qkv.base.b.value[static_cast<std::size_t>(c)];
        TensorT<S> concat(Shape{n, d});
        for (int h = 0; h < cfg.heads; ++h) {
            TensorT<S> scores(Shape{n, n});
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    S dot = 0;
                    for (int k = 0; k < dh; ++k)
                        dot += qkv.at(i, h * dh + k) * qkv.at(j, d + h * dh + k);
                    scores.at(i, j) = dot / std::sqrt(static_cast<S>(dh));
                }
            const TensorT<S> att = softmax_rows(scores);
            for (std::size_t i = 0; i < att.size(); ++i)
                CHECK(std::abs(att[i] - trace[static_cast<std::size_t>(h)][i]) < 1e-9);
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < dh; ++k) {
                    S acc = 0;
                    for (int j = 0; j < n; ++j)
                        acc += att.at(i, j) * qkv.at(j, 2 * d + h * dh + k);
                    concat.at(i, h * dh + k) = acc;
                }
        }
        TensorT<S> proj = matmul_ex(concat, blk.attn_out.w.value, false, true);
        for (int row = 0; row < n; ++row)
            for (int c = 0; c < d; ++c)
                proj.at(row, c) += blk.attn_out.b.value[static_cast<std::size_t>(c)] + toks.at(row, c);
        const TensorT<S>& got = g.value(out);
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - proj[i]) < 1e-5);
    }
}

TEST_CASE("vit_forward shapes, batch independence, sensitivity, attention rows") {
    ViTConfig cfg = micro_cfg();
    auto vit = ViT::init(cfg, LoRAConfig{.rank = 2, .alpha = 4.0, .dropout = 0.0}, RngState(33));
    RngState rng(7), none(0);
    const Tensor img = random_image<float>(cfg, rng);
    std::vector<Tensor> batch{img, random_image<float>(cfg, rng), img};

    Graph g;
    AttentionTrace<float> trace;
    auto out = vit.forward(g, batch, false, none, &trace);
    const Tensor& logits = g.value(out.logits);
    const Tensor& emb = g.value(out.embedding);
    REQUIRE(logits.shape() == Shape{3, 2});
    REQUIRE(emb.shape() == Shape{3, cfg.dim});
    CHECK(logits.all_finite());
    CHECK(emb.all_finite());

    // duplicated input rows produce identical outputs (eval mode)
    for (int c = 0; c < 2; ++c) CHECK(logits.at(0, c) == logits.at(2, c));
    for (int c = 0; c < cfg.dim; ++c) CHECK(emb.at(0, c) == emb.at(2, c));

    // attention rows sum to 1
    for (const auto& block_trace : trace)
        for (const auto& att : block_trace)
            for (int r = 0; r < att.extent(0); ++r) {
                float sum = 0;
                for (int c = 0; c < att.extent(1); ++c) sum += att.at(r, c);
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
            }

    // single-pixel perturbation moves the logits (random init, eval mode)
    Tensor poked = img;
    poked[poked.size() / 2] = std::min(1.0f, poked[poked.size() / 2] + 0.5f);
    Graph g2;
    auto out2 = vit.forward(g2, std::vector<Tensor>{poked}, false, none);
    float diff = 0;
    for (int c = 0; c < 2; ++c) diff += std::abs(g2.value(out2.logits).at(0, c) - logits.at(0, c));
    CHECK(diff > 0.0f);

    // permuting the batch permutes outputs identically
    std::vector<Tensor> swapped{batch[1], batch[0], batch[2]};
    Graph g3;
    auto out3 = vit.forward(g3, swapped, false, none);
    const Tensor& l3 = g3.value(out3.logits);
    for (int c = 0; c < 2; ++c) {
        CHECK(l3.at(0, c) == logits.at(1, c));
        CHECK(l3.at(1, c) == logits.at(0, c));
    }
}

TEST_CASE("zero-init neutrality: LoRA attach does not move the eval forward") {
    ViTConfig cfg = micro_cfg();
    const RngState seed(77);
    auto plain = ViTT<float>::init(cfg, LoRAConfig{}, seed, false);
    auto adapted = ViTT<float>::init(cfg, LoRAConfig{.rank = 4, .alpha = 8.0, .dropout = 0.1}, seed, true);
    RngState rng(3), none(0);
    std::vector<Tensor> batch{random_image<float>(cfg, rng)};
    Graph g1, g2;
    auto o1 = plain.forward(g1, batch, false, none);
    auto o2 = adapted.forward(g2, batch, false, none);
    const Tensor& a = g1.value(o1.logits);
    const Tensor& b = g2.value(o2.logits);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    const Tensor& ea = g1.value(o1.embedding);
    const Tensor& eb = g2.value(o2.embedding);
    for (std::size_t i = 0; i < ea.size(); ++i) CHECK(ea[i] == eb[i]);
}

TEST_CASE("trainable_param_count formula and ratio bound") {
    // single LoRA layer: r (d_in + d_out) from the factors
    {
        RngState rng(1);
        LoRALinearT<float> layer("l", 64, 64, 0.02, rng);
        LoRAConfig lcfg;
        lcfg.rank = 8;
        layer.attach_lora(lcfg, rng);
        NamedParams<float> params;
        layer.collect(params);
        const auto [trainable, total] = trainable_param_count(params);
        CHECK(trainable == 8 * (64 + 64));
        CHECK(total == 64 * 64 + 64 + trainable);
    }

    // desk configuration: a small trainable fraction
    ViTConfig desk;
    desk.image_size = 32;
    desk.patch_size = 8;
    desk.dim = 64;
    desk.depth = 4;
    desk.heads = 4;
    desk.mlp_ratio = 2.0;
    auto vit = ViT::init(desk, LoRAConfig{}, RngState(5));
    auto params = vit.named_parameters();
    const auto [trainable, total] = trainable_param_count(params);
    // formula: per block qkv r(d+3d) + mlp1 r(d+h) + mlp2 r(h+d); head fully trainable
    const long long d = 64, h = 128, r = 8;
    const long long expect = 4 * (r * (d + 3 * d) + r * (d + h) + r * (h + d)) + (2 * d + 2);
    CHECK(trainable == expect);
    CHECK(static_cast<double>(trainable) / static_cast<double>(total) < 0.15);

    // r = 1 trains strictly fewer scalars than r = 8
    auto vit1 = ViT::init(desk, LoRAConfig{.rank = 1, .alpha = 2.0, .dropout = 0.1}, RngState(5));
    auto params1 = vit1.named_parameters();
    CHECK(trainable_param_count(params1).first < trainable);
    // r = 0 is rejected
    CHECK_THROWS_AS(LoRAConfig{.rank = 0}.validate(), ConfigError);
}

TEST_CASE("student LoRA gradients pass grad_check (64-bit)") {
    using S = double;
    ViTConfig cfg = micro_cfg();
    cfg.image_size = 4;
    cfg.patch_size = 2;
    auto vit = ViTT<S>::init(cfg, LoRAConfig{.rank = 2, .alpha = 4.0, .dropout = 0.0}, RngState(13));
    RngState rng(70), none(0);
    std::vector<TensorT<S>> batch{random_image<S>(cfg, rng), random_image<S>(cfg, rng)};
    const std::vector<int> labels{0, 1};

    std::vector<ParameterT<S>*> check_params;
    for (auto* p : vit.parameters())
        if (p->trainable) check_params.push_back(p);
    const auto loss_fn = [&](bool with_grad) {
        Graph64 g;
        auto out = vit.forward(g, batch, false, none);
        // weighted CE-like scalar touching logits and embedding
        auto probe = g.reduce_sum(g.mul(out.logits, out.logits), 0.5);
        auto probe2 = g.reduce_sum(out.embedding, 0.1);
        auto loss = g.add(probe, probe2);
        if (with_grad) g.backward(loss);
        return g.value(loss)[0];
    };
    const auto report = grad_check<S>(loss_fn, check_params, 1e-5, 1e-4);
    INFO("max rel err ", report.max_rel_err);
    CHECK(report.pass);
}
