#include <doctest.h>

#include <cmath>

#include "dmad/adapter.hpp"
#include "dmad/checkpoint.hpp"
#include "dmad/grad_check.hpp"
#include "dmad/teacher.hpp"

using namespace dmad;

namespace {

TeacherConfig micro_teacher() {
    TeacherConfig cfg;
    cfg.channels = {4, 8};
    cfg.blocks = {1, 1};
    return cfg;
}

Tensor random_image(int size, RngState& rng) {
    Tensor img(Shape{1, size, size});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(rng.next_double());
    return img;
}

} // namespace

TEST_CASE("teacher config invariants") {
    TeacherConfig bad;
    bad.channels = {16};
    bad.blocks = {1};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = micro_teacher();
    bad.blocks = {1, 1, 1};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("teacher forward shapes and zero-propagation") {
    auto teacher = Teacher::init(micro_teacher(), RngState(1));
    RngState rng(2), none(0);
    std::vector<Tensor> batch{random_image(8, rng), random_image(8, rng)};
    Graph g;
    auto out = teacher.forward(g, batch, false, none);
    REQUIRE(g.value(out.logits).shape() == Shape{2, 2});
    REQUIRE(g.value(out.embedding).shape() == Shape{2, 8}); // D_t = last stage width
    CHECK(g.value(out.logits).all_finite());

    // zero image through a zero-initialized head gives logits [0, 0]
    teacher.head.w.value.fill(0);
    teacher.head.b.value.fill(0);
    Graph g2;
    std::vector<Tensor> zeros{Tensor(Shape{1, 8, 8})};
    auto out2 = teacher.forward(g2, zeros, false, none);
    CHECK(g2.value(out2.logits).at(0, 0) == 0.0f);
    CHECK(g2.value(out2.logits).at(0, 1) == 0.0f);

    // geometry mismatch
    Graph g3;
    std::vector<Tensor> wrong{Tensor(Shape{3, 8, 8})};
    CHECK_THROWS_AS(teacher.forward(g3, wrong, false, none), DimensionError);
}

TEST_CASE("global average pooling of a constant map") {
    const Tensor constant = Tensor::full(Shape{3, 5, 5}, 0.75f);
    const Tensor pooled = mean_spatial(constant);
    REQUIRE(pooled.shape() == Shape{3});
    for (int c = 0; c < 3; ++c) CHECK(pooled[static_cast<std::size_t>(c)] == doctest::Approx(0.75));
}

TEST_CASE("teacher eval forward is deterministic and batch-equivariant") {
    auto teacher = Teacher::init(micro_teacher(), RngState(4));
    RngState rng(5), none(0);
    std::vector<Tensor> batch{random_image(8, rng), random_image(8, rng)};
    Graph g1, g2;
    auto o1 = teacher.forward(g1, batch, false, none);
    auto o2 = teacher.forward(g2, batch, false, none);
    const Tensor& a = g1.value(o1.logits);
    const Tensor& b = g2.value(o2.logits);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

    std::vector<Tensor> swapped{batch[1], batch[0]};
    Graph g3;
    auto o3 = teacher.forward(g3, swapped, false, none);
    const Tensor& c = g3.value(o3.logits);
    for (int j = 0; j < 2; ++j) {
        CHECK(c.at(0, j) == a.at(1, j));
        CHECK(c.at(1, j) == a.at(0, j));
    }
}

TEST_CASE("freeze is idempotent and kills gradients") {
    auto teacher = Teacher::init(micro_teacher(), RngState(6));
    teacher.freeze();
    CHECK(teacher.frozen());
    teacher.freeze();
    CHECK(teacher.frozen());
    const std::uint64_t before = params_hash(teacher.named_parameters());

    RngState rng(7), none(0);
    std::vector<Tensor> batch{random_image(8, rng)};
    Graph g;
    auto out = teacher.forward(g, batch, false, none);
    auto loss = g.reduce_sum(g.mul(out.logits, out.logits), 1.0f);
    g.backward(loss);
    for (Parameter* p : teacher.parameters())
        for (std::size_t i = 0; i < p->grad.size(); ++i) CHECK(p->grad[i] == 0.0f);
    CHECK(params_hash(teacher.named_parameters()) == before);
}

TEST_CASE("adapter: zero residual branch at init, identity case, stage oracle") {
    AdapterConfig cfg;
    cfg.d_in = 6;
    cfg.d_out = 10;
    cfg.hidden = 0; // default 2 * d_out
    cfg.dropout = 0.1;
    CHECK(cfg.hidden_dim() == 20);
    auto adapter = AdapterT<float>::init(cfg, RngState(8));
    RngState rng(9), none(0);
    Tensor emb(Shape{3, 6});
    for (std::size_t i = 0; i < emb.size(); ++i) emb[i] = static_cast<float>(rng.next_normal());

    // fc2 zero-initialized: output == proj(input) exactly (eval mode)
    {
        Graph g;
        auto out = adapter.forward(g, g.input(emb), false, none);
        auto proj_only = adapter.proj.forward(g, g.input(emb));
        const Tensor& a = g.value(out);
        const Tensor& b = g.value(proj_only);
        REQUIRE(a.shape() == Shape{3, 10});
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }

    // d_in == d_out with identity projection and zero inner branch: output == input
    {
        AdapterConfig icfg;
        icfg.d_in = icfg.d_out = 5;
        icfg.hidden = 7;
        auto ident = AdapterT<float>::init(icfg, RngState(10));
        ident.proj.w.value.fill(0);
        for (int i = 0; i < 5; ++i) ident.proj.w.value.at(i, i) = 1.0f;
        ident.proj.b.value.fill(0);
        Graph g;
        Tensor x(Shape{2, 5});
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.next_normal());
        auto out = ident.forward(g, g.input(x), false, none);
        const Tensor& y = g.value(out);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
    }

    // random weights vs a hand-composed reference of the five stages
    {
        for (std::size_t i = 0; i < adapter.fc2.w.value.size(); ++i)
            adapter.fc2.w.value[i] = static_cast<float>(rng.next_normal() * 0.2);
        Graph g;
        auto out = adapter.forward(g, g.input(emb), false, none);
        Tensor p = matmul_ex(emb, adapter.proj.w.value, false, true);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 10; ++c) p.at(r, c) += adapter.proj.b.value[static_cast<std::size_t>(c)];
        Tensor z = matmul_ex(p, adapter.fc1.w.value, false, true);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 20; ++c) z.at(r, c) += adapter.fc1.b.value[static_cast<std::size_t>(c)];
        z = layer_norm(z, adapter.norm.gain.value, adapter.norm.bias.value, 1e-5f);
        z = gelu(z);
        Tensor h = matmul_ex(z, adapter.fc2.w.value, false, true);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 10; ++c) h.at(r, c) += adapter.fc2.b.value[static_cast<std::size_t>(c)] + p.at(r, c);
        const Tensor& got = g.value(out);
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - h[i]) < 1e-6f);
    }

    // width mismatch
    Graph g;
    CHECK_THROWS_AS(adapter.forward(g, g.input(Tensor(Shape{2, 4})), false, none),
                    DimensionError);
}

TEST_CASE("adapter trainables: enumeration, optimizer reachability, freeze exclusion") {
    AdapterConfig cfg;
    cfg.d_in = 6;
    cfg.d_out = 10;
    cfg.hidden = 20;
    auto adapter = AdapterT<float>::init(cfg, RngState(11));
    auto trainables = adapter.trainables();
    long long count = 0;
    for (auto* p : trainables) {
        CHECK(p->trainable);
        count += static_cast<long long>(p->value.size());
    }
    // proj + fc1 + fc2 (with biases) + norm gain/bias over the hidden width
    CHECK(count == 6 * 10 + 10 + 10 * 20 + 20 + 20 * 10 + 10 + 2 * 20);

    // a gradient step moves at least one adapter weight
    RngState none(0);
    Graph g;
    Tensor emb = Tensor::full(Shape{2, 6}, 0.5f);
    auto out = adapter.forward(g, g.input(emb), false, none);
    auto loss = g.reduce_sum(g.mul(out, out), 1.0f);
    for (auto* p : trainables) p->zero_grad();
    g.backward(loss);
    const float before = adapter.proj.w.value[0];
    adapter.proj.w.value[0] -= 0.1f * adapter.proj.w.grad[0];
    CHECK(adapter.proj.w.value[0] != before);

    // teacher freeze leaves the adapter alone
    auto teacher = Teacher::init(micro_teacher(), RngState(12));
    teacher.freeze();
    for (auto* p : adapter.trainables()) CHECK(p->trainable);
}

TEST_CASE("adapter gradient flow passes grad_check even with a saturated branch") {
    using S = double;
    AdapterConfig cfg;
    cfg.d_in = 4;
    cfg.d_out = 6;
    cfg.hidden = 8;
    cfg.dropout = 0.0;
    auto adapter = AdapterT<S>::init(cfg, RngState(13));
    RngState rng(14), none(0);
    // saturate the inner branch: gelu inputs far negative
    adapter.fc1.b.value.fill(-30.0);
    for (std::size_t i = 0; i < adapter.fc2.w.value.size(); ++i)
        adapter.fc2.w.value[i] = rng.next_normal() * 0.3;
    TensorT<S> emb(Shape{3, 4});
    for (std::size_t i = 0; i < emb.size(); ++i) emb[i] = rng.next_normal();

    auto params = adapter.trainables();
    const auto loss_fn = [&](bool with_grad) {
        Graph64 g;
        auto out = adapter.forward(g, g.input(emb), false, none);
        auto loss = g.reduce_sum(g.mul(out, out), 0.5);
        if (with_grad) g.backward(loss);
        return g.value(loss)[0];
    };
    const auto report = grad_check<S>(loss_fn, params, 1e-5, 1e-4);
    INFO("max rel err ", report.max_rel_err);
    CHECK(report.pass);
    // gradients still reach the projection through the residual path
    bool proj_nonzero = false;
    for (std::size_t i = 0; i < adapter.proj.w.grad.size(); ++i)
        proj_nonzero |= adapter.proj.w.grad[i] != 0.0;
    CHECK(proj_nonzero);
}
