#include <doctest.h>

#include <cmath>

#include "dmad/grad_check.hpp"
#include "dmad/rng.hpp"
#include "dmad/tensor_ops.hpp"

using namespace dmad;

namespace {

Tensor64 random_tensor(Shape shape, RngState& rng, double scale = 1.0) {
    Tensor64 t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_normal() * scale;
    return t;
}

} // namespace

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor(Shape{2, 0}), DimensionError);
    CHECK_THROWS_AS(Tensor(Shape{3, 2}, std::vector<float>(5)), DimensionError);
    Tensor t(Shape{2, 3});
    CHECK(t.size() == 6);
    CHECK(t.all_finite());
}

TEST_CASE("rng determinism and stream independence") {
    RngState a(1234, 0), b(1234, 0);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    RngState parent(7);
    RngState s1 = parent.split("data");
    RngState s2 = parent.split("dropout");
    CHECK(s1.seed() != s2.seed());
    // splitting ignores the parent's counter
    parent.next_u64();
    CHECK(parent.split("data").seed() == s1.seed());

    RngState u(99);
    for (int i = 0; i < 1000; ++i) {
        const double x = u.next_double();
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
    }
}

TEST_CASE("matmul identity and projector") {
    const Tensor i2(Shape{2, 2}, {1, 0, 0, 1});
    const Tensor m(Shape{2, 2}, {1, 2, 3, 4});
    const Tensor r = matmul(i2, m);
    for (std::size_t k = 0; k < 4; ++k) CHECK(r[k] == m[k]);

    const Tensor proj(Shape{2, 2}, {1, 0, 0, 0});
    const Tensor x(Shape{2, 2}, {5, 6, 7, 8});
    const Tensor p = matmul(proj, x);
    CHECK(p.at(0, 0) == 5.0f);
    CHECK(p.at(0, 1) == 6.0f);
    CHECK(p.at(1, 0) == 0.0f);
    CHECK(p.at(1, 1) == 0.0f);
}

TEST_CASE("matmul vs triple-loop reference") {
    RngState rng(3);
    Tensor a(Shape{3, 4}), b(Shape{4, 2});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<float>(rng.next_normal());
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<float>(rng.next_normal());
    const Tensor c = matmul(a, b);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) {
            float ref = 0;
            for (int t = 0; t < 4; ++t) ref += a.at(i, t) * b.at(t, j);
            CHECK(std::abs(c.at(i, j) - ref) < 1e-6f);
        }
    CHECK_THROWS_AS(matmul(a, Tensor(Shape{3, 2})), DimensionError);
}

TEST_CASE("matmul transpose flags agree with explicit transposition") {
    RngState rng(11);
    const Tensor64 a = random_tensor(Shape{3, 5}, rng);
    const Tensor64 b = random_tensor(Shape{5, 4}, rng);
    Tensor64 at(Shape{5, 3}), bt(Shape{4, 5});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 5; ++j) at.at(j, i) = a.at(i, j);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) bt.at(j, i) = b.at(i, j);
    const Tensor64 ref = matmul(a, b);
    using Case = std::tuple<bool, bool, const Tensor64*, const Tensor64*>;
    for (auto [ta, tb, x, y] : {Case{false, true, &a, &bt}, Case{true, false, &at, &b},
                                Case{true, true, &at, &bt}}) {
        const Tensor64 got = matmul_ex(*x, *y, ta, tb);
        REQUIRE(got.shape() == ref.shape());
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("softmax_rows symmetry, stability, direct values") {
    const Tensor sym = softmax_rows(Tensor(Shape{1, 3}, {0, 0, 0}));
    for (int j = 0; j < 3; ++j) CHECK(sym[static_cast<std::size_t>(j)] == doctest::Approx(1.0 / 3).epsilon(1e-6));

    const Tensor big = softmax_rows(Tensor(Shape{1, 2}, {1000, 0}));
    CHECK(big.all_finite());
    CHECK(big[0] == doctest::Approx(1.0));
    CHECK(big[1] == doctest::Approx(0.0).epsilon(1e-9));

    // direct evaluation of exp(x_i)/sum over [1,2,3]
    const Tensor v = softmax_rows(Tensor(Shape{1, 3}, {1, 2, 3}));
    CHECK(v[0] == doctest::Approx(0.09003057).epsilon(1e-5));
    CHECK(v[1] == doctest::Approx(0.24472847).epsilon(1e-5));
    CHECK(v[2] == doctest::Approx(0.66524096).epsilon(1e-5));

    RngState rng(17);
    Tensor r(Shape{5, 7});
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = static_cast<float>(rng.next_normal() * 300);
    const Tensor s = softmax_rows(r);
    for (int row = 0; row < 5; ++row) {
        float sum = 0;
        for (int j = 0; j < 7; ++j) {
            CHECK(s.at(row, j) >= 0.0f);
            sum += s.at(row, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("layer_norm zero-variance, identity, recomputed moments") {
    const Tensor gain = Tensor::full(Shape{4}, 1.0f);
    const Tensor bias(Shape{4});
    const Tensor constant = Tensor::full(Shape{1, 4}, 3.25f);
    const Tensor z = layer_norm(constant, gain, bias, 1e-5f);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(z[i]) < 1e-6f);

    const Tensor pm(Shape{1, 2}, {1, -1});
    const Tensor g2 = Tensor::full(Shape{2}, 1.0f);
    const Tensor id = layer_norm(pm, g2, Tensor(Shape{2}), 1e-12f);
    CHECK(id[0] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(id[1] == doctest::Approx(-1.0).epsilon(1e-5));

    RngState rng(5);
    Tensor r(Shape{1, 64});
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = static_cast<float>(rng.next_normal() * 3 + 1);
    const Tensor out = layer_norm(r, Tensor::full(Shape{64}, 1.0f), Tensor(Shape{64}), 1e-5f);
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < out.size(); ++i) mean += out[i];
    mean /= 64;
    for (std::size_t i = 0; i < out.size(); ++i) var += (out[i] - mean) * (out[i] - mean);
    var /= 64;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(var > 1.0 - 1e-3);
    CHECK(var <= 1.0 + 1e-6);

    CHECK_THROWS_AS(layer_norm(r, gain, bias, 1e-5f), DimensionError);
}

TEST_CASE("gelu fixed points") {
    CHECK(gelu_scalar(0.0) == 0.0);
    CHECK(gelu_scalar(10.0) == doctest::Approx(10.0).epsilon(1e-7));
    CHECK(gelu_scalar(1.0) == doctest::Approx(0.841344746).epsilon(1e-6));
}

TEST_CASE("conv2d identity kernel, summation, loop oracle") {
    Tensor x(Shape{1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k1(Shape{1, 1, 1, 1}, {1});
    const Tensor idp = conv2d(x, k1, 1, 0);
    REQUIRE(idp.shape() == Shape{1, 3, 3});
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(idp[i] == x[i]);

    const Tensor ones = Tensor::full(Shape{1, 3, 3}, 1.0f);
    const Tensor k9 = Tensor::full(Shape{1, 1, 3, 3}, 1.0f);
    const Tensor s = conv2d(ones, k9, 1, 0);
    REQUIRE(s.shape() == Shape{1, 1, 1});
    CHECK(s[0] == doctest::Approx(9.0));

    RngState rng(23);
    Tensor xr(Shape{2, 5, 5}), kr(Shape{3, 2, 3, 3});
    for (std::size_t i = 0; i < xr.size(); ++i) xr[i] = static_cast<float>(rng.next_normal());
    for (std::size_t i = 0; i < kr.size(); ++i) kr[i] = static_cast<float>(rng.next_normal());
    const int stride = 1, pad = 1;
    const Tensor y = conv2d(xr, kr, stride, pad);
    REQUIRE(y.shape() == Shape{3, 5, 5});
    // quadruple-loop reference
    for (int co = 0; co < 3; ++co)
        for (int oy = 0; oy < 5; ++oy)
            for (int ox = 0; ox < 5; ++ox) {
                float ref = 0;
                for (int ci = 0; ci < 2; ++ci)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = oy * stride + ky - pad;
                            const int ix = ox * stride + kx - pad;
                            if (iy >= 0 && iy < 5 && ix >= 0 && ix < 5)
                                ref += xr.at(ci, iy, ix) * kr[((static_cast<std::size_t>(co) * 2 + ci) * 3 + ky) * 3 + kx];
                        }
                CHECK(std::abs(y.at(co, oy, ox) - ref) < 1e-5f);
            }

    CHECK_THROWS_AS(conv2d(x, Tensor(Shape{1, 1, 7, 7}), 1, 0), DimensionError);
}

TEST_CASE("dropout_mask rate zero, large-sample mean, determinism") {
    RngState rng(42);
    const Tensor ones = dropout_mask<float>(Shape{10, 10}, 0.0f, rng);
    for (std::size_t i = 0; i < ones.size(); ++i) CHECK(ones[i] == 1.0f);

    RngState r1(7), r2(7);
    const auto m1 = dropout_mask<float>(Shape{100000}, 0.1f, r1);
    const auto m2 = dropout_mask<float>(Shape{100000}, 0.1f, r2);
    double mean = 0;
    for (std::size_t i = 0; i < m1.size(); ++i) {
        CHECK(m1[i] == m2[i]);
        mean += m1[i];
    }
    mean /= static_cast<double>(m1.size());
    CHECK(mean > 0.995);
    CHECK(mean < 1.005);

    CHECK_THROWS_AS(dropout_mask<float>(Shape{2}, 1.0f, rng), ConfigError);
    CHECK_THROWS_AS(dropout_mask<float>(Shape{2}, -0.1f, rng), ConfigError);
}

TEST_CASE("grad_check quadratic and frozen-parameter contract") {
    ParameterT<double> theta("theta", Tensor64(Shape{2}, {1.0, 2.0}), true);
    ParameterT<double> frozen("frozen", Tensor64(Shape{2}, {3.0, 4.0}), false);
    std::vector<ParameterT<double>*> params{&theta, &frozen};
    const auto loss_fn = [&](bool with_grad) {
        double loss = 0;
        for (std::size_t i = 0; i < theta.value.size(); ++i) loss += theta.value[i] * theta.value[i];
        if (with_grad)
            for (std::size_t i = 0; i < theta.value.size(); ++i)
                theta.grad[i] += 2.0 * theta.value[i];
        return loss;
    };
    const auto report = grad_check<double>(loss_fn, params, 1e-5, 1e-8);
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-8);
    CHECK(theta.grad[0] == doctest::Approx(2.0));
    CHECK(theta.grad[1] == doctest::Approx(4.0));
    for (std::size_t i = 0; i < frozen.grad.size(); ++i) CHECK(frozen.grad[i] == 0.0);
}
