#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "dmad/data_synth.hpp"
#include "dmad/pgm.hpp"

using namespace dmad;

namespace {

double image_corr(const Tensor& a, const Tensor& b) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(b.size());
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

double l2(const Tensor& a, const Tensor& b) {
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
}

/// Fraction of samples classified correctly by distance to per-class pixel
/// centroids (fit and evaluated on the given samples).
double nearest_centroid_accuracy(const std::vector<Tensor>& bona,
                                 const std::vector<Tensor>& morph) {
    Tensor cb(bona[0].shape()), cm(morph[0].shape());
    for (const Tensor& t : bona)
        for (std::size_t k = 0; k < t.size(); ++k) cb[k] += t[k] / static_cast<float>(bona.size());
    for (const Tensor& t : morph)
        for (std::size_t k = 0; k < t.size(); ++k) cm[k] += t[k] / static_cast<float>(morph.size());
    int ok = 0;
    for (const Tensor& t : bona)
        if (l2(t, cb) < l2(t, cm)) ++ok;
    for (const Tensor& t : morph)
        if (l2(t, cm) < l2(t, cb)) ++ok;
    return static_cast<double>(ok) / static_cast<double>(bona.size() + morph.size());
}

} // namespace

TEST_CASE("prototypes: determinism, distinctness, range") {
    const RngState stream(7);
    const Tensor a1 = gen_subject_prototype(12, stream, 32);
    const Tensor a2 = gen_subject_prototype(12, stream, 32);
    REQUIRE(a1.size() == a2.size());
    for (std::size_t i = 0; i < a1.size(); ++i) CHECK(a1[i] == a2[i]);

    // counter state of the caller's stream must not matter
    RngState advanced(7);
    advanced.next_u64();
    const Tensor a3 = gen_subject_prototype(12, advanced, 32);
    for (std::size_t i = 0; i < a1.size(); ++i) CHECK(a1[i] == a3[i]);

    double min_mad = 1e9;
    for (std::uint32_t i = 0; i < 100; ++i) {
        const Tensor x = gen_subject_prototype(2 * i + 1, stream, 32);
        const Tensor y = gen_subject_prototype(2 * i + 2, stream, 32);
        double mad = 0;
        for (std::size_t k = 0; k < x.size(); ++k) mad += std::abs(x[k] - y[k]);
        min_mad = std::min(min_mad, mad / static_cast<double>(x.size()));
    }
    CHECK(min_mad > 0.02);

    for (std::size_t i = 0; i < a1.size(); ++i) {
        CHECK(a1[i] >= 0.0f);
        CHECK(a1[i] <= 1.0f);
    }
}

TEST_CASE("bona fide samples: label, variability, clamping") {
    const RngState stream(7);
    RngState rng = stream.split("bona-test");
    const LabeledSample s1 = gen_bonafide(3, stream, 32, rng);
    CHECK(s1.label == 0);
    CHECK(s1.subject_a == 3);
    CHECK(!s1.subject_b.has_value());

    double min_corr = 1e9;
    for (std::uint32_t subj = 1; subj <= 50; ++subj) {
        const LabeledSample x = gen_bonafide(subj, stream, 32, rng);
        const LabeledSample y = gen_bonafide(subj, stream, 32, rng);
        bool identical = true;
        for (std::size_t k = 0; k < x.image.size(); ++k)
            if (x.image[k] != y.image[k]) identical = false;
        CHECK(!identical);
        min_corr = std::min(min_corr, image_corr(x.image, y.image));
    }
    CHECK(min_corr > 0.9);

    for (std::size_t k = 0; k < s1.image.size(); ++k) {
        CHECK(s1.image[k] >= 0.0f);
        CHECK(s1.image[k] <= 1.0f);
    }
}

TEST_CASE("morphs: contract, convexity, per-technique hardness") {
    const RngState stream(7);
    RngState rng = stream.split("morph-test");
    const LabeledSample m = gen_morph(4, 9, Technique::BlendOnly, stream, 32, rng);
    CHECK(m.label == 1);
    CHECK(m.subject_a == 4);
    REQUIRE(m.subject_b.has_value());
    CHECK(*m.subject_b == 9);
    CHECK(m.technique == Technique::BlendOnly);
    CHECK_THROWS_AS(gen_morph(4, 4, Technique::Landmark, stream, 32, rng), DataError);

    // a plain blend stays inside the prototype envelope before noise; verify
    // the convex-combination property on the raw blend at beta = 0.5
    const Tensor pa = gen_subject_prototype(4, stream, 32);
    const Tensor pb = gen_subject_prototype(9, stream, 32);
    for (std::size_t k = 0; k < pa.size(); ++k) {
        const float blend = 0.5f * pa[k] + 0.5f * pb[k];
        CHECK(blend >= std::min(pa[k], pb[k]) - 1e-6f);
        CHECK(blend <= std::max(pa[k], pb[k]) + 1e-6f);
    }

    // nearest-centroid oracle over 200 samples (seed 7): the ghost-band
    // technique separates well, the plain blend must not beat it
    std::map<Technique, double> acc;
    for (Technique tech : {Technique::Landmark, Technique::BlendOnly}) {
        RngState r2 = stream.split("nc").split(static_cast<std::uint64_t>(tech));
        std::vector<Tensor> bona, morph;
        for (int i = 0; i < 100; ++i) {
            bona.push_back(gen_bonafide(1 + (i % 40), stream, 32, r2).image);
            std::uint32_t a = 1 + static_cast<std::uint32_t>(r2.next_below(40));
            std::uint32_t b = 1 + static_cast<std::uint32_t>(r2.next_below(40));
            if (a == b) b = (a == 40) ? 1 : a + 1;
            morph.push_back(gen_morph(a, b, tech, stream, 32, r2).image);
        }
        acc[tech] = nearest_centroid_accuracy(bona, morph);
    }
    CHECK(acc[Technique::Landmark] >= 0.80);
    CHECK(acc[Technique::BlendOnly] <= acc[Technique::Landmark]);
}

TEST_CASE("augmentation ops: label preservation, involution, bounded shifts") {
    const RngState stream(7);
    RngState rng = stream.split("aug-test");
    const LabeledSample m = gen_morph(2, 5, Technique::Generative, stream, 32, rng);
    for (int trial = 0; trial < 50; ++trial) {
        const LabeledSample out = augment(m, rng);
        CHECK(out.label == m.label);
        CHECK(out.subject_a == m.subject_a);
        CHECK(out.subject_b == m.subject_b);
        CHECK(out.technique == m.technique);
        bool changed = false;
        for (std::size_t k = 0; k < out.image.size(); ++k)
            if (out.image[k] != m.image[k]) changed = true;
        CHECK(changed);
    }

    // horizontal flip is an exact involution
    const Tensor once = apply_augment(m.image, AugmentOp::HFlip, rng);
    const Tensor twice = apply_augment(once, AugmentOp::HFlip, rng);
    for (std::size_t k = 0; k < twice.size(); ++k)
        CHECK(std::abs(twice[k] - m.image[k]) < 1e-6f);

    // brightness shifts the mean by at most the drawn delta (0.1 cap)
    double mean0 = 0, mean1 = 0;
    Tensor bright = m.image;
    for (std::size_t k = 0; k < bright.size(); ++k) {
        mean0 += m.image[k];
        bright[k] = std::min(1.0f, m.image[k] + 0.1f);
        mean1 += bright[k];
    }
    CHECK((mean1 - mean0) / static_cast<double>(bright.size()) <= 0.1 + 1e-6);
}

TEST_CASE("weighted augmentation queue: 2x per-capita bona fide rate") {
    DataConfig cfg;
    cfg.subjects_per_split = 40;
    cfg.bonafide_per_subject = 3;
    cfg.pairs_per_split = 60;
    const ProtocolSplits splits = build_protocol(cfg, RngState(7).split("data"));
    AugmentStats stats;
    RngState rng = RngState(7).split("aug-ratio");
    // one epoch's worth of queue draws, sized for a stable per-capita estimate
    augmented_epoch_images(splits.a.samples, splits.a.train_idx, 8.0, rng, &stats);
    INFO("ratio ", stats.per_capita_ratio());
    CHECK(stats.per_capita_ratio() > 1.8);
    CHECK(stats.per_capita_ratio() < 2.2);
}

TEST_CASE("protocol: counts, subject disjointness, determinism, class balance") {
    DataConfig cfg;
    cfg.subjects_per_split = 10;
    cfg.bonafide_per_subject = 2;
    cfg.pairs_per_split = 20;
    const ProtocolSplits s1 = build_protocol(cfg, RngState(11));

    // 10 subjects x 2 bona fide + 20 pairs x 3 techniques x 1 morph
    std::size_t bona = 0, morph = 0;
    for (const LabeledSample& s : s1.a.samples) (s.is_morph() ? morph : bona)++;
    CHECK(bona == 20);
    CHECK(morph == 60);
    CHECK(morph >= bona); // many-to-one structure motivating the 2x policy

    std::set<std::uint32_t> subj_a, subj_b, subj_c;
    for (const LabeledSample& s : s1.a.samples) {
        subj_a.insert(s.subject_a);
        if (s.subject_b) subj_a.insert(*s.subject_b);
    }
    for (const LabeledSample& s : s1.b.samples) {
        subj_b.insert(s.subject_a);
        if (s.subject_b) subj_b.insert(*s.subject_b);
    }
    for (const LabeledSample& s : s1.c.samples) {
        subj_c.insert(s.subject_a);
        if (s.subject_b) subj_c.insert(*s.subject_b);
    }
    for (std::uint32_t id : subj_a) {
        CHECK(!subj_b.count(id));
        CHECK(!subj_c.count(id));
    }
    for (std::uint32_t id : subj_b) CHECK(!subj_c.count(id));

    // deterministic: identical stream, identical bytes
    const ProtocolSplits s2 = build_protocol(cfg, RngState(11));
    REQUIRE(s1.a.samples.size() == s2.a.samples.size());
    for (std::size_t i = 0; i < s1.a.samples.size(); ++i) {
        CHECK(s1.a.samples[i].id == s2.a.samples[i].id);
        for (std::size_t k = 0; k < s1.a.samples[i].image.size(); ++k)
            CHECK(s1.a.samples[i].image[k] == s2.a.samples[i].image[k]);
    }

    // train/val partition: both non-empty, disjoint, covering
    std::set<int> train(s1.a.train_idx.begin(), s1.a.train_idx.end());
    std::set<int> val(s1.a.val_idx.begin(), s1.a.val_idx.end());
    CHECK(!train.empty());
    CHECK(!val.empty());
    CHECK(train.size() + val.size() == s1.a.samples.size());
    for (int i : val) CHECK(!train.count(i));

    // too many pairs requested
    DataConfig bad = cfg;
    bad.subjects_per_split = 3;
    bad.pairs_per_split = 20;
    CHECK_THROWS_AS(build_protocol(bad, RngState(1)), ConfigError);
}

TEST_CASE("pgm: quantization bound, exact zero, malformed input") {
    RngState rng(9);
    Tensor img(Shape{1, 16, 16});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(rng.next_double());
    const std::string bytes = save_pgm(img);
    const Tensor back = load_pgm(bytes);
    REQUIRE(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.size(); ++i)
        CHECK(std::abs(back[i] - img[i]) <= 1.0f / 255.0f);

    const Tensor zeros(Shape{1, 4, 4});
    const std::string zbytes = save_pgm(zeros);
    CHECK(zbytes.substr(zbytes.size() - 16) == std::string(16, '\0'));

    CHECK_THROWS_AS(load_pgm("P6\n4 4\n255\n"), ParseError);
    CHECK_THROWS_AS(load_pgm(bytes.substr(0, bytes.size() - 3)), ParseError);
    CHECK_THROWS_AS(load_pgm("P5\n4 4\n65535\n"), ParseError);
    Tensor out_of_range = img;
    out_of_range[0] = 1.5f;
    CHECK_THROWS_AS(save_pgm(out_of_range), DataError);
}

TEST_CASE("dataset write/load round trip with access logging") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "dmad_ds_test").string();
    fs::remove_all(dir);

    DataConfig cfg;
    cfg.subjects_per_split = 4;
    cfg.bonafide_per_subject = 2;
    cfg.pairs_per_split = 4;
    const ProtocolSplits splits = build_protocol(cfg, RngState(3));
    write_dataset(dir, splits);

    const auto manifest = read_manifest(dir);
    CHECK(manifest.size() == splits.a.samples.size() + splits.b.samples.size() +
                                 splits.c.samples.size());

    std::vector<std::string> opened;
    const SplitData b = load_split(dir, 'b', &opened);
    REQUIRE(b.samples.size() == splits.b.samples.size());
    CHECK(opened.size() == b.samples.size());
    for (const std::string& p : opened) CHECK(p.rfind("b/", 0) == 0);
    for (std::size_t i = 0; i < b.samples.size(); ++i) {
        CHECK(b.samples[i].id == splits.b.samples[i].id);
        CHECK(b.samples[i].label == splits.b.samples[i].label);
        CHECK(b.samples[i].subject_a == splits.b.samples[i].subject_a);
        CHECK(b.samples[i].subject_b == splits.b.samples[i].subject_b);
        CHECK(b.samples[i].technique == splits.b.samples[i].technique);
        for (std::size_t k = 0; k < b.samples[i].image.size(); ++k)
            CHECK(std::abs(b.samples[i].image[k] - splits.b.samples[i].image[k]) <=
                  1.0f / 255.0f);
    }
    CHECK_THROWS_AS(load_split(dir, 'x', nullptr), DataError);
    fs::remove_all(dir);
}
