#include "dmad/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "dmad/error.hpp"
#include "dmad/pgm.hpp"

namespace fs = std::filesystem;

namespace dmad {

namespace {

float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

/// Bilinear sample with edge clamping.
float sample_bilinear(const Tensor& img, float y, float x) {
    const int h = img.extent(1), w = img.extent(2);
    const float yc = std::min(std::max(y, 0.0f), static_cast<float>(h - 1));
    const float xc = std::min(std::max(x, 0.0f), static_cast<float>(w - 1));
    const int y0 = static_cast<int>(yc);
    const int x0 = static_cast<int>(xc);
    const int y1 = std::min(y0 + 1, h - 1);
    const int x1 = std::min(x0 + 1, w - 1);
    const float fy = yc - y0, fx = xc - x0;
    return img.at(0, y0, x0) * (1 - fy) * (1 - fx) + img.at(0, y0, x1) * (1 - fy) * fx +
           img.at(0, y1, x0) * fy * (1 - fx) + img.at(0, y1, x1) * fy * fx;
}

/// Rotate/scale about the center plus translation, inverse-mapped.
Tensor warp_affine(const Tensor& img, float angle, float scale, float dx, float dy) {
    const int h = img.extent(1), w = img.extent(2);
    Tensor out(img.shape());
    const float cy = (h - 1) * 0.5f, cx = (w - 1) * 0.5f;
    const float ca = std::cos(angle) / scale, sa = std::sin(angle) / scale;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float ry = y - cy - dy, rx = x - cx - dx;
            out.at(0, y, x) = sample_bilinear(img, ca * ry - sa * rx + cy, sa * ry + ca * rx + cx);
        }
    return out;
}

Tensor resize_bilinear(const Tensor& img, int oh, int ow) {
    const int h = img.extent(1), w = img.extent(2);
    Tensor out(Shape{1, oh, ow});
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            out.at(0, y, x) = sample_bilinear(img, (y + 0.5f) * h / oh - 0.5f,
                                              (x + 0.5f) * w / ow - 0.5f);
    return out;
}

void add_noise_and_jitter(Tensor& img, RngState& rng) {
    const float angle = static_cast<float>(rng.next_uniform(-1.2, 1.2) * std::numbers::pi / 180.0);
    const float scale = static_cast<float>(rng.next_uniform(0.99, 1.01));
    const float dx = static_cast<float>(rng.next_uniform(-0.6, 0.6));
    const float dy = static_cast<float>(rng.next_uniform(-0.6, 0.6));
    img = warp_affine(img, angle, scale, dx, dy);
    for (std::size_t i = 0; i < img.size(); ++i)
        img[i] = clamp01(img[i] + static_cast<float>(rng.next_normal() * 0.03));
}

Tensor box_blur3(const Tensor& img) {
    const int h = img.extent(1), w = img.extent(2);
    Tensor out(img.shape());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float acc = 0;
            int n = 0;
            for (int ky = -1; ky <= 1; ++ky)
                for (int kx = -1; kx <= 1; ++kx) {
                    const int yy = y + ky, xx = x + kx;
                    if (yy >= 0 && yy < h && xx >= 0 && xx < w) {
                        acc += img.at(0, yy, xx);
                        ++n;
                    }
                }
            out.at(0, y, x) = acc / n;
        }
    return out;
}

void apply_morph_artifact(Tensor& img, Technique technique) {
    const int h = img.extent(1), w = img.extent(2);
    switch (technique) {
        case Technique::Landmark: {
            // Faint double-edge ghosting: two diagonally displaced copies, each
            // overlaid at 10% opacity, inside a fixed central band (where
            // blending seams concentrate on real morphs).
            const int y0 = static_cast<int>(0.22 * h), y1 = static_cast<int>(0.88 * h);
            const Tensor src = img;
            for (int y = y0; y < y1; ++y)
                for (int x = 0; x < w; ++x)
                    img.at(0, y, x) =
                        clamp01(src.at(0, y, x) +
                                0.10f * sample_bilinear(src, static_cast<float>(y - 2),
                                                        static_cast<float>(x - 2)) +
                                0.10f * sample_bilinear(src, static_cast<float>(y + 2),
                                                        static_cast<float>(x + 2)));
            break;
        }
        case Technique::Generative: {
            // Mild low-pass smoothing plus a mid-frequency texture.
            img = box_blur3(img);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    img.at(0, y, x) = clamp01(
                        img.at(0, y, x) +
                        0.04f * std::sin(2.0f * static_cast<float>(std::numbers::pi) * 4.0f * y / h) *
                            std::sin(2.0f * static_cast<float>(std::numbers::pi) * 4.0f * x / w));
            break;
        }
        case Technique::BlendOnly:
            break;
    }
}

std::string subject_tag(std::uint32_t id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%04u", id);
    return buf;
}

} // namespace

std::string technique_name(Technique t) {
    switch (t) {
        case Technique::Landmark: return "landmark";
        case Technique::Generative: return "generative";
        case Technique::BlendOnly: return "blend-only";
    }
    throw ConfigError("unknown technique enum value");
}

Technique technique_from_name(const std::string& name) {
    if (name == "landmark") return Technique::Landmark;
    if (name == "generative") return Technique::Generative;
    if (name == "blend-only") return Technique::BlendOnly;
    throw ConfigError("unknown technique '" + name + "'");
}

void DataConfig::validate() const {
    if (image_size < 8) throw ConfigError("data: image_size must be >= 8");
    if (subjects_per_split < 2) throw ConfigError("data: need at least 2 subjects per split");
    if (bonafide_per_subject < 1) throw ConfigError("data: bonafide_per_subject must be >= 1");
    if (pairs_per_split < 1 || morphs_per_pair < 1)
        throw ConfigError("data: pairs_per_split and morphs_per_pair must be >= 1");
    const long long max_pairs =
        static_cast<long long>(subjects_per_split) * (subjects_per_split - 1) / 2;
    if (pairs_per_split > max_pairs)
        throw ConfigError("data: " + std::to_string(pairs_per_split) +
                          " pairs requested but only " + std::to_string(max_pairs) +
                          " distinct pairs exist");
    for (const auto* t : {&techniques_a, &techniques_b, &techniques_c})
        if (t->empty()) throw ConfigError("data: every split needs at least one technique");
}

Tensor gen_subject_prototype(std::uint32_t subject_id, const RngState& stream, int size) {
    RngState rng = stream.split("prototype").split(subject_id);
    Tensor img(Shape{1, size, size});
    const int n_blobs = 56 + static_cast<int>(rng.next_below(17));
    for (int b = 0; b < n_blobs; ++b) {
        const float cx = static_cast<float>(rng.next_uniform(0.15, 0.85)) * size;
        const float cy = static_cast<float>(rng.next_uniform(0.15, 0.85)) * size;
        const float sigma = static_cast<float>(rng.next_uniform(0.05, 0.09)) * size;
        const float amp = static_cast<float>(rng.next_uniform(0.5, 1.0));
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const float d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                img.at(0, y, x) += amp * std::exp(-d2 / (2 * sigma * sigma));
            }
    }
    const float fx = 1 + static_cast<float>(rng.next_below(2));
    const float fy = 0; // horizontal texture: full rows integrate to zero
    const float phase = static_cast<float>(rng.next_uniform(0.0, 2.0 * std::numbers::pi));
    const float amp = static_cast<float>(rng.next_uniform(0.04, 0.08));
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            img.at(0, y, x) += amp * std::sin(2.0f * static_cast<float>(std::numbers::pi) *
                                                  (fx * x + fy * y) / size +
                                              phase);
    float lo = img[0], hi = img[0];
    for (std::size_t i = 0; i < img.size(); ++i) {
        lo = std::min(lo, img[i]);
        hi = std::max(hi, img[i]);
    }
    if (hi - lo < 1e-6f) {
        img.fill(0.5f);
    } else {
        for (std::size_t i = 0; i < img.size(); ++i) img[i] = (img[i] - lo) / (hi - lo);
    }
    return img;
}

LabeledSample gen_bonafide(std::uint32_t subject_id, const RngState& proto_stream, int size,
                           RngState& rng) {
    LabeledSample s;
    s.image = gen_subject_prototype(subject_id, proto_stream, size);
    add_noise_and_jitter(s.image, rng);
    s.label = 0;
    s.subject_a = subject_id;
    return s;
}

LabeledSample gen_morph(std::uint32_t id_a, std::uint32_t id_b, Technique technique,
                        const RngState& proto_stream, int size, RngState& rng) {
    if (id_a == id_b)
        throw DataError("gen_morph: a morph needs two distinct subjects, got " +
                        subject_tag(id_a) + " twice");
    const Tensor pa = gen_subject_prototype(id_a, proto_stream, size);
    const Tensor pb = gen_subject_prototype(id_b, proto_stream, size);
    const float beta = static_cast<float>(rng.next_uniform(0.4, 0.6));
    LabeledSample s;
    s.image = Tensor(pa.shape());
    for (std::size_t i = 0; i < pa.size(); ++i) s.image[i] = beta * pa[i] + (1 - beta) * pb[i];
    apply_morph_artifact(s.image, technique);
    add_noise_and_jitter(s.image, rng);
    s.label = 1;
    s.subject_a = id_a;
    s.subject_b = id_b;
    s.technique = technique;
    return s;
}

Tensor apply_augment(const Tensor& image, AugmentOp op, RngState& rng) {
    const int h = image.extent(1), w = image.extent(2);
    switch (op) {
        case AugmentOp::HFlip: {
            Tensor out(image.shape());
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out.at(0, y, x) = image.at(0, y, w - 1 - x);
            return out;
        }
        case AugmentOp::Rotate: {
            const float angle =
                static_cast<float>(rng.next_uniform(-10.0, 10.0) * std::numbers::pi / 180.0);
            return warp_affine(image, angle, 1.0f, 0.0f, 0.0f);
        }
        case AugmentOp::Brightness: {
            const float delta = static_cast<float>(rng.next_uniform(-0.1, 0.1));
            Tensor out(image.shape());
            for (std::size_t i = 0; i < image.size(); ++i) out[i] = clamp01(image[i] + delta);
            return out;
        }
        case AugmentOp::Contrast: {
            const float c = static_cast<float>(rng.next_uniform(0.9, 1.1));
            Tensor out(image.shape());
            for (std::size_t i = 0; i < image.size(); ++i)
                out[i] = clamp01((image[i] - 0.5f) * c + 0.5f);
            return out;
        }
        case AugmentOp::CropResize: {
            const int ch = std::max(1, static_cast<int>(h * 0.9));
            const int cw = std::max(1, static_cast<int>(w * 0.9));
            const int oy = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(h - ch + 1)));
            const int ox = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(w - cw + 1)));
            Tensor crop(Shape{1, ch, cw});
            for (int y = 0; y < ch; ++y)
                for (int x = 0; x < cw; ++x) crop.at(0, y, x) = image.at(0, oy + y, ox + x);
            return resize_bilinear(crop, h, w);
        }
    }
    throw ConfigError("unknown augment op");
}

LabeledSample augment(const LabeledSample& sample, RngState& rng) {
    constexpr AugmentOp ops[] = {AugmentOp::HFlip, AugmentOp::Rotate, AugmentOp::Brightness,
                                 AugmentOp::Contrast, AugmentOp::CropResize};
    LabeledSample out = sample;
    out.image = apply_augment(sample.image, ops[rng.next_below(5)], rng);
    return out;
}

double AugmentStats::per_capita_ratio() const {
    if (bona_samples == 0 || morph_samples == 0 || morph_events == 0) return 0.0;
    const double bona = static_cast<double>(bona_events) / static_cast<double>(bona_samples);
    const double morph = static_cast<double>(morph_events) / static_cast<double>(morph_samples);
    return bona / morph;
}

std::vector<Tensor> augmented_epoch_images(std::span<const LabeledSample> samples,
                                           std::span<const int> idx, double events_per_sample,
                                           RngState& rng, AugmentStats* stats) {
    std::vector<Tensor> images;
    images.reserve(idx.size());
    std::vector<double> cumulative;
    cumulative.reserve(idx.size());
    double total = 0;
    for (int i : idx) {
        images.push_back(samples[static_cast<std::size_t>(i)].image);
        total += samples[static_cast<std::size_t>(i)].is_morph() ? 1.0 : 2.0;
        cumulative.push_back(total);
        if (stats) {
            if (samples[static_cast<std::size_t>(i)].is_morph())
                ++stats->morph_samples;
            else
                ++stats->bona_samples;
        }
    }
    const auto n_events =
        static_cast<std::size_t>(std::llround(events_per_sample * static_cast<double>(idx.size())));
    for (std::size_t e = 0; e < n_events; ++e) {
        const double u = rng.next_double() * total;
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        const auto k = static_cast<std::size_t>(it - cumulative.begin());
        const LabeledSample& s = samples[static_cast<std::size_t>(idx[k])];
        LabeledSample tmp = s;
        tmp.image = images[k];
        images[k] = augment(tmp, rng).image;
        if (stats) {
            if (s.is_morph())
                ++stats->morph_events;
            else
                ++stats->bona_events;
        }
    }
    return images;
}

void partition_train_val(const std::vector<LabeledSample>& samples, std::vector<int>& train_idx,
                         std::vector<int>& val_idx) {
    train_idx.clear();
    val_idx.clear();
    for (int label : {0, 1}) {
        std::vector<int> cls;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (samples[i].label == label) cls.push_back(static_cast<int>(i));
        std::sort(cls.begin(), cls.end(),
                  [&](int a, int b) { return samples[static_cast<std::size_t>(a)].id < samples[static_cast<std::size_t>(b)].id; });
        for (std::size_t k = 0; k < cls.size(); ++k)
            (k % 5 == 4 ? val_idx : train_idx).push_back(cls[k]);
    }
    if (val_idx.empty() && train_idx.size() > 1) {
        val_idx.push_back(train_idx.back());
        train_idx.pop_back();
    }
}

namespace {

SplitData build_split(char split_tag, std::uint32_t first_subject, const DataConfig& cfg,
                      const std::vector<Technique>& techniques, const RngState& stream) {
    SplitData split;
    RngState rng = stream.split(std::string("split.") + split_tag);
    const int n = cfg.subjects_per_split;
    for (int s = 0; s < n; ++s) {
        const std::uint32_t sid = first_subject + static_cast<std::uint32_t>(s);
        for (int k = 0; k < cfg.bonafide_per_subject; ++k) {
            LabeledSample sample = gen_bonafide(sid, stream, cfg.image_size, rng);
            char buf[48];
            std::snprintf(buf, sizeof(buf), "bona_%s_%02d", subject_tag(sid).c_str(), k);
            sample.id = buf;
            split.samples.push_back(std::move(sample));
        }
    }
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            pairs.emplace_back(first_subject + static_cast<std::uint32_t>(i),
                               first_subject + static_cast<std::uint32_t>(j));
    // Fisher-Yates with the split's own stream; take the first pairs_per_split.
    for (std::size_t i = pairs.size(); i > 1; --i)
        std::swap(pairs[i - 1], pairs[rng.next_below(i)]);
    pairs.resize(static_cast<std::size_t>(cfg.pairs_per_split));
    for (const auto& [ida, idb] : pairs) {
        for (Technique t : techniques) {
            for (int k = 0; k < cfg.morphs_per_pair; ++k) {
                LabeledSample sample = gen_morph(ida, idb, t, stream, cfg.image_size, rng);
                char buf[80];
                std::snprintf(buf, sizeof(buf), "morph_%s_%s_%s_%02d", subject_tag(ida).c_str(),
                              subject_tag(idb).c_str(), technique_name(t).c_str(), k);
                sample.id = buf;
                split.samples.push_back(std::move(sample));
            }
        }
    }
    partition_train_val(split.samples, split.train_idx, split.val_idx);
    return split;
}

} // namespace

ProtocolSplits build_protocol(const DataConfig& cfg, const RngState& stream) {
    cfg.validate();
    ProtocolSplits out;
    const auto n = static_cast<std::uint32_t>(cfg.subjects_per_split);
    out.a = build_split('a', 1, cfg, cfg.techniques_a, stream);
    out.b = build_split('b', 1 + n, cfg, cfg.techniques_b, stream);
    out.c = build_split('c', 1 + 2 * n, cfg, cfg.techniques_c, stream);
    return out;
}

void write_dataset(const std::string& dir, const ProtocolSplits& splits) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset dir " + dir);
    std::ofstream manifest(dir + "/manifest.csv");
    if (!manifest) throw IoError("cannot open " + dir + "/manifest.csv for writing");
    manifest << "path,label,subject_a,subject_b,technique,split\n";
    const std::pair<char, const SplitData*> parts[] = {
        {'a', &splits.a}, {'b', &splits.b}, {'c', &splits.c}};
    for (const auto& [tag, split] : parts) {
        const std::string subdir = dir + "/" + tag;
        fs::create_directories(subdir, ec);
        if (ec) throw IoError("cannot create split dir " + subdir);
        for (const LabeledSample& s : split->samples) {
            const std::string rel = std::string(1, tag) + "/" + s.id + ".pgm";
            write_pgm_file(dir + "/" + rel, s.image);
            manifest << rel << ',' << (s.label == 1 ? "morph" : "bonafide") << ',' << s.subject_a
                     << ',';
            if (s.subject_b) manifest << *s.subject_b;
            manifest << ',';
            if (s.technique) manifest << technique_name(*s.technique);
            manifest << ',' << tag << '\n';
        }
    }
    if (!manifest) throw IoError("short write to manifest in " + dir);
}

std::vector<ManifestRow> read_manifest(const std::string& dir) {
    const std::string path = dir + "/manifest.csv";
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "path,label,subject_a,subject_b,technique,split")
        throw ParseError(path + ": bad manifest header");
    std::vector<ManifestRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                f.push_back(cur);
                cur.clear();
            } else if (c != '\r') {
                cur.push_back(c);
            }
        }
        f.push_back(cur);
        if (f.size() != 6)
            throw ParseError(path + ": line " + std::to_string(lineno) + " has " +
                             std::to_string(f.size()) + " fields, want 6");
        ManifestRow row;
        row.path = f[0];
        if (f[1] == "morph")
            row.label = 1;
        else if (f[1] == "bonafide")
            row.label = 0;
        else
            throw ParseError(path + ": bad label on line " + std::to_string(lineno));
        row.subject_a = static_cast<std::uint32_t>(std::stoul(f[2]));
        if (!f[3].empty()) row.subject_b = static_cast<std::uint32_t>(std::stoul(f[3]));
        if (!f[4].empty()) row.technique = technique_from_name(f[4]);
        if (f[5].size() != 1 || (f[5][0] != 'a' && f[5][0] != 'b' && f[5][0] != 'c'))
            throw ParseError(path + ": bad split on line " + std::to_string(lineno));
        row.split = f[5][0];
        rows.push_back(std::move(row));
    }
    return rows;
}

SplitData load_split(const std::string& dir, char split, std::vector<std::string>* opened) {
    SplitData out;
    for (const ManifestRow& row : read_manifest(dir)) {
        if (row.split != split) continue;
        LabeledSample s;
        s.image = read_pgm_file(dir + "/" + row.path);
        if (opened) opened->push_back(row.path);
        const std::size_t slash = row.path.find('/');
        const std::size_t dot = row.path.rfind(".pgm");
        s.id = row.path.substr(slash + 1, dot - slash - 1);
        s.label = row.label;
        s.subject_a = row.subject_a;
        s.subject_b = row.subject_b;
        s.technique = row.technique;
        out.samples.push_back(std::move(s));
    }
    if (out.samples.empty())
        throw DataError(std::string("split '") + split + "' is empty or missing in " + dir);
    partition_train_val(out.samples, out.train_idx, out.val_idx);
    return out;
}

} // namespace dmad
