#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmad/rng.hpp"
#include "dmad/tensor.hpp"

namespace dmad {

enum class Technique { Landmark, Generative, BlendOnly };

std::string technique_name(Technique t);
Technique technique_from_name(const std::string& name);

/// One grayscale image with its label and provenance: one subject id for bona
/// fide samples, two distinct ids for morphs.
struct LabeledSample {
    std::string id;
    Tensor image; // [1 x S x S], values in [0, 1]
    int label = 0; // 0 bonafide, 1 morph
    std::uint32_t subject_a = 0;
    std::optional<std::uint32_t> subject_b;
    std::optional<Technique> technique;

    bool is_morph() const { return label == 1; }
};

struct DataConfig {
    int image_size = 32;
    int subjects_per_split = 20;
    int bonafide_per_subject = 3;
    int pairs_per_split = 30;
    int morphs_per_pair = 1; // per (pair, technique)
    std::vector<Technique> techniques_a{Technique::Landmark, Technique::Generative,
                                        Technique::BlendOnly};
    std::vector<Technique> techniques_b{Technique::Landmark, Technique::Generative,
                                        Technique::BlendOnly};
    std::vector<Technique> techniques_c{Technique::Landmark, Technique::Generative,
                                        Technique::BlendOnly};

    void validate() const;
};

/// Train/validation partition plus the sample list of one protocol split.
struct SplitData {
    std::vector<LabeledSample> samples;
    std::vector<int> train_idx;
    std::vector<int> val_idx;
};

/// DS-A trains the teacher, DS-B trains the student, DS-C is evaluation-only.
/// Subject pools are disjoint across the three splits.
struct ProtocolSplits {
    SplitData a, b, c;
};

/// Deterministic smooth composite of 3-5 Gaussian blobs plus one low-frequency
/// sinusoid, min-max normalized to [0, 1]. A pure function of (stream seed,
/// subject id): the caller's stream counter does not influence it.
Tensor gen_subject_prototype(std::uint32_t subject_id, const RngState& stream, int size);

/// Prototype + per-sample Gaussian pixel noise (sigma 0.03) + small affine
/// jitter, clamped to [0, 1].
LabeledSample gen_bonafide(std::uint32_t subject_id, const RngState& proto_stream, int size,
                           RngState& rng);

/// Convex blend beta * P_a + (1 - beta) * P_b, beta in [0.4, 0.6], one
/// technique-dependent artifact, then the same noise/jitter as bona fide.
LabeledSample gen_morph(std::uint32_t id_a, std::uint32_t id_b, Technique technique,
                        const RngState& proto_stream, int size, RngState& rng);

enum class AugmentOp { HFlip, Rotate, Brightness, Contrast, CropResize };

/// Apply one specific augmentation (exposed for the involution tests).
Tensor apply_augment(const Tensor& image, AugmentOp op, RngState& rng);

/// One randomly chosen augmentation; label and subject ids are untouched.
LabeledSample augment(const LabeledSample& sample, RngState& rng);

/// Counters for the class-imbalance policy: bona fide entries sit in the
/// augmentation queue with weight 2, so per capita they are augmented twice
/// as often as morphs.
struct AugmentStats {
    std::uint64_t bona_events = 0;
    std::uint64_t morph_events = 0;
    std::uint64_t bona_samples = 0;
    std::uint64_t morph_samples = 0;

    double per_capita_ratio() const;
};

/// Draw round(events_per_sample * n) weighted picks over the index set and
/// apply one augmentation per pick (chained when an index repeats). Returns
/// the epoch's working images aligned with `idx`.
std::vector<Tensor> augmented_epoch_images(std::span<const LabeledSample> samples,
                                           std::span<const int> idx, double events_per_sample,
                                           RngState& rng, AugmentStats* stats = nullptr);

/// Stratified deterministic 80/20 split (every 5th sample of each class, in id
/// order, goes to validation).
void partition_train_val(const std::vector<LabeledSample>& samples, std::vector<int>& train_idx,
                         std::vector<int>& val_idx);

/// Build the three-way protocol with disjoint subject pools and internal
/// train/validation partitions. Deterministic given the stream.
ProtocolSplits build_protocol(const DataConfig& cfg, const RngState& stream);

// --- on-disk layout -------------------------------------------------------
// manifest.csv: path,label,subject_a,subject_b,technique,split
// images:       <split>/<sample_id>.pgm

struct ManifestRow {
    std::string path;
    int label = 0;
    std::uint32_t subject_a = 0;
    std::optional<std::uint32_t> subject_b;
    std::optional<Technique> technique;
    char split = 'a';
};

void write_dataset(const std::string& dir, const ProtocolSplits& splits);
std::vector<ManifestRow> read_manifest(const std::string& dir);

/// Load one split's samples from disk; every image path read is appended to
/// `opened` (relative to the dataset dir) for protocol-hygiene auditing.
SplitData load_split(const std::string& dir, char split, std::vector<std::string>* opened);

} // namespace dmad
