#pragma once

#include <string>
#include <vector>

#include "dmad/adapter.hpp"
#include "dmad/data_synth.hpp"
#include "dmad/distill.hpp"
#include "dmad/teacher.hpp"
#include "dmad/vit.hpp"

namespace dmad {

struct TrainRow {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double kl_component = 0.0; // lambda-weighted KL contribution
    double ce_component = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

/// Per-epoch training log. Serialized as CSV
/// "epoch,train_loss,val_loss,kl_component,ce_component,lr,seconds" with a
/// trailing "#stop:<reason> best_epoch=<n>" footer. The seconds column is a
/// wall-clock measurement and is excluded from determinism comparisons.
struct TrainReport {
    std::vector<TrainRow> rows;
    std::string stop_reason; // "completed" | "early-stopped"
    int best_epoch = 0;      // 1-based epoch of the retained checkpoint

    void write_csv(const std::string& path) const;
    static TrainReport read_csv(const std::string& path);
};

/// Adam with fixed betas (0.9, 0.999) and eps 1e-8; updates only parameters
/// marked trainable.
class AdamOptimizer {
public:
    explicit AdamOptimizer(std::vector<Parameter*> params);

    void step(double lr);
    void zero_grad();
    const std::vector<Parameter*>& params() const { return params_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_, v_;
    long step_count_ = 0;
};

/// Fine-tune the teacher with plain cross-entropy on DS-A.
TrainReport train_teacher(Teacher& model, const SplitData& data, const DistillConfig& cfg,
                          const RngState& rng, AugmentStats* aug_stats = nullptr);

/// One student optimizer step's loss breakdown.
struct StudentStepInfo {
    double total = 0.0;
    double kl = 0.0; // unweighted KL
    double ce = 0.0;
};

/// Step-level student trainer: frozen teacher (eval mode) -> adapter ->
/// combined loss -> update {LoRA factors, classification head, adapter}.
class StudentTrainer {
public:
    StudentTrainer(ViT& student, Teacher& teacher, Adapter& adapter, const DistillConfig& cfg,
                   const RngState& rng);

    StudentStepInfo step(std::span<const Tensor> images, std::span<const int> labels, double lr);

    /// Combined loss in eval mode (no parameter updates).
    StudentStepInfo evaluate(std::span<const Tensor> images, std::span<const int> labels);

private:
    ViT& student_;
    Teacher& teacher_;
    Adapter& adapter_;
    DistillConfig cfg_;
    RngState dropout_rng_;
    AdamOptimizer opt_;

    Tensor teacher_embeddings(std::span<const Tensor> images);
};

/// Knowledge-distillation fine-tuning of the student on DS-B against a frozen
/// teacher. Throws ContractError if the teacher is not frozen.
TrainReport train_student(ViT& student, Teacher& teacher, Adapter& adapter, const SplitData& data,
                          const DistillConfig& cfg, const RngState& rng,
                          AugmentStats* aug_stats = nullptr);

/// Morph-class softmax probabilities (eval mode), one per image.
std::vector<double> score_images(ViT& student, std::span<const Tensor> images);
std::vector<double> score_images(Teacher& teacher, std::span<const Tensor> images);

} // namespace dmad
