#include "dmad/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "dmad/metrics.hpp" // format_double / parse_double

namespace dmad {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kAugEventsPerSample = 0.75;

using Clock = std::chrono::steady_clock;

double elapsed_seconds(Clock::time_point from) {
    return std::chrono::duration<double>(Clock::now() - from).count();
}

std::vector<int> shuffled(std::size_t n, RngState& rng) {
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
    for (std::size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[rng.next_below(i)]);
    return order;
}

void require_nonempty(const SplitData& data) {
    if (data.samples.empty() || data.train_idx.empty() || data.val_idx.empty())
        throw DataError("training requires non-empty train and validation partitions");
}

/// Shared early-stopping bookkeeping: stop after `patience` epochs without a
/// strict validation improvement, retaining the best-epoch snapshot.
class EarlyStopper {
public:
    EarlyStopper(std::vector<Parameter*> tracked, int patience)
        : tracked_(std::move(tracked)), patience_(patience) {}

    /// Returns true when training should stop.
    bool observe(int epoch, double val_loss) {
        if (best_epoch_ == 0 || val_loss < best_val_) {
            best_val_ = val_loss;
            best_epoch_ = epoch;
            snapshot_.clear();
            for (Parameter* p : tracked_) snapshot_.push_back(p->value);
            streak_ = 0;
            return false;
        }
        return ++streak_ >= patience_;
    }

    void restore_best() {
        for (std::size_t i = 0; i < tracked_.size(); ++i) tracked_[i]->value = snapshot_[i];
    }

    int best_epoch() const { return best_epoch_; }

private:
    std::vector<Parameter*> tracked_;
    std::vector<Tensor> snapshot_;
    int patience_;
    int streak_ = 0;
    int best_epoch_ = 0;
    double best_val_ = 0.0;
};

} // namespace

void TrainReport::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "epoch,train_loss,val_loss,kl_component,ce_component,lr,seconds\n";
    for (const TrainRow& r : rows)
        out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss)
            << ',' << format_double(r.kl_component) << ',' << format_double(r.ce_component) << ','
            << format_double(r.lr) << ',' << format_double(r.seconds) << '\n';
    out << "#stop:" << stop_reason << " best_epoch=" << best_epoch << '\n';
    if (!out) throw IoError("short write to " + path);
}

TrainReport TrainReport::read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) ||
        line != "epoch,train_loss,val_loss,kl_component,ce_component,lr,seconds")
        throw ParseError(path + ": bad train report header");
    TrainReport report;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("#stop:", 0) == 0) {
            const std::size_t best = line.find(" best_epoch=");
            if (best == std::string::npos) throw ParseError(path + ": bad stop footer");
            report.stop_reason = line.substr(6, best - 6);
            report.best_epoch = std::stoi(line.substr(best + 12));
            continue;
        }
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
        if (f.size() != 7) throw ParseError(path + ": bad report row '" + line + "'");
        TrainRow r;
        r.epoch = std::stoi(f[0]);
        r.train_loss = parse_double(f[1], path);
        r.val_loss = parse_double(f[2], path);
        r.kl_component = parse_double(f[3], path);
        r.ce_component = parse_double(f[4], path);
        r.lr = parse_double(f[5], path);
        r.seconds = parse_double(f[6], path);
        report.rows.push_back(r);
    }
    return report;
}

AdamOptimizer::AdamOptimizer(std::vector<Parameter*> params) : params_(std::move(params)) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void AdamOptimizer::step(double lr) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_count_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter* p = params_[k];
        if (!p->trainable) continue;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i];
            const double m = kBeta1 * m_[k][i] + (1.0 - kBeta1) * g;
            const double v = kBeta2 * v_[k][i] + (1.0 - kBeta2) * g * g;
            m_[k][i] = static_cast<float>(m);
            v_[k][i] = static_cast<float>(v);
            p->value[i] -= static_cast<float>(lr * (m / bc1) / (std::sqrt(v / bc2) + kAdamEps));
        }
    }
}

void AdamOptimizer::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

TrainReport train_teacher(Teacher& model, const SplitData& data, const DistillConfig& cfg,
                          const RngState& rng, AugmentStats* aug_stats) {
    cfg.validate();
    require_nonempty(data);
    std::vector<Parameter*> trainables;
    for (Parameter* p : model.parameters())
        if (p->trainable) trainables.push_back(p);
    if (trainables.empty()) throw ContractError("train_teacher: model has no trainable parameters");
    AdamOptimizer opt(trainables);
    EarlyStopper stopper(trainables, cfg.patience);

    TrainReport report;
    report.stop_reason = "completed";
    RngState base = rng.split("train_teacher");
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = Clock::now();
        const double lr = cosine_lr(epoch, cfg.epochs, cfg.teacher_lr, cfg.min_lr);
        RngState erng = base.split(static_cast<std::uint64_t>(epoch));
        RngState aug_rng = erng.split("augment");
        RngState shuffle_rng = erng.split("shuffle");
        RngState fwd_rng = erng.split("forward");
        const std::vector<Tensor> images = augmented_epoch_images(
            data.samples, data.train_idx, kAugEventsPerSample, aug_rng, aug_stats);
        const std::vector<int> order = shuffled(data.train_idx.size(), shuffle_rng);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Tensor> batch;
            std::vector<int> labels;
            for (std::size_t k = start; k < end; ++k) {
                const int pos = order[k];
                batch.push_back(images[static_cast<std::size_t>(pos)]);
                labels.push_back(data.samples[static_cast<std::size_t>(data.train_idx[static_cast<std::size_t>(pos)])].label);
            }
            Graph g;
            auto out = model.forward(g, batch, true, fwd_rng);
            auto loss = ce_loss_graph(g, out.logits, labels);
            const double batch_loss = g.value(loss)[0];
            if (!std::isfinite(batch_loss))
                throw EvalError("train_teacher: non-finite loss at epoch " + std::to_string(epoch + 1));
            opt.zero_grad();
            g.backward(loss);
            opt.step(lr);
            loss_sum += batch_loss * static_cast<double>(batch.size());
        }
        const double train_loss = loss_sum / static_cast<double>(order.size());

        double val_sum = 0.0;
        RngState eval_rng(0);
        for (std::size_t start = 0; start < data.val_idx.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(data.val_idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Tensor> batch;
            std::vector<int> labels;
            for (std::size_t k = start; k < end; ++k) {
                const LabeledSample& s = data.samples[static_cast<std::size_t>(data.val_idx[k])];
                batch.push_back(s.image);
                labels.push_back(s.label);
            }
            Graph g;
            auto out = model.forward(g, batch, false, eval_rng);
            val_sum += cross_entropy(g.value(out.logits), labels) * static_cast<double>(batch.size());
        }
        const double val_loss = val_sum / static_cast<double>(data.val_idx.size());

        report.rows.push_back({epoch + 1, train_loss, val_loss, 0.0, train_loss, lr,
                               elapsed_seconds(t0)});
        if (stopper.observe(epoch + 1, val_loss)) {
            report.stop_reason = "early-stopped";
            break;
        }
    }
    stopper.restore_best();
    report.best_epoch = stopper.best_epoch();
    return report;
}

StudentTrainer::StudentTrainer(ViT& student, Teacher& teacher, Adapter& adapter,
                               const DistillConfig& cfg, const RngState& rng)
    : student_(student),
      teacher_(teacher),
      adapter_(adapter),
      cfg_(cfg),
      dropout_rng_(rng.split("student.dropout")),
      opt_([&] {
          std::vector<Parameter*> trainables;
          for (Parameter* p : student.parameters())
              if (p->trainable) trainables.push_back(p);
          for (Parameter* p : adapter.trainables()) trainables.push_back(p);
          return trainables;
      }()) {
    cfg_.validate();
    if (!teacher_.frozen())
        throw ContractError("train_student: the teacher must be frozen before distillation");
}

Tensor StudentTrainer::teacher_embeddings(std::span<const Tensor> images) {
    Graph tg;
    RngState none(0);
    auto out = teacher_.forward(tg, images, false, none);
    return tg.value(out.embedding);
}

StudentStepInfo StudentTrainer::step(std::span<const Tensor> images, std::span<const int> labels,
                                     double lr) {
    Graph g;
    auto teacher_emb = cfg_.lambda == 0.0 ? -1 : g.input(teacher_embeddings(images));
    auto out = student_.forward(g, images, true, dropout_rng_);
    auto loss = combined_loss_graph(g, out.logits, labels,
                                    teacher_emb, out.embedding, adapter_, cfg_, true,
                                    dropout_rng_);
    if (!std::isfinite(static_cast<double>(loss.total_value)))
        throw EvalError("train_student: non-finite loss");
    if (loss.kl_value < -1e-6f)
        throw EvalError("train_student: negative KL divergence " + std::to_string(loss.kl_value));
    opt_.zero_grad();
    g.backward(loss.total);
    opt_.step(lr);
    // Components are recombined in double so the reported total decomposes
    // exactly as lambda * KL + CE.
    StudentStepInfo info;
    info.kl = loss.kl_value;
    info.ce = loss.ce_value;
    info.total = cfg_.lambda * info.kl + info.ce;
    return info;
}

StudentStepInfo StudentTrainer::evaluate(std::span<const Tensor> images,
                                         std::span<const int> labels) {
    Graph g;
    RngState none(0);
    auto teacher_emb = cfg_.lambda == 0.0 ? -1 : g.input(teacher_embeddings(images));
    auto out = student_.forward(g, images, false, none);
    auto loss = combined_loss_graph(g, out.logits, labels, teacher_emb, out.embedding, adapter_,
                                    cfg_, false, none);
    StudentStepInfo info;
    info.kl = loss.kl_value;
    info.ce = loss.ce_value;
    info.total = cfg_.lambda * info.kl + info.ce;
    return info;
}

TrainReport train_student(ViT& student, Teacher& teacher, Adapter& adapter, const SplitData& data,
                          const DistillConfig& cfg, const RngState& rng,
                          AugmentStats* aug_stats) {
    cfg.validate();
    require_nonempty(data);
    StudentTrainer trainer(student, teacher, adapter, cfg, rng);
    std::vector<Parameter*> tracked;
    for (Parameter* p : student.parameters())
        if (p->trainable) tracked.push_back(p);
    for (Parameter* p : adapter.trainables()) tracked.push_back(p);
    EarlyStopper stopper(tracked, cfg.patience);

    TrainReport report;
    report.stop_reason = "completed";
    RngState base = rng.split("train_student");
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = Clock::now();
        const double lr = cosine_lr(epoch, cfg.epochs, cfg.student_lr, cfg.min_lr);
        RngState erng = base.split(static_cast<std::uint64_t>(epoch));
        RngState aug_rng = erng.split("augment");
        RngState shuffle_rng = erng.split("shuffle");
        const std::vector<Tensor> images = augmented_epoch_images(
            data.samples, data.train_idx, kAugEventsPerSample, aug_rng, aug_stats);
        const std::vector<int> order = shuffled(data.train_idx.size(), shuffle_rng);

        double kl_sum = 0.0, ce_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Tensor> batch;
            std::vector<int> labels;
            for (std::size_t k = start; k < end; ++k) {
                const int pos = order[k];
                batch.push_back(images[static_cast<std::size_t>(pos)]);
                labels.push_back(data.samples[static_cast<std::size_t>(data.train_idx[static_cast<std::size_t>(pos)])].label);
            }
            const StudentStepInfo info = trainer.step(batch, labels, lr);
            kl_sum += cfg.lambda * info.kl * static_cast<double>(batch.size());
            ce_sum += info.ce * static_cast<double>(batch.size());
        }
        const double n_train = static_cast<double>(order.size());
        const double kl_component = kl_sum / n_train;
        const double ce_component = ce_sum / n_train;

        double val_sum = 0.0;
        for (std::size_t start = 0; start < data.val_idx.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(data.val_idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Tensor> batch;
            std::vector<int> labels;
            for (std::size_t k = start; k < end; ++k) {
                const LabeledSample& s = data.samples[static_cast<std::size_t>(data.val_idx[k])];
                batch.push_back(s.image);
                labels.push_back(s.label);
            }
            val_sum += trainer.evaluate(batch, labels).total * static_cast<double>(batch.size());
        }
        const double val_loss = val_sum / static_cast<double>(data.val_idx.size());
        if (!std::isfinite(val_loss))
            throw EvalError("train_student: non-finite validation loss");

        report.rows.push_back({epoch + 1, kl_component + ce_component, val_loss, kl_component,
                               ce_component, lr, elapsed_seconds(t0)});
        if (stopper.observe(epoch + 1, val_loss)) {
            report.stop_reason = "early-stopped";
            break;
        }
    }
    stopper.restore_best();
    report.best_epoch = stopper.best_epoch();
    return report;
}

namespace {

template <class Model>
std::vector<double> score_images_impl(Model& model, std::span<const Tensor> images) {
    std::vector<double> scores;
    scores.reserve(images.size());
    constexpr std::size_t kChunk = 64;
    RngState none(0);
    for (std::size_t start = 0; start < images.size(); start += kChunk) {
        const std::size_t end = std::min(images.size(), start + kChunk);
        Graph g;
        auto out = model.forward(g, images.subspan(start, end - start), false, none);
        const Tensor probs = softmax_rows(g.value(out.logits));
        const int c = probs.last_extent();
        for (int r = 0; r < probs.leading_rows(); ++r)
            scores.push_back(probs[static_cast<std::size_t>(r) * c + 1]);
    }
    return scores;
}

} // namespace

std::vector<double> score_images(ViT& student, std::span<const Tensor> images) {
    return score_images_impl(student, images);
}

std::vector<double> score_images(Teacher& teacher, std::span<const Tensor> images) {
    return score_images_impl(teacher, images);
}

} // namespace dmad
