#include "dmad/cli_ops.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "dmad/checkpoint.hpp"
#include "dmad/lime.hpp"
#include "dmad/pgm.hpp"
#include "dmad/trainer.hpp"

namespace fs = std::filesystem;

namespace dmad {

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir);
}

void write_access_log(const std::string& path, std::vector<std::string> opened) {
    std::sort(opened.begin(), opened.end());
    opened.erase(std::unique(opened.begin(), opened.end()), opened.end());
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (const std::string& p : opened) out << p << '\n';
    if (!out) throw IoError("short write to " + path);
}

std::pair<std::size_t, std::size_t> label_counts(const SplitData& split) {
    std::size_t bona = 0, morph = 0;
    for (const LabeledSample& s : split.samples) (s.is_morph() ? morph : bona)++;
    return {bona, morph};
}

std::vector<ScoreRecord> score_split_records(const RunConfig& cfg, const std::string& ckpt_path,
                                             const SplitData& split) {
    const auto ckpt = read_checkpoint(ckpt_path);
    std::vector<Tensor> images;
    images.reserve(split.samples.size());
    for (const LabeledSample& s : split.samples) images.push_back(s.image);

    std::vector<double> scores;
    if (ckpt.count("student.head.w")) {
        ViT student = ViT::init(cfg.student, cfg.lora, RngState(cfg.seed));
        load_into(ckpt, student.named_parameters());
        scores = score_images(student, images);
    } else if (ckpt.count("teacher.head.w")) {
        Teacher teacher = Teacher::init(cfg.teacher, RngState(cfg.seed));
        load_into(ckpt, teacher.named_parameters());
        scores = score_images(teacher, images);
    } else {
        throw DataError(ckpt_path + " holds neither a student nor a teacher model");
    }

    std::vector<ScoreRecord> records;
    records.reserve(split.samples.size());
    for (std::size_t i = 0; i < split.samples.size(); ++i) {
        const LabeledSample& s = split.samples[i];
        records.push_back({s.id, s.is_morph(), scores[i],
                           s.technique ? technique_name(*s.technique) : std::string()});
    }
    return records;
}

} // namespace

void run_gen(const RunConfig& cfg, const std::string& out_dir, std::ostream& log) {
    ensure_dir(out_dir);
    const ProtocolSplits splits = build_protocol(cfg.data, RngState(cfg.seed).split("data"));
    write_dataset(out_dir, splits);
    const std::pair<char, const SplitData*> parts[] = {
        {'a', &splits.a}, {'b', &splits.b}, {'c', &splits.c}};
    for (const auto& [tag, split] : parts) {
        const auto [bona, morph] = label_counts(*split);
        log << "split " << tag << ": " << bona << " bonafide, " << morph << " morph, "
            << split->train_idx.size() << " train / " << split->val_idx.size() << " val\n";
    }
}

void run_train_teacher(const RunConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir, std::ostream& log) {
    ensure_dir(out_dir);
    std::vector<std::string> opened;
    const SplitData data = load_split(data_dir, 'a', &opened);
    Teacher teacher = Teacher::init(cfg.teacher, RngState(cfg.seed));
    const TrainReport report = train_teacher(teacher, data, cfg.distill, RngState(cfg.seed));
    write_checkpoint(out_dir + "/teacher.ckpt", teacher.named_parameters());
    report.write_csv(out_dir + "/teacher_report.csv");
    write_access_log(out_dir + "/teacher_access_log.txt", std::move(opened));
    log << "teacher: " << report.rows.size() << " epochs (" << report.stop_reason
        << "), best epoch " << report.best_epoch << ", best val loss "
        << format_double(report.rows[static_cast<std::size_t>(report.best_epoch - 1)].val_loss)
        << "\n";
}

void run_train_student(const RunConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir, const std::string& teacher_ckpt,
                       std::ostream& log) {
    if (!fs::exists(teacher_ckpt))
        throw DataError("train-student needs an existing teacher checkpoint, none at " +
                        teacher_ckpt);
    ensure_dir(out_dir);
    std::vector<std::string> opened;
    const SplitData data = load_split(data_dir, 'b', &opened);
    Teacher teacher = Teacher::init(cfg.teacher, RngState(cfg.seed));
    load_into(read_checkpoint(teacher_ckpt), teacher.named_parameters());
    teacher.freeze();
    ViT student = ViT::init(cfg.student, cfg.lora, RngState(cfg.seed));
    Adapter adapter = Adapter::init(cfg.adapter, RngState(cfg.seed));
    const TrainReport report =
        train_student(student, teacher, adapter, data, cfg.distill, RngState(cfg.seed));
    NamedParams<float> params = student.named_parameters();
    for (auto& [name, p] : adapter.named_parameters()) params.emplace_back(name, p);
    write_checkpoint(out_dir + "/student.ckpt", params);
    report.write_csv(out_dir + "/student_report.csv");
    write_access_log(out_dir + "/student_access_log.txt", std::move(opened));
    log << "student: " << report.rows.size() << " epochs (" << report.stop_reason
        << "), best epoch " << report.best_epoch << ", best val loss "
        << format_double(report.rows[static_cast<std::size_t>(report.best_epoch - 1)].val_loss)
        << "\n";
}

EvalSummary run_eval(const RunConfig& cfg, const std::string& data_dir, const std::string& ckpt,
                     char split_tag, const std::string& out_dir, std::ostream& log) {
    if (!fs::exists(ckpt)) throw DataError("eval: checkpoint " + ckpt + " does not exist");
    ensure_dir(out_dir);
    const SplitData split = load_split(data_dir, split_tag, nullptr);
    const std::vector<ScoreRecord> records = score_split_records(cfg, ckpt, split);

    const std::string suffix = std::string(1, split_tag);
    write_scores_csv(out_dir + "/scores_" + suffix + ".csv", records);
    write_det_csv(out_dir + "/det_" + suffix + ".csv", det_curve(records));

    EvalSummary summary;
    summary.n_scored = records.size();
    const EerResult eer = d_eer(records);
    summary.eer = eer.eer;
    summary.eer_threshold = eer.threshold;
    summary.bpcer_at_5 = bpcer_at_macer(records, 0.05);
    summary.bpcer_at_10 = bpcer_at_macer(records, 0.10);
    summary.per_technique = per_technique_report(records);

    std::ofstream txt(out_dir + "/eval_summary_" + suffix + ".txt");
    if (!txt) throw IoError("cannot write eval summary in " + out_dir);
    auto emit = [&](std::ostream& os) {
        os << "samples: " << summary.n_scored << "\n";
        os << "D-EER: " << format_double(summary.eer) << " (threshold "
           << format_double(summary.eer_threshold) << ")\n";
        os << "BPCER@MACER=5%: " << format_double(summary.bpcer_at_5) << "\n";
        os << "BPCER@MACER=10%: " << format_double(summary.bpcer_at_10) << "\n";
        os << "technique,d_eer,bpcer@5%,bpcer@10%\n";
        for (const TechniqueRow& row : summary.per_technique) {
            if (row.omitted) {
                os << row.technique << ",omitted (no morph records),,\n";
                continue;
            }
            os << row.technique << ',' << format_double(row.eer) << ','
               << format_double(row.bpcer_at_5) << ',' << format_double(row.bpcer_at_10) << "\n";
        }
    };
    emit(txt);
    if (!txt) throw IoError("short write to eval summary in " + out_dir);
    emit(log);
    return summary;
}

void run_explain(const RunConfig& cfg, const std::string& ckpt, const std::string& image_path,
                 const std::string& out_dir, std::ostream& log) {
    if (!fs::exists(ckpt)) throw DataError("explain: checkpoint " + ckpt + " does not exist");
    ensure_dir(out_dir);
    const Tensor image = read_pgm_file(image_path);
    if (image.extent(1) != cfg.data.image_size || image.extent(2) != cfg.data.image_size)
        throw DimensionError("explain: image " + shape_str(image.shape()) +
                             " does not match the configured size " +
                             std::to_string(cfg.data.image_size));
    const auto ckpt_map = read_checkpoint(ckpt);
    if (!ckpt_map.count("student.head.w"))
        throw DataError("explain: " + ckpt + " is not a student checkpoint");
    ViT student = ViT::init(cfg.student, cfg.lora, RngState(cfg.seed));
    load_into(ckpt_map, student.named_parameters());

    const ScoreFn scorer = [&student](const Tensor& img) {
        std::vector<double> s = score_images(student, std::span<const Tensor>(&img, 1));
        return s[0];
    };
    const ExplainResult result = explain(scorer, image, cfg.lime);
    write_attribution_csv(out_dir + "/attribution.csv", result.attribution);
    write_pgm_file(out_dir + "/overlay.pgm", result.overlay);

    // Top-k regions by signed weight.
    const int g = cfg.lime.grid;
    std::vector<int> order(static_cast<std::size_t>(g) * g);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const float wa = result.attribution.weights[static_cast<std::size_t>(a)];
        const float wb = result.attribution.weights[static_cast<std::size_t>(b)];
        return wa != wb ? wa > wb : a < b;
    });
    log << "intercept " << format_double(result.attribution.intercept) << ", local R^2 "
        << format_double(result.attribution.local_fidelity_r2) << "\n";
    for (int k = 0; k < std::min(cfg.lime.topk, g * g); ++k) {
        const int region = order[static_cast<std::size_t>(k)];
        log << "region (" << region / g << ", " << region % g << ") weight "
            << format_double(result.attribution.weights[static_cast<std::size_t>(region)]) << "\n";
    }
}

} // namespace dmad
