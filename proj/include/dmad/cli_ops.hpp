#pragma once

#include <ostream>
#include <string>

#include "dmad/metrics.hpp"
#include "dmad/run_config.hpp"

namespace dmad {

/// Library-level command implementations behind the CLI. All of them throw
/// dmad errors; the binary maps those to exit codes (1 usage/config,
/// 2 training anomaly, 3 I/O).

/// Write DS-A/DS-B/DS-C images plus manifest.csv under out_dir.
void run_gen(const RunConfig& cfg, const std::string& out_dir, std::ostream& log);

/// Fine-tune the teacher on DS-A. Artifacts: teacher.ckpt,
/// teacher_report.csv, teacher_access_log.txt.
void run_train_teacher(const RunConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir, std::ostream& log);

/// Distill the student on DS-B against the checkpointed teacher. Artifacts:
/// student.ckpt (student + adapter), student_report.csv,
/// student_access_log.txt.
void run_train_student(const RunConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir, const std::string& teacher_ckpt,
                       std::ostream& log);

struct EvalSummary {
    double eer = 0.0;
    double eer_threshold = 0.0;
    double bpcer_at_5 = 0.0;
    double bpcer_at_10 = 0.0;
    std::vector<TechniqueRow> per_technique;
    std::size_t n_scored = 0;
};

/// Score one split with a checkpointed model (student or teacher, detected
/// from the parameter names). Artifacts: scores_<split>.csv, det_<split>.csv,
/// eval_summary_<split>.txt.
EvalSummary run_eval(const RunConfig& cfg, const std::string& data_dir, const std::string& ckpt,
                     char split, const std::string& out_dir, std::ostream& log);

/// LIME explanation of one image under a student checkpoint. Artifacts:
/// attribution.csv, overlay.pgm.
void run_explain(const RunConfig& cfg, const std::string& ckpt, const std::string& image_path,
                 const std::string& out_dir, std::ostream& log);

} // namespace dmad
