// dmad: synthetic-benchmark morphing attack detection via distilled LoRA students.
//
// Subcommands: gen, train-teacher, train-student, eval, explain.
// Exit codes: 0 success, 1 usage/config error, 2 training anomaly, 3 I/O error.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dmad/cli_ops.hpp"
#include "dmad/error.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string data_dir;
    std::string out_dir = "out";
    std::string split = "c";
    bool seed_set = false;
    std::uint64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_data) {
    cmd->add_option("--config", args.config_path, "run configuration (JSON)")->required();
    auto* data = cmd->add_option("--data", args.data_dir, "dataset directory");
    if (needs_data) data->required();
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "override the config seed")
        ->each([&args](const std::string&) { args.seed_set = true; });
}

dmad::RunConfig load_config(const CommonArgs& args) {
    dmad::RunConfig cfg = dmad::RunConfig::from_json_file(args.config_path);
    if (args.seed_set) {
        cfg.seed = args.seed;
        cfg.lime_seed_set = false;
        cfg.finalize();
    }
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"single-image morphing attack detection: distillation benchmark"};
    app.require_subcommand(1);

    CommonArgs gen_args, tt_args, ts_args, eval_args, explain_args;
    std::string teacher_ckpt, eval_ckpt, explain_ckpt, image_path;
    int topk = 0;

    CLI::App* gen = app.add_subcommand("gen", "generate the synthetic DS-A/DS-B/DS-C protocol");
    add_common(gen, gen_args, false);

    CLI::App* tt = app.add_subcommand("train-teacher", "fine-tune the teacher on DS-A");
    add_common(tt, tt_args, true);
    tt->add_option("--split", tt_args.split, "training split (must be 'a')")->default_val("a");

    CLI::App* ts = app.add_subcommand("train-student", "distill the student on DS-B");
    add_common(ts, ts_args, true);
    ts->add_option("--split", ts_args.split, "training split (must be 'b')")->default_val("b");
    ts->add_option("--teacher", teacher_ckpt, "teacher checkpoint (default <out>/teacher.ckpt)");

    CLI::App* ev = app.add_subcommand("eval", "score a split and report metrics");
    add_common(ev, eval_args, true);
    ev->add_option("--split", eval_args.split, "split to score {a,b,c}")->default_val("c");
    ev->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();

    CLI::App* ex = app.add_subcommand("explain", "LIME attribution for one image");
    add_common(ex, explain_args, false);
    ex->add_option("--checkpoint", explain_ckpt, "student checkpoint")->required();
    ex->add_option("--image", image_path, "input PGM image")->required();
    ex->add_option("--topk", topk, "regions to report/overlay");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            dmad::run_gen(load_config(gen_args), gen_args.out_dir, std::cout);
        } else if (tt->parsed()) {
            if (tt_args.split != "a")
                throw dmad::ConfigError("train-teacher runs on DS-A only (got split '" +
                                        tt_args.split + "')");
            dmad::run_train_teacher(load_config(tt_args), tt_args.data_dir, tt_args.out_dir,
                                    std::cout);
        } else if (ts->parsed()) {
            if (ts_args.split != "b")
                throw dmad::ConfigError("train-student runs on DS-B only (got split '" +
                                        ts_args.split + "'); DS-C is evaluation-only");
            if (teacher_ckpt.empty()) teacher_ckpt = ts_args.out_dir + "/teacher.ckpt";
            dmad::run_train_student(load_config(ts_args), ts_args.data_dir, ts_args.out_dir,
                                    teacher_ckpt, std::cout);
        } else if (ev->parsed()) {
            if (eval_args.split.size() != 1 || eval_args.split[0] < 'a' || eval_args.split[0] > 'c')
                throw dmad::ConfigError("eval: split must be one of {a,b,c}");
            dmad::run_eval(load_config(eval_args), eval_args.data_dir, eval_ckpt,
                           eval_args.split[0], eval_args.out_dir, std::cout);
        } else if (ex->parsed()) {
            dmad::RunConfig cfg = load_config(explain_args);
            if (topk > 0) cfg.lime.topk = topk;
            dmad::run_explain(cfg, explain_ckpt, image_path, explain_args.out_dir, std::cout);
        }
    } catch (const dmad::IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 3;
    } catch (const dmad::EvalError& e) {
        std::cerr << "training anomaly: " << e.what() << '\n';
        return 2;
    } catch (const dmad::ScheduleError& e) {
        std::cerr << "training anomaly: " << e.what() << '\n';
        return 2;
    } catch (const dmad::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
