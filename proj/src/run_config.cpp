#include "dmad/run_config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "dmad/error.hpp"

namespace dmad {

namespace {

using nlohmann::json;

/// Tracks which keys were consumed and rejects leftovers by full path.
class StrictObject {
public:
    StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        if (!j_.contains(key)) return;
        seen_.insert(key);
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config: bad value for '" + path_ + key + "'");
        }
    }

    bool has(const char* key) {
        if (!j_.contains(key)) return false;
        seen_.insert(key);
        return true;
    }

    const json& raw(const char* key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void done() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key))
                throw ConfigError("config: unknown key '" + path_ + key + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

std::vector<Technique> parse_techniques(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError("config: '" + path + "' must be a list of strings");
    std::vector<Technique> out;
    for (const auto& item : j) {
        if (!item.is_string()) throw ConfigError("config: '" + path + "' must be a list of strings");
        out.push_back(technique_from_name(item.get<std::string>()));
    }
    return out;
}

} // namespace

RunConfig RunConfig::from_json_text(const std::string& text, const std::string& origin) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(origin + ": " + e.what());
    }
    RunConfig cfg;
    {
        StrictObject top(root, "");
        top.get("seed", cfg.seed);
        if (top.has("data")) {
            StrictObject d(top.raw("data"), "data.");
            d.get("image_size", cfg.data.image_size);
            d.get("subjects_per_split", cfg.data.subjects_per_split);
            d.get("bonafide_per_subject", cfg.data.bonafide_per_subject);
            d.get("pairs_per_split", cfg.data.pairs_per_split);
            d.get("morphs_per_pair", cfg.data.morphs_per_pair);
            if (d.has("techniques")) {
                const auto t = parse_techniques(d.raw("techniques"), "data.techniques");
                cfg.data.techniques_a = cfg.data.techniques_b = cfg.data.techniques_c = t;
            }
            if (d.has("techniques_a"))
                cfg.data.techniques_a = parse_techniques(d.raw("techniques_a"), "data.techniques_a");
            if (d.has("techniques_b"))
                cfg.data.techniques_b = parse_techniques(d.raw("techniques_b"), "data.techniques_b");
            if (d.has("techniques_c"))
                cfg.data.techniques_c = parse_techniques(d.raw("techniques_c"), "data.techniques_c");
            d.done();
        }
        if (top.has("teacher")) {
            StrictObject t(top.raw("teacher"), "teacher.");
            t.get("channels", cfg.teacher.channels);
            t.get("blocks", cfg.teacher.blocks);
            t.get("num_classes", cfg.teacher.num_classes);
            t.done();
        }
        if (top.has("student")) {
            StrictObject s(top.raw("student"), "student.");
            s.get("patch_size", cfg.student.patch_size);
            s.get("dim", cfg.student.dim);
            s.get("depth", cfg.student.depth);
            s.get("heads", cfg.student.heads);
            s.get("mlp_ratio", cfg.student.mlp_ratio);
            s.get("num_classes", cfg.student.num_classes);
            s.done();
        }
        if (top.has("lora")) {
            StrictObject l(top.raw("lora"), "lora.");
            l.get("rank", cfg.lora.rank);
            l.get("alpha", cfg.lora.alpha);
            l.get("dropout", cfg.lora.dropout);
            if (l.has("targets")) {
                const json& targets = l.raw("targets");
                if (!targets.is_array())
                    throw ConfigError("config: 'lora.targets' must be a list of strings");
                cfg.lora.target_qkv = false;
                cfg.lora.target_fc = false;
                for (const auto& item : targets) {
                    const std::string name = item.get<std::string>();
                    if (name == "attention-qkv")
                        cfg.lora.target_qkv = true;
                    else if (name == "fully-connected")
                        cfg.lora.target_fc = true;
                    else
                        throw ConfigError("config: unknown lora target '" + name + "'");
                }
            }
            l.done();
        }
        if (top.has("adapter")) {
            StrictObject a(top.raw("adapter"), "adapter.");
            a.get("hidden", cfg.adapter.hidden);
            a.get("dropout", cfg.adapter.dropout);
            a.done();
        }
        if (top.has("distill")) {
            StrictObject d(top.raw("distill"), "distill.");
            d.get("lambda", cfg.distill.lambda);
            d.get("temperature", cfg.distill.temperature);
            d.get("teacher_lr", cfg.distill.teacher_lr);
            d.get("student_lr", cfg.distill.student_lr);
            d.get("min_lr", cfg.distill.min_lr);
            d.get("epochs", cfg.distill.epochs);
            d.get("batch_size", cfg.distill.batch_size);
            d.get("patience", cfg.distill.patience);
            d.done();
        }
        if (top.has("lime")) {
            StrictObject l(top.raw("lime"), "lime.");
            l.get("grid", cfg.lime.grid);
            l.get("num_samples", cfg.lime.num_samples);
            l.get("keep_prob", cfg.lime.keep_prob);
            l.get("kernel_width", cfg.lime.kernel_width);
            l.get("ridge_penalty", cfg.lime.ridge_penalty);
            l.get("baseline", cfg.lime.baseline);
            l.get("topk", cfg.lime.topk);
            if (l.has("seed")) {
                cfg.lime.seed = l.raw("seed").get<std::uint64_t>();
                cfg.lime_seed_set = true;
            }
            l.done();
        }
        top.done();
    }
    cfg.finalize();
    return cfg;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text, path);
}

void RunConfig::finalize() {
    student.image_size = data.image_size;
    student.channels = 1;
    teacher.in_channels = 1;
    adapter.d_in = teacher.embed_dim();
    adapter.d_out = student.dim;
    distill.seed = seed;
    if (!lime_seed_set) lime.seed = RngState(seed).split("lime").seed();

    data.validate();
    teacher.validate();
    student.validate();
    lora.validate();
    adapter.validate();
    distill.validate();
    lime.validate();
}

} // namespace dmad
