#pragma once

#include <cstdint>
#include <string>

#include "dmad/adapter.hpp"
#include "dmad/data_synth.hpp"
#include "dmad/distill.hpp"
#include "dmad/lime.hpp"
#include "dmad/teacher.hpp"
#include "dmad/vit.hpp"

namespace dmad {

/// One document aggregating every component configuration. Parsing is strict:
/// unknown keys are rejected with their full path, and all component
/// invariants are checked after parse.
struct RunConfig {
    std::uint64_t seed = 42;
    DataConfig data;
    TeacherConfig teacher;
    ViTConfig student;
    LoRAConfig lora;
    AdapterConfig adapter;
    DistillConfig distill;
    LimeConfig lime;
    bool lime_seed_set = false; // else derived from the run seed

    static RunConfig from_json_text(const std::string& text, const std::string& origin);
    static RunConfig from_json_file(const std::string& path);

    /// Re-derive coupled fields (image geometry, adapter widths, seeds) and
    /// validate everything.
    void finalize();
};

} // namespace dmad
