#pragma once

#include <filesystem>
#include <set>
#include <string>

#include "sept/trainer.hpp"

namespace sept {

/// Line-oriented "key = value" experiment configuration with dotted section
/// keys (train.lr, mask.strategy, ...). Unknown keys are rejected; every run
/// writes back a resolved snapshot so any artifact is re-derivable.
struct RunConfig {
    uint64_t seed = 0;

    std::filesystem::path corpus;
    std::filesystem::path heldout;
    std::filesystem::path vocab;
    std::filesystem::path out_dir;
    std::filesystem::path annotations;
    std::filesystem::path pmi_cache;
    std::filesystem::path init_checkpoint;

    ModelConfig model;        // vocab_size is always derived from the vocab file
    TrainConfig train;
    MaskingConfig masking;    // includes the selection knobs
    SmoothingConfig smoothing;
    int64_t se_iterations = 1;
    std::string strategy = "random";

    std::set<std::string> present;

    bool has(const std::string& key) const { return present.count(key) != 0; }
    void require(const std::string& key) const {
        if (!has(key)) throw UsageError("missing config key \"" + key + "\"");
    }
};

RunConfig parse_config_file(const std::filesystem::path& path);

/// Applies one key=value pair (also used for flag overrides; flags win).
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace sept
