#pragma once

#include <string>
#include <vector>

#include "maskdiff/harness.hpp"
#include "maskdiff/maloss.hpp"
#include "maskdiff/model.hpp"
#include "maskdiff/pretrain.hpp"

namespace maskdiff {

// the full run document. Every field has a default; a JSON config overrides
// by section, unknown keys are rejected, and the resolved copy is written
// next to the outputs so results are self-describing.
struct RunConfig {
    ModelConfig model;    // vocab_size is derived from the wordlists, not a key
    CorpusConfig corpus;  // configured inside the "pretrain" section
    PretrainConfig pretrain;
    FinetuneConfig finetune;
    struct FinetuneData {
        int n_relevant = 4;
        int n_distractors = 4;
        int n_per_task = 10;
    } finetune_data;  // also inside the "finetune" section
    struct Tasks {
        uint64_t seed = 2024;
        int n_test = 50;
        int pool_relevant = 50;
        int pool_distractor = 50;
    } tasks;
    ExperimentConfig experiments;
    std::vector<std::string> experiment_names = {"locality"};
    struct Output {
        std::string dir = "runs";
    } output;
};

RunConfig parse_run_config(const std::string& json_text);  // ConfigError
RunConfig load_run_config(const std::string& path);        // DataError on IO

// canonical JSON with every field filled, fixed key order; ends with '\n'
std::string resolved_config_json(const RunConfig& cfg);

// content hash of the resolved config, 12 hex chars
std::string config_hash(const RunConfig& cfg);

// creates <output.dir>/<subcommand>-<hash>-<utc timestamp>[ -N ] and writes
// config.json inside; returns the directory path
std::string make_run_dir(const RunConfig& cfg, const std::string& subcommand);

}  // namespace maskdiff
