#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "maskdiff/decoding.hpp"
#include "maskdiff/model.hpp"
#include "maskdiff/taskgen.hpp"

namespace maskdiff {

// ---------------------------------------------------------------------------
// experiments

enum class ExperimentKind {
    locality,
    mask_location,
    extra_mask_sweep,
    dots_ablation,
    distractor_sweep,
    unmask_recovery,
    locality_x_masks,
    attribution,
    mask_gradient_table,
    confidence_entropy,
    few_step_robustness,
    gain_vs_degradation,
};

const char* experiment_name(ExperimentKind k);
ExperimentKind experiment_from_name(std::string_view name);  // ConfigError

struct ExperimentConfig {
    std::vector<double> positions = {0.0, 0.25, 0.5, 0.75, 1.0};  // relevant block
    std::vector<double> question_positions = {0.0, 0.5, 1.0};
    std::vector<int> mask_counts = {1, 2, 4, 8, 16, 32, 64, 128};
    std::vector<int> dot_counts = {1, 2, 4, 8, 16, 32, 64, 128};
    std::vector<int> distractor_counts = {0, 10, 20, 40};
    std::vector<int> steps_grid = {1, 2, 4, 6, 40};
    int n_relevant = 10;
    int n_distractors = 40;
    int n_test = 20;  // questions per cell
    int n_seeds = 3;  // replicates; the `seed` column is the replicate index
    uint64_t seed = 0;
    DecodeConfig decode;          // decode settings where the sweep doesn't vary them
    double base_position = 1.0;   // block location when position is not the swept axis
    int distractor_extra_masks = 2;  // the "with masks" variant of the distractor sweep
    int attr_orderings = 10;
    int attr_questions = 20;
};

void validate_experiment_config(const ExperimentConfig& cfg);  // ConfigError

// one line of the results table; see kResultsCsvHeader for the column order
struct ResultRow {
    std::string experiment;
    std::string task_id;
    int64_t seed = 0;
    std::string cell_key;
    double cell_value = 0;
    int extra_masks = 0;
    int steps = 1;
    std::string strategy;
    double accuracy = 0;
    double ci_low = 0;
    double ci_high = 0;
    double confidence = 0;
    double entropy = 0;
};

inline constexpr const char* kResultsCsvHeader =
    "experiment,task_id,seed,cell_key,cell_value,extra_masks,steps,strategy,"
    "accuracy,ci_low,ci_high,confidence,entropy";

void write_results_csv(const std::string& path, std::span<const ResultRow> rows);
std::vector<ResultRow> read_results_csv(const std::string& path);  // DataError

// ---------------------------------------------------------------------------
// statistics

struct Interval {
    double mean = 0, lo = 0, hi = 0;
};

// normal-approximation binomial CI, clipped to [0,1]
Interval binomial_ci(int64_t correct, int64_t total, double z = 1.96);
// mean +- z * sd/sqrt(n) over per-task accuracies (sample sd), clipped
Interval cross_task_ci(std::span<const double> accuracies, double z = 1.96);

// (max - min) / max * 100; NumericError when max <= 0
double degradation_metric(std::span<const double> accuracies);

struct PearsonR {
    bool defined = false;  // needs >= 3 points and variance in both columns
    double r = 0;
};
PearsonR pearson_r(std::span<const double> x, std::span<const double> y);

// ---------------------------------------------------------------------------
// cell evaluation

// first character of the decoded token at the answer slot; '?' when the slot
// is out of range. Anything that is not the gold label counts as incorrect.
char extract_label(const Vocab& vocab, std::span<const int32_t> decoded, int64_t answer_slot);

struct CellResult {
    double accuracy = 0, ci_low = 0, ci_high = 0;
    double mean_confidence = 0, mean_entropy = 0;
    int64_t n_correct = 0, n_total = 0;
    std::vector<char> predicted;  // per prompt, extraction result
    std::vector<char> gold;
};

// every layout must share one example set; arrange_seed pins the (shared)
// arrangement draw and the decode seeds so reruns are bit-identical
CellResult evaluate_cell(const Model& model, const Vocab& vocab,
                         std::span<const PromptLayout> layouts, const DecodeConfig& decode,
                         uint64_t arrange_seed);

// one grid point of a sweep; the swept coordinate lands in (cell_key, cell_value)
struct CellSpec {
    std::string cell_key;
    double cell_value = 0;
    Arrangement arrangement = Arrangement::block_at_position;
    double block_position = 1.0;
    double question_position = 1.0;
    AnswerConvention convention = AnswerConvention::bracket_single_mask;
    int extra_masks = 0;
    int extra_dots = 0;
    int n_relevant = 10;
    int n_distractors = 40;
    DecodeConfig decode;
};

struct CellLayouts {
    std::vector<PromptLayout> layouts;
    uint64_t arrange_seed = 0;
};

// examples are drawn once per (task, replicate): cells of one sweep see the
// same pools in the same order, differing only in the swept coordinate
CellLayouts build_cell_layouts(const TaskData& task, const ExperimentConfig& cfg,
                               int64_t seed_index, const CellSpec& spec);

// cross product (task x replicate x cell), evaluated cell-parallel, emitted
// in deterministic (task, replicate, cell) order
std::vector<ResultRow> run_cells(const Model& model, const Vocab& vocab,
                                 std::span<const TaskData> tasks, const ExperimentConfig& cfg,
                                 std::string_view experiment, std::span<const CellSpec> cells);

// ---------------------------------------------------------------------------
// the named protocols

std::vector<ResultRow> run_locality_sweep(const Model&, const Vocab&, std::span<const TaskData>,
                                          const ExperimentConfig&);
std::vector<ResultRow> run_mask_location_sweep(const Model&, const Vocab&,
                                               std::span<const TaskData>,
                                               const ExperimentConfig&);
// dots=true sweeps dot_counts with the dots convention instead
std::vector<ResultRow> run_extra_mask_sweep(const Model&, const Vocab&, std::span<const TaskData>,
                                            const ExperimentConfig&, bool dots = false);
std::vector<ResultRow> run_distractor_sweep(const Model&, const Vocab&, std::span<const TaskData>,
                                            const ExperimentConfig&);
std::vector<ResultRow> run_unmask_recovery(const Model&, const Vocab&, std::span<const TaskData>,
                                           const ExperimentConfig&);
std::vector<ResultRow> run_few_step_robustness(const Model&, const Vocab&,
                                               std::span<const TaskData>,
                                               const ExperimentConfig&);
std::vector<ResultRow> run_locality_x_masks(const Model&, const Vocab&, std::span<const TaskData>,
                                            const ExperimentConfig&);
std::vector<ResultRow> run_confidence_entropy(const Model&, const Vocab&,
                                              std::span<const TaskData>,
                                              const ExperimentConfig&);

struct GainDegradation {
    struct PerTask {
        std::string task_id;
        double gain = 0;         // acc(25-shot) - acc(5-shot)
        double degradation = 0;  // acc(200 masks) - acc(1 mask)
    };
    std::vector<PerTask> per_task;
    PearsonR r;
    std::vector<ResultRow> rows;  // the raw accuracy cells behind the pairs
};
GainDegradation run_gain_vs_degradation(const Model&, const Vocab&, std::span<const TaskData>,
                                        const ExperimentConfig&);

// ---------------------------------------------------------------------------
// gradient attribution

struct AttributionResult {
    std::vector<double> token_scores;    // L2 norm of each token's embedding grad, sums to 1
    std::vector<double> example_scores;  // sum of member-token scores, per span
    int32_t predicted_token = -1;
    double predicted_logit = 0;
};

// scores the greedy answer-slot prediction's logit against every input
// embedding; spans aggregate tokens into in-context examples
AttributionResult gradient_attribution(const Model& model, std::span<const int32_t> ids,
                                       int64_t answer_slot,
                                       std::span<const std::pair<int64_t, int64_t>> example_spans);

struct MaskGradientTable {
    double mask_mean = 0;           // answer slot excluded by default
    double last_non_mask_mean = 0;  // last `last_n` non-mask tokens
    double non_mask_mean = 0;
    int64_t n_mask = 0, n_last = 0, n_non_mask = 0;
};

MaskGradientTable mask_gradient_table(const Model& model, std::span<const int32_t> ids,
                                      int64_t answer_slot, int64_t last_n = 50,
                                      bool exclude_answer_slot = true);

struct AttributionSummary {
    std::vector<double> position_means;  // mean example score per prompt slot
    int64_t n_prompts = 0;
};

// mixed orderings x test questions; optional JSON-lines dump, one prompt per line
AttributionSummary run_attribution(const Model& model, const Vocab& vocab, const TaskData& task,
                                   const ExperimentConfig& cfg,
                                   const std::string& dump_jsonl_path = "");

// table protocol: standard prompts with 50 extra masks appended, means over questions
MaskGradientTable run_mask_gradient_table(const Model& model, const Vocab& vocab,
                                          const TaskData& task, const ExperimentConfig& cfg,
                                          int extra_masks = 50);

}  // namespace maskdiff
