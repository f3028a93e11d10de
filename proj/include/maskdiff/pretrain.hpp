#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maskdiff/corruption.hpp"
#include "maskdiff/model.hpp"
#include "maskdiff/optimizer.hpp"
#include "maskdiff/taskgen.hpp"

namespace maskdiff {

// synthetic pretraining streams: episodes of same-rule few-shot examples,
// concatenated whole, eos-padded to seq_len
struct CorpusConfig {
    int64_t seq_len = 256;
    int64_t n_sequences = 512;
    int64_t episode_min = 2;  // examples per episode before the rule switches
    int64_t episode_max = 6;
    uint64_t seed = 0;
};

std::vector<std::vector<int32_t>> build_corpus(const Vocab& vocab, const Wordlists& lists,
                                               const CorpusConfig& cfg);

struct PretrainConfig {
    AdamConfig adam;
    int64_t steps = 300;
    int64_t batch_size = 8;
    double p_min = 0.05, p_max = 0.95;  // per-sequence masking probability
    uint64_t seed = 0;
    std::string log_csv;  // step,loss,grad_norm; empty -> not written
};

struct PretrainStepLog {
    int64_t step = 0;
    double loss = 0, grad_norm = 0;
};

// diffusion mode trains pretrain_loss on Bernoulli-masked sequences; causal
// mode trains ar_loss on the clean streams. Mutates the model in place.
std::vector<PretrainStepLog> pretrain(Model& model,
                                      std::span<const std::vector<int32_t>> corpus,
                                      const PretrainConfig& cfg);

// fine-tuning pairs from rendered task prompts: q runs through "Answer:[",
// a is the gold label token. n_per_task questions, examples drawn per prompt.
std::vector<PromptAnswer> finetune_pairs(const Vocab& vocab, std::span<const TaskData> tasks,
                                         int n_relevant, int n_distractors, int n_per_task,
                                         uint64_t seed);

}  // namespace maskdiff
