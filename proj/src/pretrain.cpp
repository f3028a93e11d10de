#include "maskdiff/pretrain.hpp"

#include <cstdio>
#include <fstream>

#include "maskdiff/errors.hpp"

namespace maskdiff {

// ---------------------------------------------------------------------------
// corpus

std::vector<std::vector<int32_t>> build_corpus(const Vocab& vocab, const Wordlists& lists,
                                               const CorpusConfig& cfg) {
    if (cfg.seq_len < 1) throw ConfigError("corpus seq_len must be >= 1");
    if (cfg.n_sequences < 1) throw ConfigError("corpus n_sequences must be >= 1");
    if (cfg.episode_min < 1 || cfg.episode_max < cfg.episode_min)
        throw ConfigError("corpus episode bounds must satisfy 1 <= min <= max");

    constexpr int kRules = kNumWordTasks + kNumNumberTasks;
    Rng rng(cfg.seed);
    std::vector<std::vector<int32_t>> out;
    out.reserve((size_t)cfg.n_sequences);
    for (int64_t s = 0; s < cfg.n_sequences; s++) {
        std::vector<int32_t> seq;
        bool room = true;
        while (room) {
            int rule = (int)rng.uniform_int(0, kRules - 1);
            int64_t m = rng.uniform_int(cfg.episode_min, cfg.episode_max);
            for (int64_t i = 0; i < m && room; i++) {
                FewShotExample ex =
                    rule < kNumWordTasks
                        ? gen_word_example(WordTask(rule), lists, rng)
                        : gen_number_example(NumberTask(rule - kNumWordTasks), rng);
                auto toks = vocab.tokenize(format_example(ex));
                if ((int64_t)(seq.size() + toks.size()) > cfg.seq_len)
                    room = false;  // keep examples whole; pad the remainder
                else
                    seq.insert(seq.end(), toks.begin(), toks.end());
            }
        }
        if (seq.empty())
            throw DataError("corpus seq_len " + std::to_string(cfg.seq_len) +
                            " cannot fit a single example");
        seq.resize((size_t)cfg.seq_len, vocab.eos_id);
        out.push_back(std::move(seq));
    }
    return out;
}

// ---------------------------------------------------------------------------
// training loop

std::vector<PretrainStepLog> pretrain(Model& model,
                                      std::span<const std::vector<int32_t>> corpus,
                                      const PretrainConfig& cfg) {
    MD_CHECK(!corpus.empty(), "pretrain needs a non-empty corpus");
    MD_CHECK(cfg.steps >= 1 && cfg.batch_size >= 1, "pretrain steps/batch_size must be >= 1");
    MD_CHECK(cfg.p_min > 0.0 && cfg.p_min <= cfg.p_max && cfg.p_max <= 1.0,
             "masking probabilities must satisfy 0 < p_min <= p_max <= 1");
    bool diffusion = model.config.mode == ModelMode::diffusion_bidirectional;

    std::ofstream log;
    if (!cfg.log_csv.empty()) {
        log.open(cfg.log_csv);
        if (!log.good()) throw DataError("cannot write training log: " + cfg.log_csv);
        log << "step,loss,grad_norm\n";
    }

    Rng rng(cfg.seed);
    Adam opt(model, cfg.adam);
    std::vector<PretrainStepLog> logs;
    logs.reserve((size_t)cfg.steps);
    for (int64_t step = 0; step < cfg.steps; step++) {
        Tensor loss;
        if (diffusion) {
            PretrainBatch batch;
            for (int64_t b = 0; b < cfg.batch_size; b++) {
                const auto& clean = corpus[(size_t)rng.uniform_int(0, (int64_t)corpus.size() - 1)];
                double p = rng.uniform(cfg.p_min, cfg.p_max);
                batch.seqs.push_back(mask_tokens(clean, p, kMaskId, rng));
            }
            loss = pretrain_loss(model, batch);
        } else {
            Tensor total;
            for (int64_t b = 0; b < cfg.batch_size; b++) {
                const auto& clean = corpus[(size_t)rng.uniform_int(0, (int64_t)corpus.size() - 1)];
                Tensor l = ar_loss(model, clean);
                total = total.defined() ? add(total, l) : l;
            }
            loss = scalar_mul(total, 1.0 / (double)cfg.batch_size);
        }
        backward(loss);
        double gnorm = opt.step(model);

        PretrainStepLog rec{step, loss.value_at(0), gnorm};
        logs.push_back(rec);
        if (log.is_open()) {
            char line[128];
            std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g\n", (long long)rec.step, rec.loss,
                          rec.grad_norm);
            log << line;
        }
    }
    return logs;
}

// ---------------------------------------------------------------------------
// fine-tuning data

std::vector<PromptAnswer> finetune_pairs(const Vocab& vocab, std::span<const TaskData> tasks,
                                         int n_relevant, int n_distractors, int n_per_task,
                                         uint64_t seed) {
    MD_CHECK(n_per_task >= 1, "finetune_pairs needs n_per_task >= 1");
    std::vector<PromptAnswer> out;
    for (const auto& task : tasks) {
        if ((int)task.relevant_pool.size() < n_relevant ||
            (int)task.distractor_pool.size() < n_distractors)
            throw DataError("task " + task.spec.id() + " pools too small for finetune_pairs");
        if ((int)task.test.size() < n_per_task)
            throw DataError("task " + task.spec.id() + " has fewer than " +
                            std::to_string(n_per_task) + " test questions");
        Rng rng = Rng(seed).fork("pairs:" + task.spec.id());
        for (int q = 0; q < n_per_task; q++) {
            PromptLayout lay;
            auto rel = rng.sample_without_replacement((int64_t)task.relevant_pool.size(),
                                                      n_relevant);
            auto dis = rng.sample_without_replacement((int64_t)task.distractor_pool.size(),
                                                      n_distractors);
            for (int64_t i : rel) lay.relevant.push_back(task.relevant_pool[(size_t)i]);
            for (int64_t i : dis) lay.distractors.push_back(task.distractor_pool[(size_t)i]);
            lay.arrangement = Arrangement::mixed_random;
            lay.question = task.test[(size_t)q];
            lay.convention = AnswerConvention::open_bracket_plus_masks;
            lay.extra_masks = 0;  // prompt ends right after "Answer:["
            Prompt p = layout_prompt(lay, vocab, rng);
            PromptAnswer pa;
            pa.q = p.ids;
            pa.a = {vocab.id(std::string(1, p.gold))};
            out.push_back(std::move(pa));
        }
    }
    return out;
}

}  // namespace maskdiff
