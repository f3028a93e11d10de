#include <cmath>
#include <fstream>

#include "json.hpp"
#include "maskdiff/corruption.hpp"
#include "maskdiff/errors.hpp"
#include "maskdiff/harness.hpp"

namespace maskdiff {

AttributionResult gradient_attribution(const Model& model, std::span<const int32_t> ids,
                                       int64_t answer_slot,
                                       std::span<const std::pair<int64_t, int64_t>> example_spans) {
    int64_t len = (int64_t)ids.size();
    MD_CHECK(answer_slot >= 0 && answer_slot < len, "answer slot out of range");
    for (auto [b, e] : example_spans)
        MD_CHECK(b >= 0 && b <= e && e <= len, "example span out of range");

    // a fresh leaf per position: the scatter into the shared vocab table
    // would merge repeated tokens, and we want per-token scores
    Tensor x = model.embed(ids).clone();
    int32_t row = (int32_t)answer_slot;
    Tensor logits = model.forward_from_embeddings(x, std::span<const int32_t>(&row, 1));

    int64_t v = model.config.vocab_size;
    AttributionResult res;
    {
        auto flat = logits.values();
        for (int64_t j = 0; j < v; j++) {
            if (j == kMaskId) continue;
            if (res.predicted_token < 0 || flat[(size_t)j] > res.predicted_logit) {
                res.predicted_token = (int32_t)j;
                res.predicted_logit = flat[(size_t)j];
            }
        }
    }
    Tensor pick = Tensor::zeros({1, v}, model.config.dtype);
    pick.set_value_at(res.predicted_token, 1.0);
    backward(sum(mul(logits, pick)));

    auto g = x.grad_values();
    int64_t d = model.config.d_model;
    double total = 0.0;
    res.token_scores.resize((size_t)len);
    for (int64_t i = 0; i < len; i++) {
        double ss = 0.0;
        for (int64_t k = 0; k < d; k++) {
            double gv = g[(size_t)(i * d + k)];
            ss += gv * gv;
        }
        res.token_scores[(size_t)i] = std::sqrt(ss);
        total += res.token_scores[(size_t)i];
    }
    if (!std::isfinite(total) || total <= 0.0)
        throw NumericError("attribution: the prediction carries no gradient signal");
    for (auto& s : res.token_scores) s /= total;
    for (auto [b, e] : example_spans) {
        double acc = 0.0;
        for (int64_t i = b; i < e; i++) acc += res.token_scores[(size_t)i];
        res.example_scores.push_back(acc);
    }

    // the sweep above accumulated into every parameter as well; drop that
    for (const auto& np : model.params) {
        Tensor t = np.tensor;
        t.zero_grad();
    }
    return res;
}

MaskGradientTable mask_gradient_table(const Model& model, std::span<const int32_t> ids,
                                      int64_t answer_slot, int64_t last_n,
                                      bool exclude_answer_slot) {
    MD_CHECK(last_n >= 1, "last_n must be >= 1");
    AttributionResult attr = gradient_attribution(model, ids, answer_slot, {});

    MaskGradientTable t;
    double mask_sum = 0, non_sum = 0;
    std::vector<int64_t> non_positions;
    for (int64_t i = 0; i < (int64_t)ids.size(); i++) {
        if (ids[(size_t)i] == kMaskId) {
            if (exclude_answer_slot && i == answer_slot) continue;  // it is the target
            mask_sum += attr.token_scores[(size_t)i];
            t.n_mask++;
        } else {
            non_sum += attr.token_scores[(size_t)i];
            t.n_non_mask++;
            non_positions.push_back(i);
        }
    }
    double last_sum = 0;
    int64_t take = std::min<int64_t>(last_n, (int64_t)non_positions.size());
    for (int64_t i = (int64_t)non_positions.size() - take; i < (int64_t)non_positions.size(); i++) {
        last_sum += attr.token_scores[(size_t)non_positions[(size_t)i]];
        t.n_last++;
    }
    if (t.n_mask > 0) t.mask_mean = mask_sum / (double)t.n_mask;
    if (t.n_last > 0) t.last_non_mask_mean = last_sum / (double)t.n_last;
    if (t.n_non_mask > 0) t.non_mask_mean = non_sum / (double)t.n_non_mask;
    return t;
}

// fixed example subsets for one task: attribution varies the ordering, not
// the material
static void attribution_subsets(const TaskData& task, const ExperimentConfig& cfg,
                                std::vector<FewShotExample>& rel,
                                std::vector<FewShotExample>& dis) {
    if ((int)task.relevant_pool.size() < cfg.n_relevant ||
        (int)task.distractor_pool.size() < cfg.n_distractors)
        throw DataError("pools of " + task.spec.id() + " are too small for attribution");
    Rng sel = Rng(cfg.seed).fork("attr-sel:" + task.spec.id());
    auto pick = [](const std::vector<FewShotExample>& pool, int n, Rng r) {
        std::vector<int64_t> idx(pool.size());
        for (size_t i = 0; i < idx.size(); i++) idx[i] = (int64_t)i;
        r.shuffle(idx);
        std::vector<FewShotExample> out;
        for (int i = 0; i < n; i++) out.push_back(pool[(size_t)idx[(size_t)i]]);
        return out;
    };
    rel = pick(task.relevant_pool, cfg.n_relevant, sel.fork("rel"));
    dis = pick(task.distractor_pool, cfg.n_distractors, sel.fork("dis"));
}

AttributionSummary run_attribution(const Model& model, const Vocab& vocab, const TaskData& task,
                                   const ExperimentConfig& cfg,
                                   const std::string& dump_jsonl_path) {
    validate_experiment_config(cfg);
    int n_q = std::min<int>(cfg.attr_questions, (int)task.test.size());
    MD_CHECK(n_q >= 1, "attribution needs at least one test question");

    std::vector<FewShotExample> rel, dis;
    attribution_subsets(task, cfg, rel, dis);

    std::ofstream dump;
    if (!dump_jsonl_path.empty()) {
        dump.open(dump_jsonl_path, std::ios::binary);
        if (!dump) throw DataError("cannot open for writing: " + dump_jsonl_path);
    }

    AttributionSummary sum;
    sum.position_means.assign(rel.size() + dis.size(), 0.0);
    Rng orders = Rng(cfg.seed).fork("attr-order:" + task.spec.id());
    for (int o = 0; o < cfg.attr_orderings; o++) {
        uint64_t arrange_seed = orders.fork((uint64_t)o).seed();
        for (int qi = 0; qi < n_q; qi++) {
            PromptLayout pl;
            pl.relevant = rel;
            pl.distractors = dis;
            pl.arrangement = Arrangement::mixed_random;
            pl.question = task.test[(size_t)qi];
            pl.question_position = 1.0;
            Rng arr(arrange_seed);
            Prompt p = layout_prompt(pl, vocab, arr, model.config.n_ctx);
            AttributionResult attr =
                gradient_attribution(model, p.ids, p.answer_slot, p.example_spans);
            for (size_t i = 0; i < attr.example_scores.size(); i++)
                sum.position_means[i] += attr.example_scores[i];
            sum.n_prompts++;
            if (dump.is_open()) {
                nlohmann::json j;
                j["task"] = task.spec.id();
                j["ordering"] = o;
                j["question"] = qi;
                j["predicted"] = attr.predicted_token;
                j["gold"] = std::string(1, p.gold);
                j["example_scores"] = attr.example_scores;
                dump << j.dump() << "\n";
            }
        }
    }
    for (auto& m : sum.position_means) m /= (double)sum.n_prompts;
    return sum;
}

MaskGradientTable run_mask_gradient_table(const Model& model, const Vocab& vocab,
                                          const TaskData& task, const ExperimentConfig& cfg,
                                          int extra_masks) {
    validate_experiment_config(cfg);
    MD_CHECK(extra_masks >= 1, "the table protocol appends at least one mask");
    int n_q = std::min<int>(cfg.attr_questions, (int)task.test.size());
    MD_CHECK(n_q >= 1, "need at least one test question");

    std::vector<FewShotExample> rel, dis;
    attribution_subsets(task, cfg, rel, dis);

    MaskGradientTable mean;
    for (int qi = 0; qi < n_q; qi++) {
        PromptLayout pl;
        pl.relevant = rel;
        pl.distractors = dis;
        pl.block_position = cfg.base_position;
        pl.question = task.test[(size_t)qi];
        pl.extra_masks = extra_masks;  // trailing scaffold after the closed bracket
        Rng arr(cfg.seed);
        Prompt p = layout_prompt(pl, vocab, arr, model.config.n_ctx);
        MaskGradientTable t = mask_gradient_table(model, p.ids, p.answer_slot);
        if (qi == 0) {
            mean.n_mask = t.n_mask;
            mean.n_last = t.n_last;
            mean.n_non_mask = t.n_non_mask;
        }
        MD_CHECK(t.n_mask == mean.n_mask && t.n_non_mask == mean.n_non_mask,
                 "prompt geometry must match across questions");
        mean.mask_mean += t.mask_mean;
        mean.last_non_mask_mean += t.last_non_mask_mean;
        mean.non_mask_mean += t.non_mask_mean;
    }
    mean.mask_mean /= n_q;
    mean.last_non_mask_mean /= n_q;
    mean.non_mask_mean /= n_q;
    return mean;
}

}  // namespace maskdiff
