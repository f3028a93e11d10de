#include <cstdio>
#include <fstream>

#include "maskdiff/errors.hpp"
#include "maskdiff/maloss.hpp"

namespace maskdiff {

static void validate_pair(const MaskedPair& pair) {
    MD_CHECK(pair.n_m >= 1, "pair has no masked answer tokens");
    MD_CHECK(pair.x1.size() == pair.x2.size(), "pair views differ in length");
    MD_CHECK(pair.p > 0.0 && pair.p <= 1.0, "pair carries an invalid masking probability");
    MD_CHECK(pair.n_q + pair.n_a <= (int64_t)pair.x1.size(), "answer region exceeds the views");
}

std::vector<int32_t> masked_answer_rows(const MaskedPair& pair) {
    validate_pair(pair);
    std::vector<int32_t> rows;
    for (int64_t j = pair.n_q; j < pair.n_q + pair.n_a; j++) {
        bool m1 = pair.x1[(size_t)j] == kMaskId;
        bool m2 = pair.x2[(size_t)j] == kMaskId;
        MD_CHECK(m1 == m2, "views disagree on the answer mask pattern");
        if (m1) rows.push_back((int32_t)j);
    }
    MD_CHECK((int64_t)rows.size() == pair.n_m, "stored n_m does not match the views");
    return rows;
}

static void check_row_logits(const Tensor& l, const MaskedPair& pair) {
    MD_CHECK(l.rank() == 2 && l.dim(0) == pair.n_m, "expected one logit row per masked token");
}

Tensor ce_term_rows(const Tensor& logits1, const Tensor& logits2, const MaskedPair& pair) {
    auto rows = masked_answer_rows(pair);
    check_row_logits(logits1, pair);
    check_row_logits(logits2, pair);
    std::vector<int32_t> idx(rows.size()), targets(rows.size());
    for (size_t i = 0; i < rows.size(); i++) {
        idx[i] = (int32_t)i;
        targets[i] = pair.labels[(size_t)rows[i]];
    }
    Tensor s = add(masked_cross_entropy_sum(logits1, targets, idx),
                   masked_cross_entropy_sum(logits2, targets, idx));
    return scalar_mul(s, 1.0 / (2.0 * pair.p * (double)pair.n_m));
}

Tensor tv_term_rows(const Tensor& logits1, const Tensor& logits2, const MaskedPair& pair) {
    check_row_logits(logits1, pair);
    check_row_logits(logits2, pair);
    Tensor d = abs(sub(softmax(logits1), softmax(logits2)));
    // half-L1 per row, then the p/n_m prefactor
    return scalar_mul(sum(d), pair.p / (2.0 * (double)pair.n_m));
}

LossBreakdown ma_loss_rows(const Tensor& logits1, const Tensor& logits2, const MaskedPair& pair,
                           const LossConfig& cfg) {
    MD_CHECK(cfg.alpha >= 0.0 && cfg.beta >= 0.0, "loss weights must be nonnegative");
    LossBreakdown lb;
    lb.ce = ce_term_rows(logits1, logits2, pair);
    lb.tv = tv_term_rows(logits1, logits2, pair);
    // beta == 0 must reproduce the plain weighted CE bit for bit, so the tv
    // graph is kept out of `total` entirely in that case
    lb.total = cfg.beta == 0.0 ? scalar_mul(lb.ce, cfg.alpha)
                               : add(scalar_mul(lb.ce, cfg.alpha), scalar_mul(lb.tv, cfg.beta));
    return lb;
}

static Tensor gather_pair_rows(const Tensor& logits, const MaskedPair& pair,
                               std::span<const int32_t> rows) {
    MD_CHECK(logits.rank() == 2 && logits.dim(0) == (int64_t)pair.x1.size(),
             "expected one logit row per input token");
    return gather_rows(logits, rows);
}

Tensor ce_term(const Tensor& logits1, const Tensor& logits2, const MaskedPair& pair) {
    auto rows = masked_answer_rows(pair);
    return ce_term_rows(gather_pair_rows(logits1, pair, rows),
                        gather_pair_rows(logits2, pair, rows), pair);
}

Tensor tv_term(const Tensor& logits1, const Tensor& logits2, const MaskedPair& pair) {
    auto rows = masked_answer_rows(pair);
    return tv_term_rows(gather_pair_rows(logits1, pair, rows),
                        gather_pair_rows(logits2, pair, rows), pair);
}

LossBreakdown ma_loss(const Tensor& logits1, const Tensor& logits2, const MaskedPair& pair,
                      const LossConfig& cfg) {
    auto rows = masked_answer_rows(pair);
    return ma_loss_rows(gather_pair_rows(logits1, pair, rows),
                        gather_pair_rows(logits2, pair, rows), pair, cfg);
}

int64_t curriculum_max_masks(int64_t step, const LossConfig& cfg) {
    MD_CHECK(step >= 0, "curriculum step must be nonnegative");
    MD_CHECK(cfg.max_masks >= 1 && cfg.curriculum_steps >= 1, "bad curriculum bounds");
    if (step == 0) return 1;
    if (step >= cfg.curriculum_steps) return cfg.max_masks;
    if (cfg.curriculum_steps == 1) return cfg.max_masks;
    // linear from 1 (step 0) to max_masks (curriculum_steps), floored
    return 1 + (step - 1) * (cfg.max_masks - 1) / (cfg.curriculum_steps - 1);
}

static void validate_finetune_config(const FinetuneConfig& cfg) {
    const LossConfig& l = cfg.loss;
    if (!(l.p_l > 0.0 && l.p_l <= l.p_u && l.p_u <= 1.0))
        throw ConfigError("masking bounds must satisfy 0 < p_l <= p_u <= 1");
    if (l.alpha < 0.0 || l.beta < 0.0) throw ConfigError("loss weights must be nonnegative");
    if (l.max_masks < 1 || l.curriculum_steps < 1 || l.n_ctx < 2)
        throw ConfigError("bad curriculum/context bounds");
    if (cfg.steps < 1 || cfg.grad_accum < 1 || cfg.batch_size < 1)
        throw ConfigError("steps, grad_accum, and batch_size must be positive");
}

std::vector<FinetuneStepLog> finetune(Model& model, const std::vector<PromptAnswer>& data,
                                      const FinetuneConfig& cfg) {
    MD_CHECK(model.config.mode == ModelMode::diffusion_bidirectional,
             "fine-tuning requires the diffusion model");
    validate_finetune_config(cfg);
    if (data.empty()) throw DataError("fine-tuning dataset is empty");
    for (size_t i = 0; i < data.size(); i++) {
        int64_t need = (int64_t)(data[i].q.size() + data[i].a.size()) + 1;
        if (need > cfg.loss.n_ctx)
            throw DataError("example " + std::to_string(i) + " needs " + std::to_string(need) +
                            " tokens but n_ctx=" + std::to_string(cfg.loss.n_ctx));
        if (data[i].a.empty()) throw DataError("example " + std::to_string(i) + " has no answer");
    }

    std::ofstream log;
    if (!cfg.log_csv.empty()) {
        log.open(cfg.log_csv);
        if (!log.good()) throw DataError("cannot write training log: " + cfg.log_csv);
        log << "step,ce,tv,total,lr,max_masks_current\n";
    }

    Adam opt(model, cfg.adam);
    Rng base(cfg.seed);
    int64_t cursor = 0;
    int64_t per_step = cfg.grad_accum * cfg.batch_size;
    double grad_scale = 1.0 / (double)per_step;

    std::vector<FinetuneStepLog> out;
    out.reserve((size_t)cfg.steps);
    for (int64_t step = 0; step < cfg.steps; step++) {
        int64_t cap = curriculum_max_masks(step, cfg.loss);
        FinetuneStepLog row;
        row.step = step;
        row.lr = cfg.adam.lr;
        row.max_masks_current = cap;
        for (int64_t e = 0; e < per_step; e++) {
            const PromptAnswer& pa = data[(size_t)(cursor % (int64_t)data.size())];
            Rng rng = base.fork("ft:" + std::to_string(cursor));
            cursor++;
            MaskedPair pair = corrupt_example(pa, cfg.loss.p_l, cfg.loss.p_u, cfg.loss.n_ctx,
                                              cap, rng);
            auto rows = masked_answer_rows(pair);
            Tensor l1 = model.forward_rows(pair.x1, rows);
            Tensor l2 = model.forward_rows(pair.x2, rows);
            LossBreakdown lb = ma_loss_rows(l1, l2, pair, cfg.loss);
            row.ce += lb.ce.item();
            row.tv += lb.tv.item();
            row.total += lb.total.item();
            backward(scalar_mul(lb.total, grad_scale));
        }
        row.ce /= (double)per_step;
        row.tv /= (double)per_step;
        row.total /= (double)per_step;
        opt.step(model);
        if (log.is_open()) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "%lld,%.6f,%.6f,%.6f,%.6f,%lld\n",
                          (long long)row.step, row.ce, row.tv, row.total, row.lr,
                          (long long)row.max_masks_current);
            log << buf;
        }
        out.push_back(row);
    }
    return out;
}

}  // namespace maskdiff
