#pragma once

#include <string>
#include <vector>

#include "maskdiff/corruption.hpp"
#include "maskdiff/model.hpp"
#include "maskdiff/optimizer.hpp"
#include "maskdiff/tensor.hpp"

namespace maskdiff {

struct LossConfig {
    double alpha = 0.1;  // cross-entropy weight
    double beta = 1.0;   // consistency (total-variation) weight
    double p_l = 0.2, p_u = 0.8;
    int64_t max_masks = 128;
    int64_t curriculum_steps = 500;
    int64_t n_ctx = 768;
};

struct LossBreakdown {
    Tensor ce, tv, total;  // scalars; total carries the graph used for backward
};

// masked answer positions of a pair, ascending (identical in both views)
std::vector<int32_t> masked_answer_rows(const MaskedPair& pair);

// terms over full [len(x_i), vocab] logits:
//   ce = -(1/(2 p n_m)) sum_i sum_{masked j} log softmax(logits_i[j])[labels_j]
//   tv = (p/n_m) sum_{masked j} half-L1(softmax(logits1[j]), softmax(logits2[j]))
Tensor ce_term(const Tensor& logits1, const Tensor& logits2, const MaskedPair& pair);
Tensor tv_term(const Tensor& logits1, const Tensor& logits2, const MaskedPair& pair);
LossBreakdown ma_loss(const Tensor& logits1, const Tensor& logits2, const MaskedPair& pair,
                      const LossConfig& cfg);

// same values over logits restricted to masked_answer_rows(pair); the training
// loop pairs these with forward_rows so the vocab projection skips every
// unmasked position (bit-identical to the full-logits versions)
Tensor ce_term_rows(const Tensor& logits1, const Tensor& logits2, const MaskedPair& pair);
Tensor tv_term_rows(const Tensor& logits1, const Tensor& logits2, const MaskedPair& pair);
LossBreakdown ma_loss_rows(const Tensor& logits1, const Tensor& logits2, const MaskedPair& pair,
                           const LossConfig& cfg);

// appended-mask cap for an optimizer step: 1 at step 0, linear (floored) up to
// max_masks at curriculum_steps, constant afterwards
int64_t curriculum_max_masks(int64_t step, const LossConfig& cfg);

struct FinetuneConfig {
    LossConfig loss;
    AdamConfig adam;
    int64_t steps = 100;
    int64_t grad_accum = 8;  // examples accumulated per optimizer step = grad_accum * batch_size
    int64_t batch_size = 2;
    uint64_t seed = 0;
    std::string log_csv;  // per-step training log; empty -> not written
};

struct FinetuneStepLog {
    int64_t step = 0;
    double ce = 0, tv = 0, total = 0, lr = 0;
    int64_t max_masks_current = 0;
};

// Algorithm: per example draw p ~ U(p_l,p_u), noise the answer, draw distinct
// appended-mask lengths capped by the curriculum, run both views, combine the
// losses, accumulate mean gradients, clip, step. Mutates the model in place.
std::vector<FinetuneStepLog> finetune(Model& model, const std::vector<PromptAnswer>& data,
                                      const FinetuneConfig& cfg);

}  // namespace maskdiff
