#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "maskdiff/rng.hpp"

namespace maskdiff {

// token-id convention shared across the project (the vocab pins these)
constexpr int32_t kEosId = 0;
constexpr int32_t kMaskId = 1;

struct PromptAnswer {
    std::vector<int32_t> q;
    std::vector<int32_t> a;  // at least one token; neither side may contain masks
};

// one Bernoulli noising of the answer: noised = (1-u)*a + u*mask
struct MaskingDraw {
    double p = 0;
    std::vector<uint8_t> u;       // 1 -> position masked; at least one set
    std::vector<int32_t> noised;  // same length as the answer
};

// two views of the same corrupted example that differ only in the number of
// appended masks; the shorter one is eos-padded so both have equal length
struct MaskedPair {
    std::vector<int32_t> x1, x2;
    std::vector<int32_t> labels;  // q + a, the clean targets
    int64_t n_q = 0, n_a = 0;     // answer index set is [n_q, n_q + n_a)
    int64_t l1 = 0, l2 = 0;       // appended mask counts, always distinct
    int64_t n_m = 0;              // masked answer tokens, >= 1
    double p = 0;
};

// masks each answer token independently with probability p; all-clear draws
// are redrawn so at least one answer token is always masked
MaskingDraw noise_answer(const PromptAnswer& pa, double p, Rng& rng);

// l1 != l2, uniform without replacement on [0, min(n_ctx-(n_q+n_a), max_masks)]
std::pair<int64_t, int64_t> sample_pair_lengths(int64_t n_q, int64_t n_a, int64_t n_ctx,
                                                int64_t max_masks, Rng& rng);

MaskedPair assemble_pair(const PromptAnswer& pa, const MaskingDraw& draw, int64_t l1, int64_t l2,
                         int64_t n_ctx);

// full pipeline for one training example: p ~ U(p_l, p_u), noise, lengths, assemble
MaskedPair corrupt_example(const PromptAnswer& pa, double p_l, double p_u, int64_t n_ctx,
                           int64_t max_masks, Rng& rng);

}  // namespace maskdiff
