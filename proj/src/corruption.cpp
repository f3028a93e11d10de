#include <algorithm>

#include "maskdiff/corruption.hpp"
#include "maskdiff/errors.hpp"

namespace maskdiff {

static void validate_prompt_answer(const PromptAnswer& pa) {
    MD_CHECK(!pa.a.empty(), "answer must have at least one token");
    for (int32_t t : pa.q) MD_CHECK(t != kMaskId, "prompt already contains a mask token");
    for (int32_t t : pa.a) MD_CHECK(t != kMaskId, "answer already contains a mask token");
}

MaskingDraw noise_answer(const PromptAnswer& pa, double p, Rng& rng) {
    validate_prompt_answer(pa);
    MD_CHECK(p > 0.0 && p <= 1.0, "masking probability must lie in (0,1]");
    MaskingDraw d;
    d.p = p;
    size_t n = pa.a.size();
    for (;;) {  // redraw all-clear patterns so 1/n_m stays defined downstream
        d.u.assign(n, 0);
        int64_t hits = 0;
        for (size_t j = 0; j < n; j++) {
            d.u[j] = rng.bernoulli(p) ? 1 : 0;
            hits += d.u[j];
        }
        if (hits > 0) break;
    }
    d.noised = pa.a;
    for (size_t j = 0; j < n; j++)
        if (d.u[j]) d.noised[j] = kMaskId;
    return d;
}

std::pair<int64_t, int64_t> sample_pair_lengths(int64_t n_q, int64_t n_a, int64_t n_ctx,
                                                int64_t max_masks, Rng& rng) {
    int64_t room = n_ctx - (n_q + n_a);
    int64_t bound = std::min(room, max_masks);
    MD_CHECK(bound >= 1, "mask-length range [0," + std::to_string(bound) +
                             "] cannot supply two distinct draws");
    auto draw = rng.sample_without_replacement(bound + 1, 2);  // values 0..bound
    return {draw[0], draw[1]};
}

MaskedPair assemble_pair(const PromptAnswer& pa, const MaskingDraw& draw, int64_t l1, int64_t l2,
                         int64_t n_ctx) {
    validate_prompt_answer(pa);
    MD_CHECK(draw.u.size() == pa.a.size() && draw.noised.size() == pa.a.size(),
             "masking draw does not match the answer length");
    MD_CHECK(l1 >= 0 && l2 >= 0, "appended mask counts must be nonnegative");
    MD_CHECK(l1 != l2, "the two views need distinct appended-mask counts");

    MaskedPair mp;
    mp.n_q = (int64_t)pa.q.size();
    mp.n_a = (int64_t)pa.a.size();
    mp.l1 = l1;
    mp.l2 = l2;
    mp.p = draw.p;
    for (uint8_t bit : draw.u) mp.n_m += bit;
    MD_CHECK(mp.n_m >= 1, "masking draw left the answer untouched");

    int64_t len = mp.n_q + mp.n_a + std::max(l1, l2);
    if (len > n_ctx)
        throw DataError("context overflow: corrupted example needs " + std::to_string(len) +
                        " tokens but n_ctx=" + std::to_string(n_ctx));

    mp.labels = pa.q;
    mp.labels.insert(mp.labels.end(), pa.a.begin(), pa.a.end());

    auto build = [&](int64_t l) {
        std::vector<int32_t> x = pa.q;
        x.insert(x.end(), draw.noised.begin(), draw.noised.end());
        x.insert(x.end(), (size_t)l, kMaskId);
        x.insert(x.end(), (size_t)(len - (int64_t)x.size()), kEosId);
        return x;
    };
    mp.x1 = build(l1);
    mp.x2 = build(l2);
    return mp;
}

MaskedPair corrupt_example(const PromptAnswer& pa, double p_l, double p_u, int64_t n_ctx,
                           int64_t max_masks, Rng& rng) {
    MD_CHECK(p_l > 0.0 && p_l <= p_u && p_u <= 1.0, "masking bounds must satisfy 0 < p_l <= p_u <= 1");
    double p = p_l == p_u ? p_l : rng.uniform(p_l, p_u);
    MaskingDraw draw = noise_answer(pa, p, rng);
    auto [l1, l2] =
        sample_pair_lengths((int64_t)pa.q.size(), (int64_t)pa.a.size(), n_ctx, max_masks, rng);
    return assemble_pair(pa, draw, l1, l2, n_ctx);
}

}  // namespace maskdiff
