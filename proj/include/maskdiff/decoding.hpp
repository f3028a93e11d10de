#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maskdiff/model.hpp"

namespace maskdiff {

enum class DecodeStrategy { random, confidence };
const char* decode_strategy_name(DecodeStrategy s);

struct DecodeConfig {
    int64_t steps = 1;
    DecodeStrategy strategy = DecodeStrategy::random;
    uint64_t seed = 0;  // only the random strategy consumes randomness
};

// one originally-masked position, recorded when it was filled
struct UnmaskRecord {
    int64_t step = 0;
    int64_t position = 0;
    int32_t token = 0;
    double confidence = 0;  // probability of the chosen token at fill time
    double entropy = 0;     // nats, full predictive distribution at fill time
};

struct DecodeDiagnostics {
    std::vector<UnmaskRecord> records;  // chronological; ascending position within a step
};

using DecodeResult = std::pair<std::vector<int32_t>, DecodeDiagnostics>;

// fills every masked position greedily from one forward pass. The mask token
// itself is never predicted, so decoded output is always mask-free.
DecodeResult decode_single_step(const Model& model, std::span<const int32_t> seq);

// unmasks in near-equal groups of ceil(remaining/steps_left) per step; the
// random strategy picks positions uniformly, the confidence strategy picks the
// highest current argmax probabilities (fresh forward pass each step; ties by
// lowest position). steps=1 reproduces decode_single_step exactly. A non-empty
// dump_csv receives step,position,rank,token,prob rows (top_k per position).
DecodeResult iterative_unmask(const Model& model, std::span<const int32_t> seq,
                              const DecodeConfig& cfg, const std::string& dump_csv = "",
                              int64_t dump_top_k = 5);

// max-probability / entropy / argmax at one predictive slot
struct SlotReading {
    double confidence = 0;
    double entropy = 0;
    int32_t token = 0;
};

// reading at the first masked position (the answer slot by convention)
SlotReading answer_confidence_entropy(const Model& model, std::span<const int32_t> ids);

// causal next-token reading after the last position (the autoregressive move)
SlotReading next_token_reading(const Model& model, std::span<const int32_t> ids);

}  // namespace maskdiff
