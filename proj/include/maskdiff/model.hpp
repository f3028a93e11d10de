#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "maskdiff/rng.hpp"
#include "maskdiff/tensor.hpp"

namespace maskdiff {

enum class ModelMode { diffusion_bidirectional, causal_ar };

struct ModelConfig {
    ModelMode mode = ModelMode::diffusion_bidirectional;
    int64_t n_layers = 4;
    int64_t d_model = 128;
    int64_t n_heads = 4;
    int64_t d_ff = 512;
    int64_t n_ctx = 768;
    int64_t vocab_size = 0;  // must be set; ids 0/1 are reserved for eos/mask
    Dtype dtype = Dtype::f32;
    uint64_t seed = 0;
};

// closed form; the checkpoint size test and the optimizer slot layout rely on it
int64_t param_count(const ModelConfig& cfg);

struct NamedParam {
    std::string name;
    Tensor tensor;
};

// pre-LN transformer; one weight matrix per attention head so the whole
// forward pass is expressible with plain 2-d matmuls.
struct Model {
    ModelConfig config;
    std::vector<NamedParam> params;  // declaration order, frozen for checkpoints

    Tensor& param(std::string_view name);
    const Tensor& param(std::string_view name) const;

    // token embedding rows for a sequence (graph leaf for attribution work)
    Tensor embed(std::span<const int32_t> ids) const;

    // trunk after the embedding; x is [len, d_model], row index = position.
    // rows non-empty -> logits only for those rows (in the given order).
    Tensor forward_from_embeddings(const Tensor& x, std::span<const int32_t> rows = {}) const;

    Tensor forward(std::span<const int32_t> ids) const;  // [len, vocab] logits
    Tensor forward_rows(std::span<const int32_t> ids, std::span<const int32_t> rows) const;
};

Model init_model(const ModelConfig& cfg);

// one masked view of one clean sequence
struct PretrainSeq {
    std::vector<int32_t> clean;
    std::vector<int32_t> masked;
    std::vector<uint8_t> is_masked;
    double p = 0;  // masking probability the indicators were drawn with
};

struct PretrainBatch {
    std::vector<PretrainSeq> seqs;
};

// Bernoulli(p) per token, redrawn until at least one position is masked
PretrainSeq mask_tokens(std::span<const int32_t> clean, double p, int32_t mask_id, Rng& rng);

// mean over sequences of (1/p) * (1/n_masked) * sum_{masked j} CE(logits_j, clean_j)
Tensor pretrain_loss(const Model& model, const PretrainBatch& batch);

// mean next-token cross-entropy over positions 1..len-1 (causal mode only)
Tensor ar_loss(const Model& model, std::span<const int32_t> tokens);

const char* model_mode_name(ModelMode m);

}  // namespace maskdiff
