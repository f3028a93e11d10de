#include <cmath>

#include "maskdiff/errors.hpp"
#include "maskdiff/model.hpp"

namespace maskdiff {

const char* model_mode_name(ModelMode m) {
    return m == ModelMode::diffusion_bidirectional ? "diffusion" : "causal";
}

int64_t param_count(const ModelConfig& cfg) {
    int64_t d = cfg.d_model, v = cfg.vocab_size, ff = cfg.d_ff;
    // embedding + output projection (untied) + per layer: qkv (3*d*d across
    // heads), wo (d*d), two layer norms (4*d), mlp (2*d*ff) + final norm (2*d)
    return 2 * v * d + cfg.n_layers * (4 * d * d + 2 * d * ff + 4 * d) + 2 * d;
}

static void validate_config(const ModelConfig& cfg) {
    if (cfg.n_layers <= 0 || cfg.d_model <= 0 || cfg.n_heads <= 0 || cfg.d_ff <= 0 ||
        cfg.n_ctx <= 0)
        throw ConfigError("model dimensions must be positive");
    if (cfg.d_model % cfg.n_heads != 0)
        throw ConfigError("d_model must be divisible by n_heads");
    if (cfg.vocab_size < 2)
        throw ConfigError("vocab_size must cover the reserved eos/mask ids");
}

Model init_model(const ModelConfig& cfg) {
    validate_config(cfg);
    Model m;
    m.config = cfg;
    Rng base(cfg.seed);
    double sd = 0.02;
    // projections that write into the residual stream start smaller so depth
    // does not blow up activation scale
    double sd_res = 0.02 / std::sqrt(2.0 * (double)cfg.n_layers);
    int64_t dh = cfg.d_model / cfg.n_heads;

    auto add_randn = [&](const std::string& name, Shape shape, double dev) {
        Rng r = base.fork("param:" + name);
        m.params.push_back({name, Tensor::randn(std::move(shape), r, 0.0, dev, cfg.dtype, true)});
    };
    auto add_const = [&](const std::string& name, Shape shape, double value) {
        m.params.push_back({name, Tensor::full(std::move(shape), value, cfg.dtype, true)});
    };

    add_randn("tok_embedding", {cfg.vocab_size, cfg.d_model}, sd);
    for (int64_t l = 0; l < cfg.n_layers; l++) {
        std::string p = "layers." + std::to_string(l) + ".";
        add_const(p + "ln1_g", {cfg.d_model}, 1.0);
        add_const(p + "ln1_b", {cfg.d_model}, 0.0);
        for (int64_t h = 0; h < cfg.n_heads; h++) {
            std::string hs = std::to_string(h);
            add_randn(p + "attn.wq." + hs, {cfg.d_model, dh}, sd);
            add_randn(p + "attn.wk." + hs, {cfg.d_model, dh}, sd);
            add_randn(p + "attn.wv." + hs, {cfg.d_model, dh}, sd);
        }
        add_randn(p + "attn.wo", {cfg.d_model, cfg.d_model}, sd_res);
        add_const(p + "ln2_g", {cfg.d_model}, 1.0);
        add_const(p + "ln2_b", {cfg.d_model}, 0.0);
        add_randn(p + "mlp.w1", {cfg.d_model, cfg.d_ff}, sd);
        add_randn(p + "mlp.w2", {cfg.d_ff, cfg.d_model}, sd_res);
    }
    add_const("lnf_g", {cfg.d_model}, 1.0);
    add_const("lnf_b", {cfg.d_model}, 0.0);
    add_randn("w_out", {cfg.d_model, cfg.vocab_size}, sd);
    return m;
}

Tensor& Model::param(std::string_view name) {
    for (auto& p : params)
        if (p.name == name) return p.tensor;
    MD_CHECK(false, "unknown parameter: " + std::string(name));
    return params[0].tensor;
}

const Tensor& Model::param(std::string_view name) const {
    return const_cast<Model*>(this)->param(name);
}

Tensor Model::embed(std::span<const int32_t> ids) const {
    MD_CHECK(!ids.empty(), "empty token sequence");
    if ((int64_t)ids.size() > config.n_ctx)
        throw DataError("context overflow: sequence of " + std::to_string(ids.size()) +
                        " tokens exceeds n_ctx=" + std::to_string(config.n_ctx));
    return embedding(param("tok_embedding"), ids);
}

static Tensor causal_mask(int64_t len, Dtype dt) {
    // additive mask: 0 on/below the diagonal, a large negative above
    std::vector<double> vals((size_t)len * len, 0.0);
    for (int64_t i = 0; i < len; i++)
        for (int64_t j = i + 1; j < len; j++) vals[(size_t)(i * len + j)] = -1e30;
    return Tensor::from_vector({len, len}, vals, dt, false);
}

Tensor Model::forward_from_embeddings(const Tensor& x_in, std::span<const int32_t> rows) const {
    int64_t len = x_in.dim(0);
    MD_CHECK(x_in.rank() == 2 && x_in.dim(1) == config.d_model, "embedding shape mismatch");
    if (len > config.n_ctx)
        throw DataError("context overflow: sequence of " + std::to_string(len) +
                        " tokens exceeds n_ctx=" + std::to_string(config.n_ctx));
    bool causal = config.mode == ModelMode::causal_ar;
    Tensor mask;
    if (causal) mask = causal_mask(len, x_in.dtype());
    double scale = 1.0 / std::sqrt((double)(config.d_model / config.n_heads));

    Tensor x = x_in;
    for (int64_t l = 0; l < config.n_layers; l++) {
        std::string p = "layers." + std::to_string(l) + ".";
        Tensor xn = layer_norm(x, param(p + "ln1_g"), param(p + "ln1_b"));
        std::vector<Tensor> heads;
        for (int64_t h = 0; h < config.n_heads; h++) {
            std::string hs = std::to_string(h);
            Tensor q = rotary(matmul(xn, param(p + "attn.wq." + hs)));
            Tensor k = rotary(matmul(xn, param(p + "attn.wk." + hs)));
            Tensor v = matmul(xn, param(p + "attn.wv." + hs));
            Tensor scores = scalar_mul(matmul(q, transpose(k)), scale);
            if (causal) scores = add(scores, mask);
            heads.push_back(matmul(softmax(scores), v));
        }
        Tensor cat = config.n_heads == 1 ? heads[0] : concat(heads, 1);
        x = add(x, matmul(cat, param(p + "attn.wo")));
        Tensor xn2 = layer_norm(x, param(p + "ln2_g"), param(p + "ln2_b"));
        x = add(x, matmul(gelu(matmul(xn2, param(p + "mlp.w1"))), param(p + "mlp.w2")));
    }
    if (!rows.empty()) x = gather_rows(x, rows);
    Tensor xf = layer_norm(x, param("lnf_g"), param("lnf_b"));
    return matmul(xf, param("w_out"));
}

Tensor Model::forward(std::span<const int32_t> ids) const {
    return forward_from_embeddings(embed(ids));
}

Tensor Model::forward_rows(std::span<const int32_t> ids, std::span<const int32_t> rows) const {
    MD_CHECK(!rows.empty(), "forward_rows needs at least one row");
    return forward_from_embeddings(embed(ids), rows);
}

// ---------------------------------------------------------------------------

PretrainSeq mask_tokens(std::span<const int32_t> clean, double p, int32_t mask_id, Rng& rng) {
    MD_CHECK(!clean.empty(), "cannot mask an empty sequence");
    MD_CHECK(p > 0.0 && p <= 1.0, "masking probability must lie in (0,1]");
    PretrainSeq s;
    s.clean.assign(clean.begin(), clean.end());
    s.p = p;
    for (;;) {  // redraw until at least one token is masked
        s.is_masked.assign(clean.size(), 0);
        int hits = 0;
        for (size_t i = 0; i < clean.size(); i++) {
            s.is_masked[i] = rng.bernoulli(p) ? 1 : 0;
            hits += s.is_masked[i];
        }
        if (hits > 0) break;
    }
    s.masked = s.clean;
    for (size_t i = 0; i < clean.size(); i++)
        if (s.is_masked[i]) s.masked[i] = mask_id;
    return s;
}

static void validate_seq(const PretrainSeq& s) {
    MD_CHECK(s.clean.size() == s.masked.size() && s.clean.size() == s.is_masked.size(),
             "pretrain sequence arrays disagree in length");
    MD_CHECK(s.p > 0.0 && s.p <= 1.0, "masking probability must lie in (0,1]");
    int hits = 0;
    for (size_t i = 0; i < s.clean.size(); i++) {
        if (s.is_masked[i])
            hits++;
        else
            MD_CHECK(s.masked[i] == s.clean[i], "unmasked position was altered");
    }
    MD_CHECK(hits > 0, "sequence has zero masked tokens");
}

Tensor pretrain_loss(const Model& model, const PretrainBatch& batch) {
    MD_CHECK(model.config.mode == ModelMode::diffusion_bidirectional,
             "pretrain_loss requires the diffusion model");
    MD_CHECK(!batch.seqs.empty(), "empty pretrain batch");
    Tensor total;
    for (const auto& s : batch.seqs) {
        validate_seq(s);
        std::vector<int32_t> rows, targets;
        for (size_t i = 0; i < s.clean.size(); i++)
            if (s.is_masked[i]) {
                rows.push_back((int32_t)i);
                targets.push_back(s.clean[i]);
            }
        // logits only for the masked rows; the final-norm/projection stack is
        // row-local so this matches a full forward followed by a gather
        Tensor logits = model.forward_rows(s.masked, rows);
        std::vector<int32_t> idx(rows.size());
        for (size_t i = 0; i < idx.size(); i++) idx[i] = (int32_t)i;
        Tensor ce = masked_cross_entropy_sum(logits, targets, idx);
        Tensor seq_loss = scalar_mul(ce, 1.0 / (s.p * (double)rows.size()));
        total = total.defined() ? add(total, seq_loss) : seq_loss;
    }
    return scalar_mul(total, 1.0 / (double)batch.seqs.size());
}

Tensor ar_loss(const Model& model, std::span<const int32_t> tokens) {
    MD_CHECK(model.config.mode == ModelMode::causal_ar, "ar_loss requires the causal model");
    MD_CHECK(tokens.size() >= 2, "ar_loss needs at least two tokens");
    Tensor logits = model.forward(tokens);
    std::vector<int32_t> rows, targets;
    for (size_t i = 1; i < tokens.size(); i++) {
        rows.push_back((int32_t)(i - 1));
        targets.push_back(tokens[i]);
    }
    Tensor ce = masked_cross_entropy_sum(logits, targets, rows);
    return scalar_mul(ce, 1.0 / (double)rows.size());
}

}  // namespace maskdiff
