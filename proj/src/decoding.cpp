#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "maskdiff/corruption.hpp"
#include "maskdiff/decoding.hpp"
#include "maskdiff/errors.hpp"
#include "maskdiff/rng.hpp"

namespace maskdiff {

const char* decode_strategy_name(DecodeStrategy s) {
    return s == DecodeStrategy::random ? "random" : "confidence";
}

namespace {

struct RowStats {
    int32_t argmax = 0;  // best non-mask token, ties to the lowest id
    double confidence = 0;
    double entropy = 0;
    std::vector<double> probs;  // full distribution (kept for ranking/dumps)
};

RowStats stats_from_row(const std::vector<double>& flat, int64_t v, int64_t row) {
    RowStats st;
    double mx = -HUGE_VAL;
    for (int64_t j = 0; j < v; j++) mx = std::max(mx, flat[(size_t)(row * v + j)]);
    double z = 0.0;
    st.probs.resize((size_t)v);
    for (int64_t j = 0; j < v; j++) {
        st.probs[(size_t)j] = std::exp(flat[(size_t)(row * v + j)] - mx);
        z += st.probs[(size_t)j];
    }
    st.argmax = -1;
    for (int64_t j = 0; j < v; j++) {
        st.probs[(size_t)j] /= z;
        double p = st.probs[(size_t)j];
        if (p > 0.0) st.entropy -= p * std::log(p);
        if (j != kMaskId && (st.argmax < 0 || p > st.probs[(size_t)st.argmax]))
            st.argmax = (int32_t)j;
    }
    st.entropy = std::max(st.entropy, 0.0);
    st.confidence = st.probs[(size_t)st.argmax];
    return st;
}

std::vector<int64_t> mask_positions(std::span<const int32_t> seq) {
    std::vector<int64_t> pos;
    for (size_t i = 0; i < seq.size(); i++)
        if (seq[i] == kMaskId) pos.push_back((int64_t)i);
    return pos;
}

struct DumpWriter {
    std::ofstream file;
    int64_t top_k = 5;

    void open(const std::string& path, int64_t k, int64_t v) {
        MD_CHECK(k >= 1, "dump top_k must be positive");
        top_k = std::min(k, v);
        file.open(path);
        if (!file.good()) throw DataError("cannot write logit dump: " + path);
        file << "step,position,rank,token,prob\n";
    }

    void row(int64_t step, int64_t position, const RowStats& st) {
        if (!file.is_open()) return;
        std::vector<int32_t> order((size_t)st.probs.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
            return st.probs[(size_t)a] > st.probs[(size_t)b];
        });
        for (int64_t r = 0; r < top_k; r++) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "%lld,%lld,%lld,%d,%.17g\n", (long long)step,
                          (long long)position, (long long)r, (int)order[(size_t)r],
                          st.probs[(size_t)order[(size_t)r]]);
            file << buf;
        }
    }
};

}  // namespace

static DecodeResult unmask_loop(const Model& model, std::span<const int32_t> seq,
                                const DecodeConfig& cfg, const std::string& dump_csv,
                                int64_t dump_top_k) {
    MD_CHECK(cfg.steps >= 1, "decode steps must be positive");
    std::vector<int32_t> out(seq.begin(), seq.end());
    std::vector<int64_t> remaining = mask_positions(out);
    MD_CHECK(!remaining.empty(), "sequence has no masked positions to decode");

    DumpWriter dump;
    if (!dump_csv.empty()) dump.open(dump_csv, dump_top_k, model.config.vocab_size);

    Rng rng(cfg.seed);
    DecodeDiagnostics diag;
    diag.records.reserve(remaining.size());
    int64_t v = model.config.vocab_size;

    NoGradGuard ng;
    for (int64_t step = 0; !remaining.empty(); step++) {
        int64_t steps_left = std::max<int64_t>(1, cfg.steps - step);
        int64_t group = ((int64_t)remaining.size() + steps_left - 1) / steps_left;

        std::vector<int32_t> rows(remaining.begin(), remaining.end());
        auto flat = model.forward_rows(out, rows).values();
        std::vector<RowStats> stats(remaining.size());
        for (size_t i = 0; i < remaining.size(); i++) stats[i] = stats_from_row(flat, v, (int64_t)i);

        // indices into `remaining` selected for this step
        std::vector<size_t> pick;
        if (cfg.strategy == DecodeStrategy::random) {
            for (int64_t i : rng.sample_without_replacement((int64_t)remaining.size(), group))
                pick.push_back((size_t)i);
        } else {
            pick.resize(remaining.size());
            std::iota(pick.begin(), pick.end(), (size_t)0);
            std::sort(pick.begin(), pick.end(), [&](size_t a, size_t b) {
                if (stats[a].confidence != stats[b].confidence)
                    return stats[a].confidence > stats[b].confidence;
                return remaining[a] < remaining[b];  // ties to the lowest position
            });
            pick.resize((size_t)group);
        }
        std::sort(pick.begin(), pick.end(),
                  [&](size_t a, size_t b) { return remaining[a] < remaining[b]; });

        for (size_t i : pick) {
            int64_t position = remaining[i];
            const RowStats& st = stats[i];
            out[(size_t)position] = st.argmax;
            diag.records.push_back({step, position, st.argmax, st.confidence, st.entropy});
            dump.row(step, position, st);
        }
        std::vector<int64_t> next;
        for (size_t i = 0; i < remaining.size(); i++)
            if (std::find(pick.begin(), pick.end(), i) == pick.end())
                next.push_back(remaining[i]);
        remaining = std::move(next);
    }
    return {std::move(out), std::move(diag)};
}

DecodeResult decode_single_step(const Model& model, std::span<const int32_t> seq) {
    DecodeConfig one;
    one.steps = 1;
    return unmask_loop(model, seq, one, "", 5);
}

DecodeResult iterative_unmask(const Model& model, std::span<const int32_t> seq,
                              const DecodeConfig& cfg, const std::string& dump_csv,
                              int64_t dump_top_k) {
    return unmask_loop(model, seq, cfg, dump_csv, dump_top_k);
}

static SlotReading reading_at(const Model& model, std::span<const int32_t> ids, int64_t row) {
    NoGradGuard ng;
    std::vector<int32_t> rows = {(int32_t)row};
    auto flat = model.forward_rows(ids, rows).values();
    RowStats st = stats_from_row(flat, model.config.vocab_size, 0);
    return {st.confidence, st.entropy, st.argmax};
}

SlotReading answer_confidence_entropy(const Model& model, std::span<const int32_t> ids) {
    for (size_t i = 0; i < ids.size(); i++)
        if (ids[i] == kMaskId) return reading_at(model, ids, (int64_t)i);
    MD_CHECK(false, "prompt has no masked answer slot");
    return {};
}

SlotReading next_token_reading(const Model& model, std::span<const int32_t> ids) {
    MD_CHECK(model.config.mode == ModelMode::causal_ar,
             "next-token readings need the causal model");
    MD_CHECK(!ids.empty(), "empty prompt");
    return reading_at(model, ids, (int64_t)ids.size() - 1);
}

}  // namespace maskdiff
