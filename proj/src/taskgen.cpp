#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "maskdiff/errors.hpp"
#include "maskdiff/taskgen.hpp"

namespace maskdiff {

// ---------------------------------------------------------------------------
// vocabulary

static const char* kStructural[] = {"Options:", " (A)", " (B)", " (C)", ",",     "\n",    "\n\n",
                                    "Answer:[", "].",   ".",    "A",    "B",     "C",
                                    "Above",    "Below"};

Vocab build_vocab(const Wordlists& lists, int max_number) {
    Vocab v;
    auto add = [&](std::string tok) {
        auto [it, fresh] = v.to_id.try_emplace(tok, (int32_t)v.tokens.size());
        MD_CHECK(fresh, "duplicate vocabulary token: " + tok);
        v.max_token_len = std::max(v.max_token_len, tok.size());
        v.tokens.push_back(std::move(tok));
    };
    add(kEosText);
    add(kMaskText);
    for (const char* s : kStructural) add(s);
    for (auto& ws : lists.words)
        for (auto& w : ws) add(" " + w);
    for (int k = 1; k <= max_number; k++) add(" " + std::to_string(k));
    v.eos_id = v.id(kEosText);
    v.mask_id = v.id(kMaskText);
    return v;
}

int32_t Vocab::id(std::string_view tok) const {
    auto it = to_id.find(tok);
    if (it == to_id.end()) throw DataError("token not in vocabulary: '" + std::string(tok) + "'");
    return it->second;
}

std::vector<int32_t> Vocab::tokenize(std::string_view text) const {
    std::vector<int32_t> out;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t cap = std::min(max_token_len, text.size() - pos);
        int32_t hit = -1;
        size_t hit_len = 0;
        for (size_t len = cap; len >= 1; len--) {
            auto it = to_id.find(text.substr(pos, len));
            if (it != to_id.end()) {
                hit = it->second;
                hit_len = len;
                break;
            }
        }
        if (hit < 0)
            throw DataError("cannot tokenize at byte " + std::to_string(pos) + ": '" +
                            std::string(text.substr(pos, std::min<size_t>(16, text.size() - pos))) +
                            "'");
        out.push_back(hit);
        pos += hit_len;
    }
    return out;
}

std::string Vocab::detokenize(std::span<const int32_t> ids) const {
    std::string out;
    for (int32_t id : ids) {
        MD_CHECK(id >= 0 && id < (int32_t)tokens.size(),
                 "token id out of range: " + std::to_string(id));
        out += tokens[id];
    }
    return out;
}

// ---------------------------------------------------------------------------
// examples

const char* word_task_name(WordTask t) {
    switch (t) {
        case WordTask::country: return "country";
        case WordTask::capitalised: return "capitalised";
        case WordTask::verb: return "verb";
        case WordTask::adjective: return "adjective";
        case WordTask::animal: return "animal";
        case WordTask::colour: return "colour";
        case WordTask::emotion: return "emotion";
        case WordTask::object: return "object";
    }
    MD_CHECK(false, "bad word task");
    return "";
}

const char* number_task_name(NumberTask t) {
    return t == NumberTask::smallest ? "smallest" : "largest";
}

TaskRule task_rule(WordTask t) {
    switch (t) {
        case WordTask::country: return {"country", {"name"}};
        case WordTask::capitalised: return {"capitalised", {"lowercase"}};
        case WordTask::verb: return {"verb", {"adjective", "preposition", "object"}};
        case WordTask::adjective: return {"adjective", {"verb", "preposition", "object"}};
        case WordTask::animal: return {"animal", {"object", "fruit", "sport"}};
        case WordTask::colour: return {"colour", {"animal", "object"}};
        case WordTask::emotion: return {"emotion", {"colour", "object", "animal"}};
        case WordTask::object: return {"object", {"emotion", "colour", "adjective"}};
    }
    MD_CHECK(false, "bad word task");
    return {};
}

int number_correct_slot(const std::array<int, 3>& values, NumberTask task) {
    auto it = (task == NumberTask::smallest) ? std::min_element(values.begin(), values.end())
                                             : std::max_element(values.begin(), values.end());
    return int(it - values.begin());
}

FewShotExample gen_word_example(WordTask task, const Wordlists& lists, Rng& rng) {
    auto rule = task_rule(task);
    const auto& target = lists.at(rule.target);
    if (target.empty()) throw DataError("category list too small: " + rule.target);
    std::vector<const std::string*> pool;
    for (auto& cat : rule.contrast)
        for (auto& w : lists.at(cat)) pool.push_back(&w);
    if (pool.size() < 2) throw DataError("category list too small: contrast pool for " + rule.target);
    const std::string& correct = target[rng.uniform_int(0, (int64_t)target.size() - 1)];
    auto foils = rng.sample_without_replacement((int64_t)pool.size(), 2);
    int slot = (int)rng.uniform_int(0, 2);
    FewShotExample ex;
    ex.correct = slot;
    ex.kind = ExampleKind::relevant;
    int next_foil = 0;
    for (int i = 0; i < 3; i++)
        ex.options[i] = (i == slot) ? correct : *pool[foils[next_foil++]];
    return ex;
}

FewShotExample gen_number_example(NumberTask task, Rng& rng) {
    auto draws = rng.sample_without_replacement(1000, 3);
    std::array<int, 3> values{int(draws[0] + 1), int(draws[1] + 1), int(draws[2] + 1)};
    FewShotExample ex;
    ex.kind = ExampleKind::distractor;
    ex.correct = number_correct_slot(values, task);
    for (int i = 0; i < 3; i++) ex.options[i] = std::to_string(values[i]);
    return ex;
}

std::string format_example(const FewShotExample& ex) {
    std::string out = "Options: (A) ";
    out += ex.options[0];
    out += ", (B) ";
    out += ex.options[1];
    out += ", (C) ";
    out += ex.options[2];
    out += "\nAnswer:[";
    out += ex.label();
    out += "].\n\n";
    return out;
}

// ---------------------------------------------------------------------------
// layout

std::vector<FewShotExample> arrange_examples(const std::vector<FewShotExample>& relevant,
                                             const std::vector<FewShotExample>& distractors,
                                             Arrangement arrangement, double block_position,
                                             Rng& rng) {
    size_t n_rel = relevant.size(), n_dis = distractors.size();
    std::vector<FewShotExample> out;
    out.reserve(n_rel + n_dis);
    if (arrangement == Arrangement::block_at_position) {
        MD_CHECK(block_position >= 0.0 && block_position <= 1.0,
                 "block position must lie in [0,1]");
        size_t start = (size_t)std::llround(block_position * (double)n_dis);
        out.insert(out.end(), distractors.begin(), distractors.begin() + start);
        out.insert(out.end(), relevant.begin(), relevant.end());
        out.insert(out.end(), distractors.begin() + start, distractors.end());
        return out;
    }
    // mixed random: relevant examples land on a uniform position subset,
    // both groups keep their internal order
    auto picks = rng.sample_without_replacement(int64_t(n_rel + n_dis), (int64_t)n_rel);
    std::sort(picks.begin(), picks.end());
    std::vector<bool> is_rel(n_rel + n_dis, false);
    for (auto p : picks) is_rel[p] = true;
    size_t ri = 0, di = 0;
    for (size_t i = 0; i < n_rel + n_dis; i++)
        out.push_back(is_rel[i] ? relevant[ri++] : distractors[di++]);
    return out;
}

static std::string render_question(const FewShotExample& q, AnswerConvention conv, int extra_masks,
                                   int extra_dots) {
    std::string out = "Options: (A) ";
    out += q.options[0];
    out += ", (B) ";
    out += q.options[1];
    out += ", (C) ";
    out += q.options[2];
    out += "\nAnswer:[";
    if (conv == AnswerConvention::open_bracket_plus_masks) {
        for (int i = 0; i < extra_masks; i++) out += kMaskText;
        return out;  // prompt ends mid-answer by design
    }
    out += kMaskText;
    out += "].";
    for (int i = 0; i < extra_dots; i++) out += '.';
    for (int i = 0; i < extra_masks; i++) out += kMaskText;  // appended scaffold
    out += "\n\n";
    return out;
}

Prompt layout_prompt(const PromptLayout& layout, const Vocab& vocab, Rng& rng, int64_t n_ctx) {
    MD_CHECK(layout.extra_masks == 0 || layout.extra_dots == 0,
             "extra masks and extra dots are mutually exclusive");
    MD_CHECK(layout.extra_masks >= 0 && layout.extra_dots >= 0, "mask/dot counts must be >= 0");
    MD_CHECK(layout.question_position >= 0.0 && layout.question_position <= 1.0,
             "question position must lie in [0,1]");
    bool open = layout.convention == AnswerConvention::open_bracket_plus_masks;
    auto arranged = arrange_examples(layout.relevant, layout.distractors, layout.arrangement,
                                     layout.block_position, rng);
    size_t q_slot = (size_t)std::llround(layout.question_position * (double)arranged.size());
    MD_CHECK(!open || q_slot == arranged.size(),
             "open-bracket answers require the question at the right end");

    Prompt p;
    // tokenize segment by segment so the span bookkeeping is exact; no vocab
    // token crosses a segment boundary (every segment opens with "Options:")
    auto append = [&](const std::string& piece) {
        int64_t begin = (int64_t)p.ids.size();
        auto toks = vocab.tokenize(piece);
        p.ids.insert(p.ids.end(), toks.begin(), toks.end());
        p.text += piece;
        return std::pair<int64_t, int64_t>{begin, (int64_t)p.ids.size()};
    };
    for (size_t i = 0; i <= arranged.size(); i++) {
        if (i == q_slot)
            p.question_span = append(render_question(layout.question, layout.convention,
                                                     layout.extra_masks, layout.extra_dots));
        if (i < arranged.size()) p.example_spans.push_back(append(format_example(arranged[i])));
    }
    if (n_ctx > 0 && (int64_t)p.ids.size() > n_ctx)
        throw DataError("context overflow: prompt needs " + std::to_string(p.ids.size()) +
                        " tokens but the limit is " + std::to_string(n_ctx));
    auto it = std::find(p.ids.begin(), p.ids.end(), vocab.mask_id);
    p.answer_slot = (it == p.ids.end()) ? -1 : int64_t(it - p.ids.begin());
    p.gold = layout.question.label();
    return p;
}

// ---------------------------------------------------------------------------
// suite + export

std::string TaskSpec::id() const {
    return std::string(word_task_name(word_task)) + "_" + number_task_name(number_task);
}

std::vector<TaskSpec> task_suite(uint64_t seed, int n_test) {
    std::vector<TaskSpec> out;
    for (int w = 0; w < kNumWordTasks; w++)
        for (int n = 0; n < kNumNumberTasks; n++) {
            TaskSpec s;
            s.word_task = WordTask(w);
            s.number_task = NumberTask(n);
            s.seed = seed;
            s.n_test = n_test;
            out.push_back(s);
        }
    return out;
}

TaskData gen_task_data(const TaskSpec& spec, const Wordlists& lists, int pool_relevant,
                       int pool_distractor) {
    TaskData td;
    td.spec = spec;
    Rng base = Rng(spec.seed).fork("task:" + spec.id());
    Rng r_rel = base.fork("relevant");
    Rng r_dis = base.fork("distractor");
    Rng r_test = base.fork("test");
    for (int i = 0; i < pool_relevant; i++)
        td.relevant_pool.push_back(gen_word_example(spec.word_task, lists, r_rel));
    for (int i = 0; i < pool_distractor; i++)
        td.distractor_pool.push_back(gen_number_example(spec.number_task, r_dis));
    for (int i = 0; i < spec.n_test; i++)
        td.test.push_back(gen_word_example(spec.word_task, lists, r_test));
    return td;
}

static void write_examples_jsonl(const std::string& path, const std::vector<FewShotExample>& v) {
    std::ofstream f(path, std::ios::binary);
    if (!f.good()) throw DataError("cannot write " + path);
    for (auto& ex : v) {
        nlohmann::json j;
        j["options"] = ex.options;
        j["correct"] = std::string(1, ex.label());
        j["kind"] = ex.kind == ExampleKind::relevant ? "relevant" : "distractor";
        f << j.dump() << "\n";
    }
}

void export_task_jsonl(const TaskData& task, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::vector<FewShotExample> train = task.relevant_pool;
    train.insert(train.end(), task.distractor_pool.begin(), task.distractor_pool.end());
    write_examples_jsonl(dir + "/" + task.spec.id() + ".train.jsonl", train);
    write_examples_jsonl(dir + "/" + task.spec.id() + ".test.jsonl", task.test);
}

}  // namespace maskdiff
