#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "maskdiff/errors.hpp"
#include "maskdiff/multidim.hpp"
#include "maskdiff/taskgen.hpp"

using namespace maskdiff;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("taskgen");

// ---------------------------------------------------------------------------
// oracle: inverse parser for formatted prompts. kept deliberately independent
// of the production formatter -- plain substring surgery on the frozen layout.

struct ParsedBlock {
    std::array<std::string, 3> options;
    std::string answer;  // "" for an open bracket, "<|mask|>" for a masked label
    int dots = 0;        // "." repetitions after "]."
};

static std::vector<ParsedBlock> parse_prompt_blocks(const std::string& text) {
    std::vector<ParsedBlock> out;
    size_t pos = 0;
    while (pos < text.size()) {
        REQUIRE(text.compare(pos, 12, "Options: (A)") == 0);
        size_t b = text.find(", (B) ", pos);
        size_t c = text.find(", (C) ", pos);
        size_t nl = text.find("\nAnswer:[", pos);
        REQUIRE(b != std::string::npos);
        REQUIRE(c != std::string::npos);
        REQUIRE(nl != std::string::npos);
        ParsedBlock blk;
        size_t a0 = pos + 13;  // after "Options: (A) "
        blk.options[0] = text.substr(a0, b - a0);
        blk.options[1] = text.substr(b + 6, c - (b + 6));
        blk.options[2] = text.substr(c + 6, nl - (c + 6));
        size_t ans = nl + 9;  // after "\nAnswer:["
        size_t close = text.find("].", ans);
        if (close == std::string::npos) {
            // open-bracket tail: only mask tokens may follow, and the prompt ends here
            std::string tail = text.substr(ans);
            while (tail.size() >= 8 && tail.compare(0, 8, "<|mask|>") == 0) tail = tail.substr(8);
            REQUIRE(tail.empty());
            blk.answer = "";
            out.push_back(blk);
            return out;
        }
        blk.answer = text.substr(ans, close - ans);
        pos = close + 2;
        while (pos < text.size() && text[pos] == '.') {
            blk.dots++;
            pos++;
        }
        REQUIRE(text.compare(pos, 2, "\n\n") == 0);
        pos += 2;
        out.push_back(blk);
    }
    return out;
}

static bool contains(const std::vector<std::string>& v, const std::string& w) {
    return std::find(v.begin(), v.end(), w) != v.end();
}

static bool all_digits(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char ch) { return ch >= '0' && ch <= '9'; });
}

static const Wordlists& lists() {
    static Wordlists wl = load_wordlists(default_wordlists_path());
    return wl;
}

static const Vocab& vocab() {
    static Vocab v = build_vocab(lists());
    return v;
}

// audit one parsed block against the task rule it claims to instantiate
static void audit_block(const ParsedBlock& blk, WordTask wt, NumberTask nt) {
    if (blk.answer.empty()) return;  // open tail, nothing to audit
    CHECK(blk.options[0] != blk.options[1]);
    CHECK(blk.options[0] != blk.options[2]);
    CHECK(blk.options[1] != blk.options[2]);
    bool numeric = all_digits(blk.options[0]);
    for (auto& o : blk.options) CHECK(all_digits(o) == numeric);
    if (blk.answer == "<|mask|>") return;  // masked question: options still checked above
    REQUIRE(blk.answer.size() == 1);
    int slot = blk.answer[0] - 'A';
    REQUIRE(slot >= 0);
    REQUIRE(slot <= 2);
    if (numeric) {
        std::array<int, 3> v{std::stoi(blk.options[0]), std::stoi(blk.options[1]),
                             std::stoi(blk.options[2])};
        int want = (nt == NumberTask::smallest)
                       ? int(std::min_element(v.begin(), v.end()) - v.begin())
                       : int(std::max_element(v.begin(), v.end()) - v.begin());
        CHECK(slot == want);
        for (int x : v) {
            CHECK(x >= 1);
            CHECK(x <= 1000);
        }
    } else {
        auto rule = task_rule(wt);
        const auto& target = lists().at(rule.target);
        for (int i = 0; i < 3; i++) {
            bool in_target = contains(target, blk.options[i]);
            CHECK(in_target == (i == slot));
            if (i != slot) {
                bool in_contrast = false;
                for (auto& cat : rule.contrast) in_contrast |= contains(lists().at(cat), blk.options[i]);
                CHECK(in_contrast);
            }
        }
    }
}

// ---------------------------------------------------------------------------

TEST_CASE("wordlists: shipped file is well-formed") {
    const auto& wl = lists();
    REQUIRE(wl.categories.size() == 13);
    for (size_t i = 0; i < wl.categories.size(); i++) {
        INFO("category ", wl.categories[i]);
        CHECK(wl.words[i].size() >= 40);
    }
    // pairwise disjoint, recomputed here from scratch
    std::set<std::string> seen;
    size_t total = 0;
    for (auto& ws : wl.words)
        for (auto& w : ws) {
            CHECK(!all_digits(w));
            seen.insert(w);
            total++;
        }
    CHECK(seen.size() == total);
}

TEST_CASE("wordlists: memberships the corpus examples depend on") {
    const auto& wl = lists();
    for (const char* w : {"knit", "persuade", "arrive", "compete", "search", "deliver", "kiss",
                          "master", "train", "calculate", "relax", "kill", "hate"})
        CHECK(contains(wl.at("verb"), w));
    for (const char* w : {"quirky", "thoughtful", "tall", "silly", "reliable", "graceful",
                          "sensitive", "passionate", "lucky", "innocent", "upbeat", "spicy"})
        CHECK(contains(wl.at("adjective"), w));
    for (const char* w : {"near", "for", "underneath", "concerning"})
        CHECK(contains(wl.at("preposition"), w));
    for (const char* w : {"jar", "igloo", "cube", "zucchini", "lettuce", "painting"})
        CHECK(contains(wl.at("object"), w));
}

TEST_CASE("wordlists: loader rejects bad files") {
    auto write_tmp = [](const std::string& body) {
        fs::path p = fs::temp_directory_path() / "md_wordlists_test.tsv";
        std::ofstream f(p);
        f << body;
        f.close();
        return p.string();
    };
    CHECK_THROWS_AS(load_wordlists(write_tmp("verb\tjump\nverb\tjump\n")), DataError);
    CHECK_THROWS_AS(load_wordlists(write_tmp("verb\tjump\nnoun\tjump\n")), DataError);
    CHECK_THROWS_AS(load_wordlists(write_tmp("verb jump\n")), DataError);
    CHECK_THROWS_AS(load_wordlists(write_tmp("verb\t123\n")), DataError);
    CHECK_THROWS_AS(load_wordlists("/nonexistent/wordlists.tsv"), DataError);
}

TEST_CASE("task_rule: contrast pairings") {
    auto expect = [](WordTask t, std::string target, std::vector<std::string> contrast) {
        auto r = task_rule(t);
        CHECK(r.target == target);
        CHECK(r.contrast == contrast);
    };
    expect(WordTask::country, "country", {"name"});
    expect(WordTask::capitalised, "capitalised", {"lowercase"});
    expect(WordTask::verb, "verb", {"adjective", "preposition", "object"});
    expect(WordTask::adjective, "adjective", {"verb", "preposition", "object"});
    expect(WordTask::animal, "animal", {"object", "fruit", "sport"});
    expect(WordTask::colour, "colour", {"animal", "object"});
    expect(WordTask::emotion, "emotion", {"colour", "object", "animal"});
    expect(WordTask::object, "object", {"emotion", "colour", "adjective"});
}

TEST_CASE("vocab: structural tokens and ids") {
    const auto& v = vocab();
    CHECK(v.tokens[0] == "<|eos|>");
    CHECK(v.tokens[1] == "<|mask|>");
    CHECK(v.eos_id == 0);
    CHECK(v.mask_id == 1);
    CHECK(v.tokenize("Answer:[").size() == 1);
    CHECK(v.tokenize("].").size() == 1);
    CHECK(v.tokenize("\n\n").size() == 1);
    CHECK(v.tokenize("Above").size() == 1);
    CHECK(v.tokenize("Below").size() == 1);
    for (const char* lbl : {"A", "B", "C"}) CHECK(v.tokenize(lbl).size() == 1);
    // every word and every number is a single space-prefixed token
    const auto& wl = lists();
    for (size_t i = 0; i < wl.categories.size(); i++)
        for (auto& w : wl.words[i]) CHECK(v.tokenize(" " + w).size() == 1);
    CHECK(v.tokenize(" 1").size() == 1);
    CHECK(v.tokenize(" 1000").size() == 1);
    // 2 specials + 15 structural/label tokens + one per word + " 1".." 1000"
    size_t n_words = 0;
    for (auto& ws : wl.words) n_words += ws.size();
    CHECK(v.size() == int64_t(2 + 15 + n_words + 1000));
    CHECK_THROWS_AS((void)v.id("nonexistent-token"), DataError);
}

TEST_CASE("vocab: greedy longest match") {
    const auto& v = vocab();
    // " under" and " underneath" are both tokens; greedy must take the long one
    CHECK(v.tokenize(" underneath").size() == 1);
    CHECK(v.tokenize(" under").size() == 1);
    // "A" is a prefix of both "Answer:[" and "Above"
    auto ids = v.tokenize("Answer:[Above].");
    REQUIRE(ids.size() == 3);
    CHECK(v.tokens[ids[0]] == "Answer:[");
    CHECK(v.tokens[ids[1]] == "Above");
    CHECK(v.tokens[ids[2]] == "].");
    CHECK_THROWS_AS(v.tokenize("Options: (A) xylophone?"), DataError);
}

TEST_CASE("vocab: round trip on the frozen example block") {
    const auto& v = vocab();
    std::string s = "Options: (A) knit, (B) quirky, (C) persuade\nAnswer:[B].\n\n";
    auto ids = v.tokenize(s);
    CHECK(ids.size() == 14);
    CHECK(v.detokenize(ids) == s);
    // masked variant round-trips through the textual mask representation
    std::string m = "Options: (A) knit, (B) quirky, (C) persuade\nAnswer:[<|mask|>].\n\n";
    auto mids = v.tokenize(m);
    CHECK(mids.size() == 14);
    CHECK(std::count(mids.begin(), mids.end(), v.mask_id) == 1);
    CHECK(v.detokenize(mids) == m);
}

TEST_CASE("format_example: frozen bytes") {
    FewShotExample ex;
    ex.options = {"knit", "quirky", "persuade"};
    ex.correct = 1;
    CHECK(format_example(ex) == "Options: (A) knit, (B) quirky, (C) persuade\nAnswer:[B].\n\n");
}

TEST_CASE("format_example: inverse parse recovers options and label") {
    Rng rng(7);
    for (int i = 0; i < 100; i++) {
        auto ex = (i % 2 == 0) ? gen_word_example(WordTask::animal, lists(), rng)
                               : gen_number_example(NumberTask::largest, rng);
        auto blocks = parse_prompt_blocks(format_example(ex));
        REQUIRE(blocks.size() == 1);
        CHECK(blocks[0].options[0] == ex.options[0]);
        CHECK(blocks[0].options[1] == ex.options[1]);
        CHECK(blocks[0].options[2] == ex.options[2]);
        CHECK(blocks[0].answer == std::string(1, ex.label()));
    }
}

TEST_CASE("number_correct_slot: frozen corpus line") {
    // first line of the mixed corpus sample: 915 / 491 / 266, smallest -> C
    CHECK(number_correct_slot({915, 491, 266}, NumberTask::smallest) == 2);
    CHECK(number_correct_slot({915, 491, 266}, NumberTask::largest) == 0);
    CHECK(number_correct_slot({610, 222, 307}, NumberTask::smallest) == 1);
}

TEST_CASE("frozen adjective example is consistent with the shipped lists") {
    // (knit, quirky, persuade) under the adjective rule -> B
    const auto& adj = lists().at("adjective");
    CHECK(contains(adj, "quirky"));
    CHECK(!contains(adj, "knit"));
    CHECK(!contains(adj, "persuade"));
    const auto& verbs = lists().at("verb");
    CHECK(contains(verbs, "knit"));
    CHECK(contains(verbs, "persuade"));
}

TEST_CASE("gen_word_example: rule holds across all eight tasks") {
    Rng rng(123);
    for (int t = 0; t < kNumWordTasks; t++) {
        auto wt = WordTask(t);
        auto rule = task_rule(wt);
        for (int i = 0; i < 200; i++) {
            auto ex = gen_word_example(wt, lists(), rng);
            ParsedBlock blk{ex.options, std::string(1, ex.label()), 0};
            audit_block(blk, wt, NumberTask::smallest);
            CHECK(ex.kind == ExampleKind::relevant);
            // single-token options
            for (auto& o : ex.options) CHECK(vocab().tokenize(" " + o).size() == 1);
        }
    }
}

TEST_CASE("gen_word_example: tiny lists") {
    Wordlists wl;
    wl.categories = {"verb", "adjective", "preposition", "object"};
    wl.words = {{"jump"}, {"bright"}, {"near"}, {"vase"}};
    Rng rng(5);
    for (int i = 0; i < 50; i++) {
        auto ex = gen_word_example(WordTask::verb, wl, rng);
        CHECK(ex.options[ex.correct] == "jump");
        CHECK(ex.options[0] != ex.options[1]);
        CHECK(ex.options[0] != ex.options[2]);
        CHECK(ex.options[1] != ex.options[2]);
    }
    Wordlists starved;
    starved.categories = {"verb", "adjective", "preposition", "object"};
    starved.words = {{"jump"}, {"bright"}, {}, {}};
    CHECK_THROWS_AS(gen_word_example(WordTask::verb, starved, rng), DataError);
    Wordlists empty_target;
    empty_target.categories = {"verb", "adjective", "preposition", "object"};
    empty_target.words = {{}, {"bright"}, {"near"}, {"vase"}};
    CHECK_THROWS_AS(gen_word_example(WordTask::verb, empty_target, rng), DataError);
}

TEST_CASE("gen_number_example: rule and range") {
    Rng rng(99);
    for (int i = 0; i < 500; i++) {
        auto nt = (i % 2 == 0) ? NumberTask::smallest : NumberTask::largest;
        auto ex = gen_number_example(nt, rng);
        CHECK(ex.kind == ExampleKind::distractor);
        std::array<int, 3> v{};
        for (int j = 0; j < 3; j++) {
            v[j] = std::stoi(ex.options[j]);
            CHECK(v[j] >= 1);
            CHECK(v[j] <= 1000);
        }
        CHECK(v[0] != v[1]);
        CHECK(v[0] != v[2]);
        CHECK(v[1] != v[2]);
        int want = (nt == NumberTask::smallest)
                       ? int(std::min_element(v.begin(), v.end()) - v.begin())
                       : int(std::max_element(v.begin(), v.end()) - v.begin());
        CHECK(ex.correct == want);
    }
}

// ---------------------------------------------------------------------------
// arrangement and layout

static std::vector<FewShotExample> tagged(int n, ExampleKind kind, const char* stem) {
    // distinct recognisable options so order can be traced through arrangement
    std::vector<FewShotExample> out;
    for (int i = 0; i < n; i++) {
        FewShotExample ex;
        ex.options = {std::string(stem) + std::to_string(i), "x", "y"};
        ex.correct = 0;
        ex.kind = kind;
        out.push_back(ex);
    }
    return out;
}

TEST_CASE("arrange_examples: block placement") {
    auto rel = tagged(10, ExampleKind::relevant, "r");
    auto dis = tagged(40, ExampleKind::distractor, "d");
    Rng rng(1);
    auto check_block = [&](double r, int want_start) {
        auto arr = arrange_examples(rel, dis, Arrangement::block_at_position, r, rng);
        REQUIRE(arr.size() == 50);
        for (int i = 0; i < 50; i++) {
            bool is_rel = i >= want_start && i < want_start + 10;
            CHECK((arr[i].kind == ExampleKind::relevant) == is_rel);
        }
        // within-group order preserved
        int rj = 0, dj = 0;
        for (auto& ex : arr) {
            if (ex.kind == ExampleKind::relevant)
                CHECK(ex.options[0] == "r" + std::to_string(rj++));
            else
                CHECK(ex.options[0] == "d" + std::to_string(dj++));
        }
    };
    check_block(1.0, 40);  // relevant occupy positions 41..50 of the list
    check_block(0.0, 0);
    check_block(0.5, 20);
    check_block(0.25, 10);
}

TEST_CASE("arrange_examples: mixed random") {
    auto rel = tagged(10, ExampleKind::relevant, "r");
    auto dis = tagged(40, ExampleKind::distractor, "d");
    Rng a(42), b(42), c(43);
    auto arr = arrange_examples(rel, dis, Arrangement::mixed_random, 0.0, a);
    REQUIRE(arr.size() == 50);
    int n_rel = 0, rj = 0, dj = 0;
    for (auto& ex : arr) {
        if (ex.kind == ExampleKind::relevant) {
            n_rel++;
            CHECK(ex.options[0] == "r" + std::to_string(rj++));
        } else {
            CHECK(ex.options[0] == "d" + std::to_string(dj++));
        }
    }
    CHECK(n_rel == 10);
    // same seed -> identical arrangement; different seed -> (almost surely) different
    auto arr2 = arrange_examples(rel, dis, Arrangement::mixed_random, 0.0, b);
    auto arr3 = arrange_examples(rel, dis, Arrangement::mixed_random, 0.0, c);
    auto kinds = [](const std::vector<FewShotExample>& v) {
        std::string s;
        for (auto& e : v) s += (e.kind == ExampleKind::relevant) ? 'R' : 'D';
        return s;
    };
    CHECK(kinds(arr) == kinds(arr2));
    CHECK(kinds(arr) != kinds(arr3));
}

static PromptLayout small_layout(uint64_t seed) {
    PromptLayout lay;
    Rng rng(seed);
    for (int i = 0; i < 4; i++) lay.relevant.push_back(gen_word_example(WordTask::verb, lists(), rng));
    for (int i = 0; i < 6; i++) lay.distractors.push_back(gen_number_example(NumberTask::smallest, rng));
    lay.question = gen_word_example(WordTask::verb, lists(), rng);
    lay.arrangement = Arrangement::block_at_position;
    lay.block_position = 1.0;
    lay.question_position = 1.0;
    return lay;
}

TEST_CASE("layout_prompt: bracket single mask") {
    auto lay = small_layout(11);
    Rng rng(0);
    auto p = layout_prompt(lay, vocab(), rng);
    CHECK(std::count(p.ids.begin(), p.ids.end(), vocab().mask_id) == 1);
    CHECK(p.ids[p.answer_slot] == vocab().mask_id);
    CHECK(p.gold == lay.question.label());
    CHECK(vocab().detokenize(p.ids) == p.text);
    // blocks audit: 10 in-context examples + 1 masked question
    auto blocks = parse_prompt_blocks(p.text);
    REQUIRE(blocks.size() == 11);
    int masked = 0;
    for (auto& blk : blocks) {
        if (blk.answer == "<|mask|>") masked++;
        audit_block(blk, WordTask::verb, NumberTask::smallest);
    }
    CHECK(masked == 1);
    CHECK(blocks.back().answer == "<|mask|>");  // question at the right end
}

TEST_CASE("layout_prompt: question position moves the masked block") {
    auto lay = small_layout(12);
    lay.question_position = 0.0;
    Rng rng(0);
    auto p = layout_prompt(lay, vocab(), rng);
    auto blocks = parse_prompt_blocks(p.text);
    REQUIRE(blocks.size() == 11);
    CHECK(blocks.front().answer == "<|mask|>");
    lay.question_position = 0.5;
    Rng rng2(0);
    auto mid = parse_prompt_blocks(layout_prompt(lay, vocab(), rng2).text);
    CHECK(mid[5].answer == "<|mask|>");
}

TEST_CASE("layout_prompt: extra dots after the closing bracket") {
    auto lay = small_layout(13);
    lay.extra_dots = 3;
    Rng rng(0);
    auto p = layout_prompt(lay, vocab(), rng);
    CHECK(p.text.find("].\x2e\x2e\x2e\n\n") != std::string::npos);
    auto blocks = parse_prompt_blocks(p.text);
    CHECK(blocks.back().dots == 3);
    // dots only on the question block
    for (size_t i = 0; i + 1 < blocks.size(); i++) CHECK(blocks[i].dots == 0);
    // still exactly one mask
    CHECK(std::count(p.ids.begin(), p.ids.end(), vocab().mask_id) == 1);
}

TEST_CASE("layout_prompt: open bracket plus masks") {
    auto lay = small_layout(14);
    lay.convention = AnswerConvention::open_bracket_plus_masks;
    lay.extra_masks = 2;
    Rng rng(0);
    auto p = layout_prompt(lay, vocab(), rng);
    REQUIRE(p.ids.size() >= 2);
    CHECK(p.ids[p.ids.size() - 1] == vocab().mask_id);
    CHECK(p.ids[p.ids.size() - 2] == vocab().mask_id);
    CHECK(p.answer_slot == int64_t(p.ids.size()) - 2);
    CHECK(std::count(p.ids.begin(), p.ids.end(), vocab().mask_id) == 2);
    size_t open = p.text.rfind("Answer:[");
    CHECK(p.text.substr(open) == "Answer:[<|mask|><|mask|>");

    lay.extra_masks = 0;  // autoregressive continuation style
    Rng rng2(0);
    auto q = layout_prompt(lay, vocab(), rng2);
    CHECK(q.answer_slot == -1);
    CHECK(std::count(q.ids.begin(), q.ids.end(), vocab().mask_id) == 0);
    CHECK(q.text.substr(q.text.size() - 8) == "Answer:[");
}

TEST_CASE("layout_prompt: contract violations and overflow") {
    auto lay = small_layout(15);
    lay.extra_masks = 2;
    lay.extra_dots = 2;
    Rng rng(0);
    CHECK_THROWS_AS(layout_prompt(lay, vocab(), rng, 0), ContractError);
    auto lay2 = small_layout(15);
    lay2.convention = AnswerConvention::open_bracket_plus_masks;
    lay2.question_position = 0.0;  // open bracket only makes sense at the right end
    CHECK_THROWS_AS(layout_prompt(lay2, vocab(), rng, 0), ContractError);
    auto lay3 = small_layout(15);
    CHECK_THROWS_AS(layout_prompt(lay3, vocab(), rng, 32), DataError);  // won't fit
    auto lay4 = small_layout(15);
    lay4.block_position = 1.5;
    CHECK_THROWS_AS(layout_prompt(lay4, vocab(), rng, 0), ContractError);
}

TEST_CASE("layout_prompt: trailing masks after the closed bracket") {
    auto lay = small_layout(18);
    lay.extra_masks = 3;  // bracket convention: appended after "]."
    Rng rng(0);
    auto p = layout_prompt(lay, vocab(), rng);
    CHECK(std::count(p.ids.begin(), p.ids.end(), vocab().mask_id) == 4);
    CHECK(p.ids[p.answer_slot] == vocab().mask_id);
    // the answer slot is the bracketed mask, not part of the appended run
    for (int i = 1; i <= 3; i++) CHECK(p.ids[p.ids.size() - 1 - i] == vocab().mask_id);
    CHECK(p.answer_slot < int64_t(p.ids.size()) - 4);
    CHECK(p.text.find("].<|mask|><|mask|><|mask|>\n\n") != std::string::npos);
    CHECK(vocab().detokenize(p.ids) == p.text);
}

TEST_CASE("layout_prompt: spans partition the ids and detokenize back") {
    auto lay = small_layout(17);
    lay.arrangement = Arrangement::mixed_random;
    lay.question_position = 0.5;
    Rng rng(3);
    auto p = layout_prompt(lay, vocab(), rng);

    REQUIRE(p.example_spans.size() == 10);
    REQUIRE(p.question_span.first >= 0);
    std::vector<std::pair<int64_t, int64_t>> all = p.example_spans;
    all.push_back(p.question_span);
    std::sort(all.begin(), all.end());
    CHECK(all.front().first == 0);
    CHECK(all.back().second == int64_t(p.ids.size()));
    for (size_t i = 0; i + 1 < all.size(); i++) CHECK(all[i].second == all[i + 1].first);

    // each span's slice detokenizes to one rendered block
    Rng replay(3);
    auto arranged = arrange_examples(lay.relevant, lay.distractors, lay.arrangement,
                                     lay.block_position, replay);
    REQUIRE(arranged.size() == 10);
    for (size_t i = 0; i < 10; i++) {
        auto [b, e] = p.example_spans[i];
        std::vector<int32_t> slice(p.ids.begin() + b, p.ids.begin() + e);
        CHECK(vocab().detokenize(slice) == format_example(arranged[i]));
    }
    auto [qb, qe] = p.question_span;
    std::vector<int32_t> qslice(p.ids.begin() + qb, p.ids.begin() + qe);
    std::string qtext = vocab().detokenize(qslice);
    CHECK(qtext.find("Answer:[<|mask|>].") != std::string::npos);
    // spans interleave: the question sits between example spans, mid-prompt
    CHECK(p.example_spans[4].second == qb);
    CHECK(p.example_spans[5].first == qe);
}

TEST_CASE("layout_prompt: identical rng state gives identical bytes") {
    auto lay = small_layout(16);
    lay.arrangement = Arrangement::mixed_random;
    Rng a(77), b(77);
    auto p1 = layout_prompt(lay, vocab(), a);
    auto p2 = layout_prompt(lay, vocab(), b);
    CHECK(p1.text == p2.text);
    CHECK(p1.ids == p2.ids);
    CHECK(p1.answer_slot == p2.answer_slot);
}

// ---------------------------------------------------------------------------
// suite, corpus scan, goldens, export

TEST_CASE("task_suite: sixteen distinct combinations") {
    auto suite = task_suite(2024, 50);
    REQUIRE(suite.size() == 16);
    std::set<std::string> ids;
    for (auto& s : suite) {
        ids.insert(s.id());
        CHECK(s.n_test == 50);
        CHECK(s.seed == 2024);
    }
    CHECK(ids.size() == 16);
    CHECK(ids.count("adjective_smallest") == 1);
    CHECK(ids.count("country_largest") == 1);
}

TEST_CASE("full corpus tokenizes with zero unknowns and audits clean") {
    auto suite = task_suite(31337, 20);
    for (auto& spec : suite) {
        auto td = gen_task_data(spec, lists(), 10, 10);
        REQUIRE(td.relevant_pool.size() == 10);
        REQUIRE(td.distractor_pool.size() == 10);
        REQUIRE(td.test.size() == 20);
        // word/number option pools never overlap
        for (auto& ex : td.relevant_pool)
            for (auto& o : ex.options) CHECK(!all_digits(o));
        for (auto& ex : td.distractor_pool)
            for (auto& o : ex.options) CHECK(all_digits(o));
        for (auto& ex : td.test) {
            ParsedBlock blk{ex.options, std::string(1, ex.label()), 0};
            audit_block(blk, spec.word_task, spec.number_task);
        }
        // one full prompt per task: no unknown-token throw, byte round trip
        PromptLayout lay;
        lay.relevant = td.relevant_pool;
        lay.distractors = td.distractor_pool;
        lay.question = td.test[0];
        Rng rng(spec.seed);
        auto p = layout_prompt(lay, vocab(), rng);
        CHECK(vocab().detokenize(p.ids) == p.text);
    }
}

TEST_CASE("gen_task_data: deterministic and seed-sensitive") {
    auto suite = task_suite(5, 10);
    auto a = gen_task_data(suite[3], lists(), 5, 5);
    auto b = gen_task_data(suite[3], lists(), 5, 5);
    CHECK(a.test[0].options == b.test[0].options);
    CHECK(a.relevant_pool[2].options == b.relevant_pool[2].options);
    auto other = suite[3];
    other.seed = 6;
    auto c = gen_task_data(other, lists(), 5, 5);
    bool same = true;
    for (int i = 0; i < 5; i++) same &= (a.relevant_pool[i].options == c.relevant_pool[i].options);
    CHECK(!same);
}

TEST_CASE("golden prompt snapshots") {
    fs::path dir = fs::path(MASKDIFF_SOURCE_DIR) / "tests" / "golden";
    auto render = [&](Arrangement arr, AnswerConvention conv, int extra) {
        auto spec = task_suite(404, 5)[4];  // verb_smallest
        auto td = gen_task_data(spec, lists(), 10, 40);
        PromptLayout lay;
        lay.relevant = td.relevant_pool;
        lay.distractors = td.distractor_pool;
        lay.arrangement = arr;
        lay.block_position = 0.0;
        lay.question = td.test[0];
        lay.convention = conv;
        lay.extra_masks = extra;
        Rng rng(909);
        return layout_prompt(lay, vocab(), rng);
    };
    auto check_golden = [&](const std::string& name, const Prompt& p) {
        fs::path f = dir / name;
        if (!fs::exists(f) && std::getenv("MASKDIFF_WRITE_GOLDEN")) {
            fs::create_directories(dir);
            std::ofstream out(f, std::ios::binary);
            out << p.text;
            MESSAGE("wrote golden ", f.string());
        }
        REQUIRE_MESSAGE(fs::exists(f), "golden snapshot missing: ", f.string());
        std::ifstream in(f, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        CHECK(ss.str() == p.text);
        // audit the snapshot itself
        auto blocks = parse_prompt_blocks(ss.str());
        for (auto& blk : blocks) audit_block(blk, WordTask::verb, NumberTask::smallest);
    };
    check_golden("prompt_block0_masked.txt",
                 render(Arrangement::block_at_position, AnswerConvention::bracket_single_mask, 0));
    check_golden("prompt_mixed_open2.txt",
                 render(Arrangement::mixed_random, AnswerConvention::open_bracket_plus_masks, 2));
}

TEST_CASE("jsonl export round trip") {
    auto spec = task_suite(77, 6)[0];
    auto td = gen_task_data(spec, lists(), 4, 4);
    fs::path dir = fs::temp_directory_path() / "md_jsonl_test";
    fs::remove_all(dir);
    export_task_jsonl(td, dir.string());
    auto count_lines = [](const fs::path& p) {
        std::ifstream f(p);
        REQUIRE(f.good());
        std::string line;
        int n = 0;
        while (std::getline(f, line))
            if (!line.empty()) n++;
        return n;
    };
    CHECK(count_lines(dir / (spec.id() + ".train.jsonl")) == 8);
    CHECK(count_lines(dir / (spec.id() + ".test.jsonl")) == 6);
    // spot-check a line's fields
    std::ifstream f(dir / (spec.id() + ".test.jsonl"));
    std::string line;
    std::getline(f, line);
    CHECK(line.find("\"options\"") != std::string::npos);
    CHECK(line.find("\"correct\"") != std::string::npos);
    CHECK(line.find("\"kind\"") != std::string::npos);
    CHECK(line.find(td.test[0].options[0]) != std::string::npos);
    fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// multi-dimensional classification datasets

TEST_CASE("multidim: balance, range and determinism") {
    for (int k = 0; k < kNumMdKinds; k++) {
        auto kind = MdKind(k);
        INFO("kind ", md_kind_name(kind));
        auto ds = gen_multidim_dataset(kind, 11, 100, 1000);
        REQUIRE(ds.train.size() == 100);
        REQUIRE(ds.test.size() == 1000);
        auto count_above = [](const std::vector<MdPoint>& v) {
            int n = 0;
            for (auto& p : v) n += p.label;
            return n;
        };
        CHECK(count_above(ds.train) == 50);
        CHECK(count_above(ds.test) == 500);
        for (auto& p : ds.train)
            for (int c : p.coords) {
                CHECK(c >= 1);
                CHECK(c <= 100);
            }
        for (auto& p : ds.test)
            for (int c : p.coords) {
                CHECK(c >= 1);
                CHECK(c <= 100);
            }
        auto again = gen_multidim_dataset(kind, 11, 100, 1000);
        CHECK(again.train[7].coords == ds.train[7].coords);
        CHECK(again.test[123].coords == ds.test[123].coords);
        auto other = gen_multidim_dataset(kind, 12, 100, 1000);
        bool same = true;
        for (int i = 0; i < 100; i++) same &= (other.train[i].coords == ds.train[i].coords);
        CHECK(!same);
    }
}

TEST_CASE("multidim: twenty instances in the standard grid") {
    std::set<std::string> fingerprints;
    for (int k = 0; k < kNumMdKinds; k++)
        for (uint64_t seed = 1; seed <= 5; seed++) {
            auto ds = gen_multidim_dataset(MdKind(k), seed, 20, 40);
            std::string fp = std::string(md_kind_name(ds.kind));
            for (auto& p : ds.train)
                for (int c : p.coords) fp += "," + std::to_string(c);
            fingerprints.insert(fp);
        }
    CHECK(fingerprints.size() == 20);
}

TEST_CASE("order_examples: distance schemes") {
    auto ds = gen_multidim_dataset(MdKind::moons, 3, 30, 40);
    MdPoint probe = ds.test[0];
    auto dist = [&](const MdPoint& p) {
        double s = 0;
        for (int i = 0; i < 3; i++) {
            double d = double(p.coords[i]) - double(probe.coords[i]);
            s += d * d;
        }
        return s;
    };
    Rng rng(4);
    auto dec = order_examples(ds.train, OrderScheme::decreasing_distance, probe, rng);
    REQUIRE(dec.size() == ds.train.size());
    for (size_t i = 0; i + 1 < dec.size(); i++) CHECK(dist(dec[i]) >= dist(dec[i + 1]));
    auto inc = order_examples(ds.train, OrderScheme::increasing_distance, probe, rng);
    for (size_t i = 0; i + 1 < inc.size(); i++) CHECK(dist(inc[i]) <= dist(inc[i + 1]));
    // exact reversal when all distances are distinct
    std::vector<MdPoint> pts;
    for (int i = 0; i < 12; i++) pts.push_back(MdPoint{{i + 1, 1, 1}, i % 2});
    MdPoint origin{{1, 1, 1}, 0};
    auto d2 = order_examples(pts, OrderScheme::decreasing_distance, origin, rng);
    auto i2 = order_examples(pts, OrderScheme::increasing_distance, origin, rng);
    std::reverse(d2.begin(), d2.end());
    for (size_t i = 0; i < pts.size(); i++) CHECK(d2[i].coords == i2[i].coords);
    // random scheme: a permutation, deterministic under the seed
    Rng r1(9), r2(9);
    auto s1 = order_examples(ds.train, OrderScheme::random, probe, r1);
    auto s2 = order_examples(ds.train, OrderScheme::random, probe, r2);
    auto key = [](const std::vector<MdPoint>& v) {
        std::multiset<std::string> m;
        for (auto& p : v)
            m.insert(std::to_string(p.coords[0]) + "," + std::to_string(p.coords[1]) + "," +
                     std::to_string(p.coords[2]) + "," + std::to_string(p.label));
        return m;
    };
    CHECK(key(s1) == key(ds.train));
    for (size_t i = 0; i < s1.size(); i++) CHECK(s1[i].coords == s2[i].coords);
}

TEST_CASE("multidim: jsonl export") {
    auto ds = gen_multidim_dataset(MdKind::circles, 2, 10, 20);
    fs::path dir = fs::temp_directory_path() / "md_multidim_test";
    fs::remove_all(dir);
    export_multidim_jsonl(ds, dir.string());
    std::ifstream f(dir / "circles.seed2.train.jsonl");
    REQUIRE(f.good());
    std::string line;
    int n = 0;
    bool saw_label = false;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        n++;
        CHECK(line.find("\"coords\"") != std::string::npos);
        saw_label |= line.find("\"Above\"") != std::string::npos ||
                     line.find("\"Below\"") != std::string::npos;
    }
    CHECK(n == 10);
    CHECK(saw_label);
    fs::remove_all(dir);
}

TEST_SUITE_END();
