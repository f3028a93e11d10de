#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "maskdiff/rng.hpp"

namespace maskdiff {

// ---------------------------------------------------------------------------
// word lists

// categories in file order; words keep file order within a category.
struct Wordlists {
    std::vector<std::string> categories;
    std::vector<std::vector<std::string>> words;

    bool has(std::string_view category) const;
    const std::vector<std::string>& at(std::string_view category) const;  // DataError if missing
};

// one `category<TAB>word` per line, '#' comment lines allowed.
// validates: no duplicate within a category, categories pairwise disjoint,
// no purely numeric word (numbers are reserved for the distractor tasks).
Wordlists load_wordlists(const std::string& path);

// $MASKDIFF_DATA_DIR/wordlists.tsv when the env var is set, else the
// data/ directory next to the sources.
std::string default_wordlists_path();

// ---------------------------------------------------------------------------
// vocabulary

inline constexpr const char* kEosText = "<|eos|>";
inline constexpr const char* kMaskText = "<|mask|>";

namespace detail {
struct SvHash {
    using is_transparent = void;
    size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
};
struct SvEq {
    using is_transparent = void;
    bool operator()(std::string_view a, std::string_view b) const { return a == b; }
};
}  // namespace detail

// closed token table; spaces attach to the following word/number token so
// detokenize(tokenize(s)) == s byte-exactly for every generated prompt.
struct Vocab {
    std::vector<std::string> tokens;  // id -> text
    std::unordered_map<std::string, int32_t, detail::SvHash, detail::SvEq> to_id;
    int32_t eos_id = 0;
    int32_t mask_id = 1;
    size_t max_token_len = 0;

    int64_t size() const { return (int64_t)tokens.size(); }
    int32_t id(std::string_view tok) const;  // DataError if unknown
    std::vector<int32_t> tokenize(std::string_view text) const;  // greedy longest match
    std::string detokenize(std::span<const int32_t> ids) const;
};

// id layout: 0 eos, 1 mask, structural tokens, bare answer labels, then one
// space-prefixed token per word (category file order), then " 1".." <max_number>".
Vocab build_vocab(const Wordlists& lists, int max_number = 1000);

// ---------------------------------------------------------------------------
// few-shot examples

enum class ExampleKind { relevant, distractor };

struct FewShotExample {
    std::array<std::string, 3> options;
    int correct = 0;  // 0..2 -> A..C
    ExampleKind kind = ExampleKind::relevant;

    char label() const { return char('A' + correct); }
};

enum class WordTask { country, capitalised, verb, adjective, animal, colour, emotion, object };
enum class NumberTask { smallest, largest };

inline constexpr int kNumWordTasks = 8;
inline constexpr int kNumNumberTasks = 2;

const char* word_task_name(WordTask t);
const char* number_task_name(NumberTask t);

// which category the correct option comes from and which categories the two
// foils are drawn from.
struct TaskRule {
    std::string target;
    std::vector<std::string> contrast;
};
TaskRule task_rule(WordTask t);

// index of the option a number task accepts.
int number_correct_slot(const std::array<int, 3>& values, NumberTask task);

FewShotExample gen_word_example(WordTask task, const Wordlists& lists, Rng& rng);
FewShotExample gen_number_example(NumberTask task, Rng& rng);

// `Options: (A) {o1}, (B) {o2}, (C) {o3}\nAnswer:[{L}].\n\n` -- byte-exact.
std::string format_example(const FewShotExample& ex);

// ---------------------------------------------------------------------------
// prompt layout

enum class Arrangement { mixed_random, block_at_position };
enum class AnswerConvention { bracket_single_mask, open_bracket_plus_masks };

struct PromptLayout {
    std::vector<FewShotExample> relevant;
    std::vector<FewShotExample> distractors;
    Arrangement arrangement = Arrangement::block_at_position;
    double block_position = 1.0;     // r in [0,1]; block starts at round(r * n_distractors)
    FewShotExample question;
    double question_position = 1.0;  // 0 = left of all examples, 1 = right
    AnswerConvention convention = AnswerConvention::bracket_single_mask;
    int extra_masks = 0;  // open-bracket: masks after "Answer:["; bracket: after "]."
    int extra_dots = 0;   // bracket: "." tokens appended after "]."
};

struct Prompt {
    std::string text;
    std::vector<int32_t> ids;
    int64_t answer_slot = -1;  // index of the first mask token; -1 when none
    char gold = '?';
    // [begin,end) token ranges of the arranged in-context examples, plus the
    // rendered question; attribution groups token scores by these
    std::vector<std::pair<int64_t, int64_t>> example_spans;
    std::pair<int64_t, int64_t> question_span{-1, -1};
};

// block placement keeps the relevant block intact; mixed_random draws the
// relevant positions as a uniform subset while both groups keep their order.
std::vector<FewShotExample> arrange_examples(const std::vector<FewShotExample>& relevant,
                                             const std::vector<FewShotExample>& distractors,
                                             Arrangement arrangement, double block_position,
                                             Rng& rng);

// n_ctx > 0 enables the overflow check (DataError).
Prompt layout_prompt(const PromptLayout& layout, const Vocab& vocab, Rng& rng, int64_t n_ctx = 0);

// ---------------------------------------------------------------------------
// the 16-task suite

struct TaskSpec {
    WordTask word_task{};
    NumberTask number_task{};
    uint64_t seed = 0;
    int n_test = 1000;

    std::string id() const;  // "<word>_<number>", e.g. "adjective_smallest"
};

struct TaskData {
    TaskSpec spec;
    std::vector<FewShotExample> relevant_pool;
    std::vector<FewShotExample> distractor_pool;
    std::vector<FewShotExample> test;
};

std::vector<TaskSpec> task_suite(uint64_t seed, int n_test = 1000);
TaskData gen_task_data(const TaskSpec& spec, const Wordlists& lists, int pool_relevant = 50,
                       int pool_distractor = 50);

// <dir>/<id>.train.jsonl (pools, kind field) and <dir>/<id>.test.jsonl
void export_task_jsonl(const TaskData& task, const std::string& dir);

}  // namespace maskdiff
