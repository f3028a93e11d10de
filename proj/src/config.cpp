#include "maskdiff/config.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "maskdiff/errors.hpp"
#include "maskdiff/rng.hpp"

namespace maskdiff {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void bad(const std::string& path, const std::string& what) {
    throw ConfigError("config key '" + path + "': " + what);
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) bad(path, "expected an object");
    for (const auto& [key, _] : obj.items()) {
        bool known = false;
        for (const char* a : allowed) known = known || key == a;
        if (!known) throw ConfigError("unknown config key: " + path + "." + key);
    }
}

template <class T>
void get_int(const json& obj, const std::string& path, const char* key, T& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_number_integer() && !v.is_number_unsigned())
        bad(path + "." + key, "expected an integer");
    out = v.get<T>();
}

void get_num(const json& obj, const std::string& path, const char* key, double& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_number()) bad(path + "." + key, "expected a number");
    out = v.get<double>();
}

void get_str(const json& obj, const std::string& path, const char* key, std::string& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_string()) bad(path + "." + key, "expected a string");
    out = v.get<std::string>();
}

template <class T>
void get_vec(const json& obj, const std::string& path, const char* key, std::vector<T>& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_array()) bad(path + "." + key, "expected an array");
    out.clear();
    for (const auto& e : v) {
        if constexpr (std::is_same_v<T, std::string>) {
            if (!e.is_string()) bad(path + "." + key, "expected an array of strings");
        } else if constexpr (std::is_integral_v<T>) {
            if (!e.is_number_integer()) bad(path + "." + key, "expected an array of integers");
        } else {
            if (!e.is_number()) bad(path + "." + key, "expected an array of numbers");
        }
        out.push_back(e.get<T>());
    }
}

void parse_model(const json& j, ModelConfig& m) {
    check_keys(j, "model",
               {"mode", "n_layers", "d_model", "n_heads", "d_ff", "n_ctx", "dtype", "seed"});
    std::string mode = model_mode_name(m.mode), dtype = dtype_name(m.dtype);
    get_str(j, "model", "mode", mode);
    get_str(j, "model", "dtype", dtype);
    if (mode == "diffusion")
        m.mode = ModelMode::diffusion_bidirectional;
    else if (mode == "causal")
        m.mode = ModelMode::causal_ar;
    else
        bad("model.mode", "expected \"diffusion\" or \"causal\"");
    if (dtype == "f32")
        m.dtype = Dtype::f32;
    else if (dtype == "f64")
        m.dtype = Dtype::f64;
    else
        bad("model.dtype", "expected \"f32\" or \"f64\"");
    get_int(j, "model", "n_layers", m.n_layers);
    get_int(j, "model", "d_model", m.d_model);
    get_int(j, "model", "n_heads", m.n_heads);
    get_int(j, "model", "d_ff", m.d_ff);
    get_int(j, "model", "n_ctx", m.n_ctx);
    get_int(j, "model", "seed", m.seed);
    if (m.n_layers < 1 || m.d_model < 1 || m.n_heads < 1 || m.d_ff < 1 || m.n_ctx < 1)
        bad("model", "dimensions must be >= 1");
    if (m.d_model % m.n_heads != 0) bad("model", "d_model must be divisible by n_heads");
}

void parse_pretrain(const json& j, CorpusConfig& c, PretrainConfig& p) {
    check_keys(j, "pretrain",
               {"seq_len", "n_sequences", "episode_min", "episode_max", "steps", "batch_size",
                "lr", "p_min", "p_max", "seed"});
    get_int(j, "pretrain", "seq_len", c.seq_len);
    get_int(j, "pretrain", "n_sequences", c.n_sequences);
    get_int(j, "pretrain", "episode_min", c.episode_min);
    get_int(j, "pretrain", "episode_max", c.episode_max);
    get_int(j, "pretrain", "steps", p.steps);
    get_int(j, "pretrain", "batch_size", p.batch_size);
    get_num(j, "pretrain", "lr", p.adam.lr);
    get_num(j, "pretrain", "p_min", p.p_min);
    get_num(j, "pretrain", "p_max", p.p_max);
    get_int(j, "pretrain", "seed", p.seed);
    if (c.seq_len < 1 || c.n_sequences < 1) bad("pretrain", "corpus sizes must be >= 1");
    if (c.episode_min < 1 || c.episode_max < c.episode_min)
        bad("pretrain", "episode bounds must satisfy 1 <= episode_min <= episode_max");
    if (p.steps < 1 || p.batch_size < 1) bad("pretrain", "steps/batch_size must be >= 1");
    if (!(p.p_min > 0.0 && p.p_min <= p.p_max && p.p_max <= 1.0))
        bad("pretrain", "need 0 < p_min <= p_max <= 1");
    if (!(p.adam.lr > 0.0)) bad("pretrain.lr", "must be > 0");
}

void parse_finetune(const json& j, FinetuneConfig& f, RunConfig::FinetuneData& d) {
    check_keys(j, "finetune",
               {"alpha", "beta", "p_l", "p_u", "max_masks", "curriculum_steps", "steps",
                "batch_size", "grad_accum", "lr", "seed", "n_relevant", "n_distractors",
                "n_per_task"});
    get_num(j, "finetune", "alpha", f.loss.alpha);
    get_num(j, "finetune", "beta", f.loss.beta);
    get_num(j, "finetune", "p_l", f.loss.p_l);
    get_num(j, "finetune", "p_u", f.loss.p_u);
    get_int(j, "finetune", "max_masks", f.loss.max_masks);
    get_int(j, "finetune", "curriculum_steps", f.loss.curriculum_steps);
    get_int(j, "finetune", "steps", f.steps);
    get_int(j, "finetune", "batch_size", f.batch_size);
    get_int(j, "finetune", "grad_accum", f.grad_accum);
    get_num(j, "finetune", "lr", f.adam.lr);
    get_int(j, "finetune", "seed", f.seed);
    get_int(j, "finetune", "n_relevant", d.n_relevant);
    get_int(j, "finetune", "n_distractors", d.n_distractors);
    get_int(j, "finetune", "n_per_task", d.n_per_task);
    if (f.loss.alpha < 0 || f.loss.beta < 0) bad("finetune", "alpha/beta must be >= 0");
    if (!(f.loss.p_l > 0.0 && f.loss.p_l <= f.loss.p_u && f.loss.p_u <= 1.0))
        bad("finetune", "need 0 < p_l <= p_u <= 1");
    if (f.loss.max_masks < 1 || f.loss.curriculum_steps < 1)
        bad("finetune", "max_masks/curriculum_steps must be >= 1");
    if (f.steps < 1 || f.batch_size < 1 || f.grad_accum < 1)
        bad("finetune", "steps/batch_size/grad_accum must be >= 1");
    if (!(f.adam.lr > 0.0)) bad("finetune.lr", "must be > 0");
    if (d.n_relevant < 1 || d.n_distractors < 0 || d.n_per_task < 1)
        bad("finetune", "data counts out of range");
}

void parse_tasks(const json& j, RunConfig::Tasks& t) {
    check_keys(j, "tasks", {"seed", "n_test", "pool_relevant", "pool_distractor"});
    get_int(j, "tasks", "seed", t.seed);
    get_int(j, "tasks", "n_test", t.n_test);
    get_int(j, "tasks", "pool_relevant", t.pool_relevant);
    get_int(j, "tasks", "pool_distractor", t.pool_distractor);
    if (t.n_test < 1 || t.pool_relevant < 1 || t.pool_distractor < 1)
        bad("tasks", "sizes must be >= 1");
}

void parse_experiments(const json& j, ExperimentConfig& e, std::vector<std::string>& names) {
    check_keys(j, "experiments",
               {"names", "positions", "question_positions", "mask_counts", "dot_counts",
                "distractor_counts", "steps_grid", "n_relevant", "n_distractors", "n_test",
                "n_seeds", "seed", "decode_steps", "decode_strategy", "base_position",
                "distractor_extra_masks", "attr_orderings", "attr_questions"});
    get_vec(j, "experiments", "names", names);
    get_vec(j, "experiments", "positions", e.positions);
    get_vec(j, "experiments", "question_positions", e.question_positions);
    get_vec(j, "experiments", "mask_counts", e.mask_counts);
    get_vec(j, "experiments", "dot_counts", e.dot_counts);
    get_vec(j, "experiments", "distractor_counts", e.distractor_counts);
    get_vec(j, "experiments", "steps_grid", e.steps_grid);
    get_int(j, "experiments", "n_relevant", e.n_relevant);
    get_int(j, "experiments", "n_distractors", e.n_distractors);
    get_int(j, "experiments", "n_test", e.n_test);
    get_int(j, "experiments", "n_seeds", e.n_seeds);
    get_int(j, "experiments", "seed", e.seed);
    get_int(j, "experiments", "decode_steps", e.decode.steps);
    std::string strat = decode_strategy_name(e.decode.strategy);
    get_str(j, "experiments", "decode_strategy", strat);
    if (strat == "random")
        e.decode.strategy = DecodeStrategy::random;
    else if (strat == "confidence")
        e.decode.strategy = DecodeStrategy::confidence;
    else
        bad("experiments.decode_strategy", "expected \"random\" or \"confidence\"");
    get_num(j, "experiments", "base_position", e.base_position);
    get_int(j, "experiments", "distractor_extra_masks", e.distractor_extra_masks);
    get_int(j, "experiments", "attr_orderings", e.attr_orderings);
    get_int(j, "experiments", "attr_questions", e.attr_questions);
    validate_experiment_config(e);
    for (const auto& n : names) experiment_from_name(n);  // rejects unknown names
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig cfg;
    check_keys(j, "config", {"model", "pretrain", "finetune", "tasks", "experiments", "output"});
    if (j.contains("model")) parse_model(j.at("model"), cfg.model);
    if (j.contains("pretrain")) parse_pretrain(j.at("pretrain"), cfg.corpus, cfg.pretrain);
    if (j.contains("finetune")) parse_finetune(j.at("finetune"), cfg.finetune, cfg.finetune_data);
    if (j.contains("tasks")) parse_tasks(j.at("tasks"), cfg.tasks);
    if (j.contains("experiments"))
        parse_experiments(j.at("experiments"), cfg.experiments, cfg.experiment_names);
    if (j.contains("output")) {
        check_keys(j.at("output"), "output", {"dir"});
        get_str(j.at("output"), "output", "dir", cfg.output.dir);
        if (cfg.output.dir.empty()) bad("output.dir", "must not be empty");
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw DataError("cannot read config file: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_run_config(text);
}

std::string resolved_config_json(const RunConfig& cfg) {
    ordered_json j;
    j["model"] = {{"mode", model_mode_name(cfg.model.mode)},
                  {"n_layers", cfg.model.n_layers},
                  {"d_model", cfg.model.d_model},
                  {"n_heads", cfg.model.n_heads},
                  {"d_ff", cfg.model.d_ff},
                  {"n_ctx", cfg.model.n_ctx},
                  {"dtype", dtype_name(cfg.model.dtype)},
                  {"seed", cfg.model.seed}};
    j["pretrain"] = {{"seq_len", cfg.corpus.seq_len},
                     {"n_sequences", cfg.corpus.n_sequences},
                     {"episode_min", cfg.corpus.episode_min},
                     {"episode_max", cfg.corpus.episode_max},
                     {"steps", cfg.pretrain.steps},
                     {"batch_size", cfg.pretrain.batch_size},
                     {"lr", cfg.pretrain.adam.lr},
                     {"p_min", cfg.pretrain.p_min},
                     {"p_max", cfg.pretrain.p_max},
                     {"seed", cfg.pretrain.seed}};
    j["finetune"] = {{"alpha", cfg.finetune.loss.alpha},
                     {"beta", cfg.finetune.loss.beta},
                     {"p_l", cfg.finetune.loss.p_l},
                     {"p_u", cfg.finetune.loss.p_u},
                     {"max_masks", cfg.finetune.loss.max_masks},
                     {"curriculum_steps", cfg.finetune.loss.curriculum_steps},
                     {"steps", cfg.finetune.steps},
                     {"batch_size", cfg.finetune.batch_size},
                     {"grad_accum", cfg.finetune.grad_accum},
                     {"lr", cfg.finetune.adam.lr},
                     {"seed", cfg.finetune.seed},
                     {"n_relevant", cfg.finetune_data.n_relevant},
                     {"n_distractors", cfg.finetune_data.n_distractors},
                     {"n_per_task", cfg.finetune_data.n_per_task}};
    j["tasks"] = {{"seed", cfg.tasks.seed},
                  {"n_test", cfg.tasks.n_test},
                  {"pool_relevant", cfg.tasks.pool_relevant},
                  {"pool_distractor", cfg.tasks.pool_distractor}};
    j["experiments"] = {{"names", cfg.experiment_names},
                        {"positions", cfg.experiments.positions},
                        {"question_positions", cfg.experiments.question_positions},
                        {"mask_counts", cfg.experiments.mask_counts},
                        {"dot_counts", cfg.experiments.dot_counts},
                        {"distractor_counts", cfg.experiments.distractor_counts},
                        {"steps_grid", cfg.experiments.steps_grid},
                        {"n_relevant", cfg.experiments.n_relevant},
                        {"n_distractors", cfg.experiments.n_distractors},
                        {"n_test", cfg.experiments.n_test},
                        {"n_seeds", cfg.experiments.n_seeds},
                        {"seed", cfg.experiments.seed},
                        {"decode_steps", cfg.experiments.decode.steps},
                        {"decode_strategy", decode_strategy_name(cfg.experiments.decode.strategy)},
                        {"base_position", cfg.experiments.base_position},
                        {"distractor_extra_masks", cfg.experiments.distractor_extra_masks},
                        {"attr_orderings", cfg.experiments.attr_orderings},
                        {"attr_questions", cfg.experiments.attr_questions}};
    j["output"] = {{"dir", cfg.output.dir}};
    return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
    uint64_t h = fnv1a64(resolved_config_json(cfg));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
    return std::string(buf).substr(0, 12);
}

std::string make_run_dir(const RunConfig& cfg, const std::string& subcommand) {
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char ts[32];
    std::strftime(ts, sizeof(ts), "%Y%m%d-%H%M%S", &tm);

    namespace fs = std::filesystem;
    std::string stem = cfg.output.dir + "/" + subcommand + "-" + config_hash(cfg) + "-" + ts;
    std::string dir = stem;
    for (int n = 1; fs::exists(dir); n++) dir = stem + "-" + std::to_string(n);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create run directory " + dir + ": " + ec.message());

    std::ofstream f(dir + "/config.json", std::ios::binary);
    if (!f.good()) throw DataError("cannot write " + dir + "/config.json");
    f << resolved_config_json(cfg);
    return dir;
}

}  // namespace maskdiff
