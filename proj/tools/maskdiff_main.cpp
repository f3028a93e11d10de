#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "maskdiff/checkpoint.hpp"
#include "maskdiff/config.hpp"
#include "maskdiff/errors.hpp"
#include "maskdiff/report.hpp"
#include "maskdiff/threadpool.hpp"

namespace fs = std::filesystem;
using namespace maskdiff;

namespace {

struct Session {
    RunConfig cfg;
    Vocab vocab;
    Wordlists lists;

    Session(const RunConfig& c) : cfg(c), lists(load_wordlists(default_wordlists_path())) {
        vocab = build_vocab(lists);
    }

    std::vector<TaskData> tasks() const {
        auto suite = task_suite(cfg.tasks.seed, cfg.tasks.n_test);
        std::vector<TaskData> out;
        for (const auto& spec : suite)
            out.push_back(
                gen_task_data(spec, lists, cfg.tasks.pool_relevant, cfg.tasks.pool_distractor));
        return out;
    }

    Model load_model(const std::string& path) const {
        Model m = load_checkpoint(path);
        if (m.config.vocab_size != (int64_t)vocab.size())
            throw DataError("checkpoint vocabulary (" + std::to_string(m.config.vocab_size) +
                            ") does not match the wordlists (" + std::to_string(vocab.size()) +
                            " tokens)");
        return m;
    }
};

int cmd_gen_tasks(Session& s) {
    std::string dir = make_run_dir(s.cfg, "gen-tasks");
    fs::create_directories(dir + "/tasks");
    auto tasks = s.tasks();
    for (const auto& t : tasks) export_task_jsonl(t, dir + "/tasks");

    // one rendered prompt per task, a frozen human-inspectable snapshot
    std::ofstream golden(dir + "/tasks/golden_prompts.txt", std::ios::binary);
    if (!golden.good()) throw DataError("cannot write golden_prompts.txt");
    for (const auto& t : tasks) {
        CellSpec spec;
        spec.n_relevant = std::min(s.cfg.experiments.n_relevant, s.cfg.tasks.pool_relevant);
        spec.n_distractors = std::min(s.cfg.experiments.n_distractors, s.cfg.tasks.pool_distractor);
        CellLayouts cl = build_cell_layouts(t, s.cfg.experiments, 0, spec);
        Rng arr(cl.arrange_seed);
        Prompt p = layout_prompt(cl.layouts.front(), s.vocab, arr);
        golden << "=== " << t.spec.id() << " (gold " << p.gold << ")\n" << p.text << "\n";
    }
    std::cout << dir << "\n";
    return 0;
}

int cmd_pretrain(Session& s) {
    std::string dir = make_run_dir(s.cfg, "pretrain");
    ModelConfig mc = s.cfg.model;
    mc.vocab_size = (int64_t)s.vocab.size();
    Model model = init_model(mc);

    CorpusConfig cc = s.cfg.corpus;
    cc.seed = Rng(s.cfg.pretrain.seed).fork("corpus").seed();
    if (cc.seq_len > mc.n_ctx)
        throw ConfigError("pretrain.seq_len " + std::to_string(cc.seq_len) +
                          " exceeds model.n_ctx " + std::to_string(mc.n_ctx));
    auto corpus = build_corpus(s.vocab, s.lists, cc);

    PretrainConfig pc = s.cfg.pretrain;
    pc.log_csv = dir + "/pretrain_log.csv";
    auto logs = pretrain(model, corpus, pc);
    save_checkpoint(model, dir + "/model.ckpt");
    std::fprintf(stderr, "final loss %.6g over %zu steps\n",
                 logs.empty() ? 0.0 : logs.back().loss, logs.size());
    std::cout << dir << "\n";
    return 0;
}

int cmd_finetune(Session& s, const std::string& checkpoint) {
    std::string dir = make_run_dir(s.cfg, "finetune");
    Model model = s.load_model(checkpoint);
    if (model.config.mode != ModelMode::diffusion_bidirectional)
        throw ConfigError("finetune needs a diffusion checkpoint");

    auto tasks = s.tasks();
    auto pairs = finetune_pairs(s.vocab, tasks, s.cfg.finetune_data.n_relevant,
                                s.cfg.finetune_data.n_distractors,
                                s.cfg.finetune_data.n_per_task, s.cfg.finetune.seed);
    FinetuneConfig fc = s.cfg.finetune;
    fc.loss.n_ctx = model.config.n_ctx;
    fc.log_csv = dir + "/finetune_log.csv";
    finetune(model, pairs, fc);
    save_checkpoint(model, dir + "/model.ckpt");
    std::cout << dir << "\n";
    return 0;
}

int cmd_eval(Session& s, const std::string& checkpoint) {
    for (const auto& name : s.cfg.experiment_names) {
        ExperimentKind kind = experiment_from_name(name);
        if (kind == ExperimentKind::attribution || kind == ExperimentKind::mask_gradient_table)
            throw ConfigError("experiment '" + name + "' runs under the attribute subcommand");
    }
    std::string dir = make_run_dir(s.cfg, "eval");
    Model model = s.load_model(checkpoint);
    auto tasks = s.tasks();
    const ExperimentConfig& e = s.cfg.experiments;

    for (const auto& name : s.cfg.experiment_names) {
        std::vector<ResultRow> rows;
        switch (experiment_from_name(name)) {
            case ExperimentKind::locality: rows = run_locality_sweep(model, s.vocab, tasks, e); break;
            case ExperimentKind::mask_location:
                rows = run_mask_location_sweep(model, s.vocab, tasks, e);
                break;
            case ExperimentKind::extra_mask_sweep:
                rows = run_extra_mask_sweep(model, s.vocab, tasks, e);
                break;
            case ExperimentKind::dots_ablation:
                rows = run_extra_mask_sweep(model, s.vocab, tasks, e, true);
                break;
            case ExperimentKind::distractor_sweep:
                rows = run_distractor_sweep(model, s.vocab, tasks, e);
                break;
            case ExperimentKind::unmask_recovery:
                rows = run_unmask_recovery(model, s.vocab, tasks, e);
                break;
            case ExperimentKind::locality_x_masks:
                rows = run_locality_x_masks(model, s.vocab, tasks, e);
                break;
            case ExperimentKind::confidence_entropy:
                rows = run_confidence_entropy(model, s.vocab, tasks, e);
                break;
            case ExperimentKind::few_step_robustness:
                rows = run_few_step_robustness(model, s.vocab, tasks, e);
                break;
            case ExperimentKind::gain_vs_degradation: {
                GainDegradation gd = run_gain_vs_degradation(model, s.vocab, tasks, e);
                rows = gd.rows;
                nlohmann::ordered_json j;
                j["r_defined"] = gd.r.defined;
                j["r"] = gd.r.r;
                j["per_task"] = nlohmann::ordered_json::array();
                for (const auto& pt : gd.per_task)
                    j["per_task"].push_back({{"task", pt.task_id},
                                             {"gain", pt.gain},
                                             {"degradation", pt.degradation}});
                std::ofstream f(dir + "/gain_vs_degradation.json", std::ios::binary);
                if (!f.good()) throw DataError("cannot write gain_vs_degradation.json");
                f << j.dump(2) << "\n";
                break;
            }
            case ExperimentKind::attribution:
            case ExperimentKind::mask_gradient_table: break;  // rejected above
        }
        write_results_csv(dir + "/results_" + name + ".csv", rows);
    }
    std::cout << dir << "\n";
    return 0;
}

int cmd_attribute(Session& s, const std::string& checkpoint) {
    std::string dir = make_run_dir(s.cfg, "attribute");
    Model model = s.load_model(checkpoint);
    auto tasks = s.tasks();
    const ExperimentConfig& e = s.cfg.experiments;

    std::ofstream pos(dir + "/attribution_positions.csv", std::ios::binary);
    if (!pos.good()) throw DataError("cannot write attribution_positions.csv");
    pos << "task_id,slot,mean_score\n";
    std::ofstream table(dir + "/mask_gradient_table.csv", std::ios::binary);
    if (!table.good()) throw DataError("cannot write mask_gradient_table.csv");
    table << "task_id,mask_mean,last50_non_mask_mean,non_mask_mean,n_mask,n_last,n_non_mask\n";

    char buf[256];
    for (const auto& t : tasks) {
        AttributionSummary sum =
            run_attribution(model, s.vocab, t, e, dir + "/attribution_" + t.spec.id() + ".jsonl");
        for (size_t i = 0; i < sum.position_means.size(); i++) {
            std::snprintf(buf, sizeof(buf), "%s,%zu,%.17g\n", t.spec.id().c_str(), i,
                          sum.position_means[i]);
            pos << buf;
        }
        MaskGradientTable mg = run_mask_gradient_table(model, s.vocab, t, e);
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%lld,%lld,%lld\n",
                      t.spec.id().c_str(), mg.mask_mean, mg.last_non_mask_mean, mg.non_mask_mean,
                      (long long)mg.n_mask, (long long)mg.n_last, (long long)mg.n_non_mask);
        table << buf;
    }
    std::cout << dir << "\n";
    return 0;
}

int cmd_report(Session& s, std::vector<std::string> inputs, const std::string& in_dir) {
    if (!in_dir.empty()) {
        std::vector<std::string> found;
        if (!fs::is_directory(in_dir)) throw DataError("not a directory: " + in_dir);
        for (const auto& entry : fs::directory_iterator(in_dir)) {
            std::string name = entry.path().filename().string();
            if (name.rfind("results_", 0) == 0 && entry.path().extension() == ".csv")
                found.push_back(entry.path().string());
        }
        std::sort(found.begin(), found.end());
        inputs.insert(inputs.end(), found.begin(), found.end());
    }
    if (inputs.empty()) throw DataError("no data: report needs results CSVs");

    std::vector<ResultRow> rows;
    for (const auto& path : inputs) {
        auto part = read_results_csv(path);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    std::string dir = make_run_dir(s.cfg, "report");
    for (const auto& f : write_report(rows, dir)) std::fprintf(stderr, "wrote %s\n", f.c_str());
    std::cout << dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"maskdiff: a desk-scale masked diffusion language model laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir, precision;
    int64_t seed = 0;
    int parallel = 0;
    auto* opt_config = app.add_option("--config", config_path, "JSON run configuration");
    auto* opt_seed = app.add_option("--seed", seed, "override every config seed");
    auto* opt_out = app.add_option("--out", out_dir, "override output.dir");
    app.add_option("--parallel", parallel, "worker thread cap")->check(CLI::PositiveNumber);
    app.add_option("--precision", precision, "parameter precision")
        ->check(CLI::IsMember({"32", "64"}));

    auto* gen = app.add_subcommand("gen-tasks", "materialize the task suite as JSONL + goldens");
    auto* pre = app.add_subcommand("pretrain", "train a model on the synthetic episode corpus");
    auto* fin = app.add_subcommand("finetune", "mask-agnostic fine-tuning from a checkpoint");
    auto* eva = app.add_subcommand("eval", "run the configured experiments");
    auto* att = app.add_subcommand("attribute", "gradient attribution and the mask table");
    auto* rep = app.add_subcommand("report", "aggregate results CSVs into tables and charts");
    // global flags remain usable after the subcommand name
    for (auto* sub : {gen, pre, fin, eva, att, rep}) sub->fallthrough();

    std::string ckpt_fin, ckpt_eval, ckpt_att, report_dir;
    std::vector<std::string> report_inputs;
    fin->add_option("--checkpoint", ckpt_fin, "input model")->required();
    eva->add_option("--checkpoint", ckpt_eval, "input model")->required();
    att->add_option("--checkpoint", ckpt_att, "input model")->required();
    rep->add_option("inputs", report_inputs, "results CSV files");
    rep->add_option("--in", report_dir, "directory to scan for results_*.csv");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        (void)opt_config;
        if (*opt_seed) {
            cfg.model.seed = (uint64_t)seed;
            cfg.pretrain.seed = (uint64_t)seed;
            cfg.finetune.seed = (uint64_t)seed;
            cfg.tasks.seed = (uint64_t)seed;
            cfg.experiments.seed = (uint64_t)seed;
        }
        if (*opt_out) cfg.output.dir = out_dir;
        if (!precision.empty()) cfg.model.dtype = precision == "64" ? Dtype::f64 : Dtype::f32;
        if (parallel > 0) mt::set_max_threads(parallel);

        Session s(cfg);
        if (gen->parsed()) return cmd_gen_tasks(s);
        if (pre->parsed()) return cmd_pretrain(s);
        if (fin->parsed()) return cmd_finetune(s, ckpt_fin);
        if (eva->parsed()) return cmd_eval(s, ckpt_eval);
        if (att->parsed()) return cmd_attribute(s, ckpt_att);
        if (rep->parsed()) return cmd_report(s, report_inputs, report_dir);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "contract error: %s\n", e.what());
        return 5;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
