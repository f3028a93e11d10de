#include "maskdiff/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "maskdiff/errors.hpp"
#include "maskdiff/threadpool.hpp"

namespace maskdiff {

// ---------------------------------------------------------------------------
// experiment names

const char* experiment_name(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::locality: return "locality";
        case ExperimentKind::mask_location: return "mask-location";
        case ExperimentKind::extra_mask_sweep: return "extra-mask-sweep";
        case ExperimentKind::dots_ablation: return "dots-ablation";
        case ExperimentKind::distractor_sweep: return "distractor-sweep";
        case ExperimentKind::unmask_recovery: return "unmask-recovery";
        case ExperimentKind::locality_x_masks: return "locality-x-masks";
        case ExperimentKind::attribution: return "attribution";
        case ExperimentKind::mask_gradient_table: return "mask-gradient-table";
        case ExperimentKind::confidence_entropy: return "confidence-entropy";
        case ExperimentKind::few_step_robustness: return "few-step-robustness";
        case ExperimentKind::gain_vs_degradation: return "gain-vs-degradation";
    }
    MD_CHECK(false, "unreachable experiment kind");
    return "";
}

ExperimentKind experiment_from_name(std::string_view name) {
    for (int k = 0; k <= (int)ExperimentKind::gain_vs_degradation; k++)
        if (name == experiment_name((ExperimentKind)k)) return (ExperimentKind)k;
    throw ConfigError("unknown experiment: '" + std::string(name) + "'");
}

void validate_experiment_config(const ExperimentConfig& cfg) {
    if (cfg.positions.empty() || cfg.question_positions.empty() || cfg.mask_counts.empty() ||
        cfg.dot_counts.empty() || cfg.distractor_counts.empty() || cfg.steps_grid.empty())
        throw ConfigError("experiment grids must be nonempty");
    if (cfg.n_seeds < 1) throw ConfigError("need at least one seed");
    if (cfg.n_test < 1) throw ConfigError("need at least one test question per cell");
    if (cfg.n_relevant < 0 || cfg.n_distractors < 0 || cfg.n_relevant + cfg.n_distractors < 1)
        throw ConfigError("need at least one in-context example");
    if (cfg.decode.steps < 1) throw ConfigError("decode steps must be >= 1");
    if (cfg.attr_orderings < 1 || cfg.attr_questions < 1)
        throw ConfigError("attribution needs >= 1 orderings and questions");
    for (double p : cfg.positions)
        if (p < 0.0 || p > 1.0) throw ConfigError("block positions must lie in [0,1]");
    for (double q : cfg.question_positions)
        if (q < 0.0 || q > 1.0) throw ConfigError("question positions must lie in [0,1]");
    for (int k : cfg.mask_counts)
        if (k < 0) throw ConfigError("mask counts must be >= 0");
    for (int k : cfg.dot_counts)
        if (k < 0) throw ConfigError("dot counts must be >= 0");
    for (int k : cfg.distractor_counts)
        if (k < 0) throw ConfigError("distractor counts must be >= 0");
    for (int s : cfg.steps_grid)
        if (s < 1) throw ConfigError("step counts must be >= 1");
}

// ---------------------------------------------------------------------------
// statistics

static double clip01(double v) { return std::min(1.0, std::max(0.0, v)); }

Interval binomial_ci(int64_t correct, int64_t total, double z) {
    MD_CHECK(total > 0 && correct >= 0 && correct <= total, "binomial_ci: bad counts");
    double p = (double)correct / (double)total;
    double se = std::sqrt(p * (1.0 - p) / (double)total);
    return {p, clip01(p - z * se), clip01(p + z * se)};
}

Interval cross_task_ci(std::span<const double> accuracies, double z) {
    MD_CHECK(!accuracies.empty(), "cross_task_ci: no accuracies");
    int64_t n = (int64_t)accuracies.size();
    double m = std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / (double)n;
    double se = 0.0;
    if (n > 1) {
        double ss = 0.0;
        for (double a : accuracies) ss += (a - m) * (a - m);
        se = std::sqrt(ss / (double)(n - 1)) / std::sqrt((double)n);
    }
    return {m, clip01(m - z * se), clip01(m + z * se)};
}

double degradation_metric(std::span<const double> accuracies) {
    MD_CHECK(accuracies.size() >= 2, "degradation metric needs >= 2 accuracies");
    double mx = *std::max_element(accuracies.begin(), accuracies.end());
    double mn = *std::min_element(accuracies.begin(), accuracies.end());
    if (mx <= 0.0) throw NumericError("degradation metric undefined: max accuracy is zero");
    return (mx - mn) / mx * 100.0;
}

PearsonR pearson_r(std::span<const double> x, std::span<const double> y) {
    MD_CHECK(x.size() == y.size(), "pearson_r: length mismatch");
    int64_t n = (int64_t)x.size();
    if (n < 3) return {};
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / (double)n;
    double my = std::accumulate(y.begin(), y.end(), 0.0) / (double)n;
    double sxx = 0, syy = 0, sxy = 0;
    for (int64_t i = 0; i < n; i++) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return {};  // a constant column has no correlation
    return {true, sxy / std::sqrt(sxx * syy)};
}

// ---------------------------------------------------------------------------
// cell evaluation

char extract_label(const Vocab& vocab, std::span<const int32_t> decoded, int64_t answer_slot) {
    if (answer_slot < 0 || answer_slot >= (int64_t)decoded.size()) return '?';
    int32_t tok = decoded[(size_t)answer_slot];
    if (tok < 0 || tok >= vocab.size()) return '?';
    const std::string& text = vocab.tokens[(size_t)tok];
    return text.empty() ? '?' : text[0];
}

CellResult evaluate_cell(const Model& model, const Vocab& vocab,
                         std::span<const PromptLayout> layouts, const DecodeConfig& decode,
                         uint64_t arrange_seed) {
    MD_CHECK(!layouts.empty(), "evaluate_cell: no prompts");
    CellResult res;
    Rng decode_seeds = Rng(arrange_seed).fork("decode");
    double conf_sum = 0, ent_sum = 0;
    for (size_t i = 0; i < layouts.size(); i++) {
        // one fresh stream per prompt, all seeded alike: every test point in
        // the cell sees the identical arrangement draw
        Rng arr(arrange_seed);
        Prompt p = layout_prompt(layouts[i], vocab, arr, model.config.n_ctx);
        MD_CHECK(p.answer_slot >= 0, "cell prompt has no answer slot");
        DecodeConfig dc = decode;
        dc.seed = decode_seeds.fork((uint64_t)i).seed();
        auto [out, diag] = iterative_unmask(model, p.ids, dc);
        bool found = false;
        for (const auto& rec : diag.records) {
            if (rec.position != p.answer_slot) continue;
            conf_sum += rec.confidence;
            ent_sum += rec.entropy;
            found = true;
            break;
        }
        MD_CHECK(found, "decode produced no record for the answer slot");
        char pred = extract_label(vocab, out, p.answer_slot);
        res.predicted.push_back(pred);
        res.gold.push_back(p.gold);
        if (pred == p.gold) res.n_correct++;
    }
    res.n_total = (int64_t)layouts.size();
    Interval ci = binomial_ci(res.n_correct, res.n_total);
    res.accuracy = ci.mean;
    res.ci_low = ci.lo;
    res.ci_high = ci.hi;
    res.mean_confidence = conf_sum / (double)res.n_total;
    res.mean_entropy = ent_sum / (double)res.n_total;
    return res;
}

CellLayouts build_cell_layouts(const TaskData& task, const ExperimentConfig& cfg,
                               int64_t seed_index, const CellSpec& spec) {
    if ((int)task.relevant_pool.size() < spec.n_relevant)
        throw DataError("relevant pool of " + task.spec.id() + " has " +
                        std::to_string(task.relevant_pool.size()) + " examples, cell needs " +
                        std::to_string(spec.n_relevant));
    if ((int)task.distractor_pool.size() < spec.n_distractors)
        throw DataError("distractor pool of " + task.spec.id() + " is too small");
    if ((int)task.test.size() < cfg.n_test)
        throw DataError("test split of " + task.spec.id() + " has " +
                        std::to_string(task.test.size()) + " questions, cell needs " +
                        std::to_string(cfg.n_test));

    // the selection stream depends on (run seed, task, replicate) only, so
    // every cell of a sweep sees the same subsets in the same order and a
    // smaller count is a prefix of a larger one
    Rng sel = Rng(cfg.seed).fork("sel:" + task.spec.id()).fork((uint64_t)seed_index);
    auto pick = [](const std::vector<FewShotExample>& pool, int n, Rng r) {
        std::vector<int64_t> idx(pool.size());
        std::iota(idx.begin(), idx.end(), 0);
        r.shuffle(idx);
        std::vector<FewShotExample> out;
        for (int i = 0; i < n; i++) out.push_back(pool[(size_t)idx[(size_t)i]]);
        return out;
    };

    CellLayouts cl;
    cl.arrange_seed = sel.fork("arrange").seed();
    std::vector<FewShotExample> rel = pick(task.relevant_pool, spec.n_relevant, sel.fork("rel"));
    std::vector<FewShotExample> dis =
        pick(task.distractor_pool, spec.n_distractors, sel.fork("dis"));
    for (int i = 0; i < cfg.n_test; i++) {
        PromptLayout pl;
        pl.relevant = rel;
        pl.distractors = dis;
        pl.arrangement = spec.arrangement;
        pl.block_position = spec.block_position;
        pl.question = task.test[(size_t)i];
        pl.question_position = spec.question_position;
        pl.convention = spec.convention;
        pl.extra_masks = spec.extra_masks;
        pl.extra_dots = spec.extra_dots;
        cl.layouts.push_back(std::move(pl));
    }
    return cl;
}

std::vector<ResultRow> run_cells(const Model& model, const Vocab& vocab,
                                 std::span<const TaskData> tasks, const ExperimentConfig& cfg,
                                 std::string_view experiment, std::span<const CellSpec> cells) {
    validate_experiment_config(cfg);
    MD_CHECK(!tasks.empty(), "run_cells: no tasks");
    MD_CHECK(!cells.empty(), "run_cells: no cells");
    int64_t n_cells = (int64_t)cells.size();
    int64_t n_jobs = (int64_t)tasks.size() * cfg.n_seeds * n_cells;
    std::vector<ResultRow> rows((size_t)n_jobs);

    mt::parallel_for(n_jobs, 1, [&](int64_t lo, int64_t hi) {
        mt::SerialSection serial;  // cells own their thread; kernels stay inline
        for (int64_t j = lo; j < hi; j++) {
            int64_t ci = j % n_cells;
            int64_t si = (j / n_cells) % cfg.n_seeds;
            int64_t ti = j / (n_cells * cfg.n_seeds);
            const CellSpec& spec = cells[(size_t)ci];
            CellLayouts cl = build_cell_layouts(tasks[(size_t)ti], cfg, si, spec);
            CellResult res = evaluate_cell(model, vocab, cl.layouts, spec.decode, cl.arrange_seed);
            ResultRow& r = rows[(size_t)j];
            r.experiment = std::string(experiment);
            r.task_id = tasks[(size_t)ti].spec.id();
            r.seed = si;
            r.cell_key = spec.cell_key;
            r.cell_value = spec.cell_value;
            r.extra_masks = spec.extra_masks;
            r.steps = spec.decode.steps;
            r.strategy = decode_strategy_name(spec.decode.strategy);
            r.accuracy = res.accuracy;
            r.ci_low = res.ci_low;
            r.ci_high = res.ci_high;
            r.confidence = res.mean_confidence;
            r.entropy = res.mean_entropy;
        }
    });
    return rows;
}

// ---------------------------------------------------------------------------
// protocol builders

static CellSpec base_cell(const ExperimentConfig& cfg) {
    CellSpec s;
    s.block_position = cfg.base_position;
    s.n_relevant = cfg.n_relevant;
    s.n_distractors = cfg.n_distractors;
    s.decode = cfg.decode;
    return s;
}

// a cell that appends k masks: k=0 keeps the closed-bracket answer
static CellSpec masked_cell(const ExperimentConfig& cfg, int k) {
    CellSpec s = base_cell(cfg);
    s.convention =
        k > 0 ? AnswerConvention::open_bracket_plus_masks : AnswerConvention::bracket_single_mask;
    s.extra_masks = k;
    return s;
}

static std::string question_pos_name(double q) {
    if (q == 0.0) return "left";
    if (q == 0.5) return "middle";
    if (q == 1.0) return "right";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", q);
    return buf;
}

std::vector<ResultRow> run_locality_sweep(const Model& m, const Vocab& v,
                                          std::span<const TaskData> tasks,
                                          const ExperimentConfig& cfg) {
    std::vector<CellSpec> cells;
    for (double r : cfg.positions) {
        CellSpec s = base_cell(cfg);
        s.cell_key = "position";
        s.cell_value = r;
        s.block_position = r;
        cells.push_back(std::move(s));
    }
    return run_cells(m, v, tasks, cfg, experiment_name(ExperimentKind::locality), cells);
}

std::vector<ResultRow> run_mask_location_sweep(const Model& m, const Vocab& v,
                                               std::span<const TaskData> tasks,
                                               const ExperimentConfig& cfg) {
    std::vector<CellSpec> cells;
    for (double q : cfg.question_positions)
        for (double r : cfg.positions) {
            CellSpec s = base_cell(cfg);
            s.cell_key = "question=" + question_pos_name(q) + ":position";
            s.cell_value = r;
            s.block_position = r;
            s.question_position = q;
            cells.push_back(std::move(s));
        }
    return run_cells(m, v, tasks, cfg, experiment_name(ExperimentKind::mask_location), cells);
}

std::vector<ResultRow> run_extra_mask_sweep(const Model& m, const Vocab& v,
                                            std::span<const TaskData> tasks,
                                            const ExperimentConfig& cfg, bool dots) {
    std::vector<CellSpec> cells;
    if (dots) {
        std::set<int> grid(cfg.dot_counts.begin(), cfg.dot_counts.end());
        grid.insert(0);  // the undecorated baseline
        for (int n : grid) {
            CellSpec s = base_cell(cfg);
            s.cell_key = "dots";
            s.cell_value = n;
            s.extra_dots = n;
            cells.push_back(std::move(s));
        }
    } else {
        std::set<int> grid(cfg.mask_counts.begin(), cfg.mask_counts.end());
        grid.insert(0);  // closed-bracket baseline rides along for comparison
        for (int k : grid) {
            CellSpec s = masked_cell(cfg, k);
            s.cell_key = "extra_masks";
            s.cell_value = k;
            cells.push_back(std::move(s));
        }
    }
    auto name = dots ? ExperimentKind::dots_ablation : ExperimentKind::extra_mask_sweep;
    return run_cells(m, v, tasks, cfg, experiment_name(name), cells);
}

std::vector<ResultRow> run_distractor_sweep(const Model& m, const Vocab& v,
                                            std::span<const TaskData> tasks,
                                            const ExperimentConfig& cfg) {
    std::set<int> variants = {0};
    if (cfg.distractor_extra_masks > 0) variants.insert(cfg.distractor_extra_masks);
    std::vector<CellSpec> cells;
    for (int k : variants)
        for (int nd : cfg.distractor_counts) {
            CellSpec s = masked_cell(cfg, k);
            s.cell_key = "distractors";
            s.cell_value = nd;
            s.arrangement = Arrangement::mixed_random;
            s.n_distractors = nd;
            cells.push_back(std::move(s));
        }
    return run_cells(m, v, tasks, cfg, experiment_name(ExperimentKind::distractor_sweep), cells);
}

static std::vector<ResultRow> steps_by_masks(const Model& m, const Vocab& v,
                                             std::span<const TaskData> tasks,
                                             const ExperimentConfig& cfg, ExperimentKind kind,
                                             std::span<const int> steps,
                                             std::span<const DecodeStrategy> strategies) {
    std::vector<CellSpec> cells;
    for (DecodeStrategy strat : strategies)
        for (int st : steps)
            for (int k : cfg.mask_counts) {
                CellSpec s = masked_cell(cfg, k);
                s.cell_key = "extra_masks";
                s.cell_value = k;
                s.decode.steps = st;
                s.decode.strategy = strat;
                cells.push_back(std::move(s));
            }
    return run_cells(m, v, tasks, cfg, experiment_name(kind), cells);
}

std::vector<ResultRow> run_unmask_recovery(const Model& m, const Vocab& v,
                                           std::span<const TaskData> tasks,
                                           const ExperimentConfig& cfg) {
    DecodeStrategy strategies[] = {DecodeStrategy::random, DecodeStrategy::confidence};
    return steps_by_masks(m, v, tasks, cfg, ExperimentKind::unmask_recovery, cfg.steps_grid,
                          strategies);
}

std::vector<ResultRow> run_few_step_robustness(const Model& m, const Vocab& v,
                                               std::span<const TaskData> tasks,
                                               const ExperimentConfig& cfg) {
    int steps[] = {2, 4, 6};
    DecodeStrategy strategies[] = {cfg.decode.strategy};
    return steps_by_masks(m, v, tasks, cfg, ExperimentKind::few_step_robustness, steps,
                          strategies);
}

std::vector<ResultRow> run_locality_x_masks(const Model& m, const Vocab& v,
                                            std::span<const TaskData> tasks,
                                            const ExperimentConfig& cfg) {
    std::vector<CellSpec> cells;
    for (double r : cfg.positions)
        for (int k : cfg.mask_counts) {
            CellSpec s = masked_cell(cfg, k);
            s.cell_key = "position";
            s.cell_value = r;
            s.block_position = r;
            cells.push_back(std::move(s));
        }
    return run_cells(m, v, tasks, cfg, experiment_name(ExperimentKind::locality_x_masks), cells);
}

std::vector<ResultRow> run_confidence_entropy(const Model& m, const Vocab& v,
                                              std::span<const TaskData> tasks,
                                              const ExperimentConfig& cfg) {
    std::set<int> grid(cfg.mask_counts.begin(), cfg.mask_counts.end());
    grid.insert(0);
    std::vector<CellSpec> cells;
    for (int k : grid) {
        CellSpec s = masked_cell(cfg, k);
        s.cell_key = "extra_masks";
        s.cell_value = k;
        cells.push_back(std::move(s));
    }
    return run_cells(m, v, tasks, cfg, experiment_name(ExperimentKind::confidence_entropy),
                     cells);
}

GainDegradation run_gain_vs_degradation(const Model& m, const Vocab& v,
                                        std::span<const TaskData> tasks,
                                        const ExperimentConfig& cfg) {
    std::vector<CellSpec> cells;
    for (int shots : {5, 25}) {
        CellSpec s = base_cell(cfg);
        s.cell_key = "shots";
        s.cell_value = shots;
        s.n_relevant = shots;
        s.n_distractors = 0;
        cells.push_back(std::move(s));
    }
    for (int k : {1, 200}) {
        CellSpec s = masked_cell(cfg, k);
        s.cell_key = "extra_masks";
        s.cell_value = k;
        cells.push_back(std::move(s));
    }

    GainDegradation gd;
    gd.rows = run_cells(m, v, tasks, cfg, experiment_name(ExperimentKind::gain_vs_degradation),
                        cells);

    // per-task means over replicates for each of the four cells
    std::vector<double> gains, degs;
    for (const auto& task : tasks) {
        double acc[4] = {0, 0, 0, 0};
        int64_t n[4] = {0, 0, 0, 0};
        for (const auto& r : gd.rows) {
            if (r.task_id != task.spec.id()) continue;
            int slot = r.cell_key == "shots" ? (r.cell_value == 5 ? 0 : 1)
                                             : (r.cell_value == 1 ? 2 : 3);
            acc[slot] += r.accuracy;
            n[slot]++;
        }
        for (int i = 0; i < 4; i++) acc[i] /= (double)n[i];
        GainDegradation::PerTask pt;
        pt.task_id = task.spec.id();
        pt.gain = acc[1] - acc[0];
        pt.degradation = acc[3] - acc[2];
        gains.push_back(pt.gain);
        degs.push_back(pt.degradation);
        gd.per_task.push_back(std::move(pt));
    }
    gd.r = pearson_r(gains, degs);
    return gd;
}

}  // namespace maskdiff
