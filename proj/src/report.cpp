#include "maskdiff/report.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "maskdiff/errors.hpp"
#include "maskdiff/svg.hpp"

namespace maskdiff {

namespace {

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// everything that identifies a cell apart from the swept value
struct SeriesKey {
    std::string experiment, cell_key, strategy;
    int extra_masks = 0, steps = 1;
    auto operator<=>(const SeriesKey&) const = default;
};

struct CellAgg {
    double accuracy = 0, ci_low = 0, ci_high = 0, confidence = 0, entropy = 0;
    int64_t n_tasks = 0;
};

// per-task means over replicates first, then the cross-task interval
CellAgg aggregate(const std::vector<const ResultRow*>& cell) {
    std::map<std::string, std::pair<double, int64_t>> by_task;
    double conf = 0, ent = 0;
    for (const ResultRow* r : cell) {
        auto& [sum, n] = by_task[r->task_id];
        sum += r->accuracy;
        n++;
        conf += r->confidence;
        ent += r->entropy;
    }
    std::vector<double> task_means;
    for (const auto& [_, sn] : by_task) task_means.push_back(sn.first / (double)sn.second);
    Interval ci = cross_task_ci(task_means);
    CellAgg a;
    a.accuracy = ci.mean;
    a.ci_low = ci.lo;
    a.ci_high = ci.hi;
    a.confidence = conf / (double)cell.size();
    a.entropy = ent / (double)cell.size();
    a.n_tasks = (int64_t)task_means.size();
    return a;
}

std::string series_label(const SeriesKey& k) {
    std::string label = k.experiment;
    if (k.cell_key != "position" && k.cell_key != "extra_masks") {
        std::string trimmed = k.cell_key;
        auto cut = trimmed.find(":position");
        if (cut != std::string::npos) trimmed = trimmed.substr(0, cut);
        label += " " + trimmed;
    }
    if (k.extra_masks != 0) label += " k=" + std::to_string(k.extra_masks);
    if (k.steps != 1) label += " steps=" + std::to_string(k.steps);
    if (k.strategy != "random") label += " " + k.strategy;
    return label;
}

bool is_position_key(const std::string& cell_key) {
    if (cell_key == "position") return true;
    auto n = cell_key.size();
    return n > 9 && cell_key.compare(n - 9, 9, ":position") == 0;
}

}  // namespace

std::vector<std::string> write_report(std::span<const ResultRow> rows,
                                      const std::string& out_dir) {
    if (rows.empty()) throw DataError("no data: the results table has no rows");

    std::map<SeriesKey, std::map<double, std::vector<const ResultRow*>>> groups;
    for (const ResultRow& r : rows)
        groups[{r.experiment, r.cell_key, r.strategy, r.extra_masks, r.steps}][r.cell_value]
            .push_back(&r);

    std::vector<std::string> written;
    std::string summary_path = out_dir + "/summary.csv";
    std::ofstream summary(summary_path, std::ios::binary);
    if (!summary.good()) throw DataError("cannot write " + summary_path);
    summary << "experiment,cell_key,cell_value,extra_masks,steps,strategy,n_tasks,"
               "accuracy,ci_low,ci_high,confidence,entropy\n";

    std::vector<Series> pos_series, mask_series;
    std::vector<Bar> degradation;
    for (const auto& [key, cells] : groups) {
        Series s;
        s.label = series_label(key);
        for (const auto& [value, cell] : cells) {
            CellAgg a = aggregate(cell);
            summary << key.experiment << ',' << key.cell_key << ',' << g17(value) << ','
                    << key.extra_masks << ',' << key.steps << ',' << key.strategy << ','
                    << a.n_tasks << ',' << g17(a.accuracy) << ',' << g17(a.ci_low) << ','
                    << g17(a.ci_high) << ',' << g17(a.confidence) << ',' << g17(a.entropy)
                    << '\n';
            s.x.push_back(value);
            s.y.push_back(a.accuracy);
            s.lo.push_back(a.ci_low);
            s.hi.push_back(a.ci_high);
        }
        if (is_position_key(key.cell_key)) pos_series.push_back(s);
        if (key.cell_key == "extra_masks") {
            mask_series.push_back(s);
            if (s.y.size() >= 2) {
                bool positive = false;
                for (double v : s.y) positive = positive || v > 0;
                if (positive) degradation.push_back({s.label, degradation_metric(s.y)});
            }
        }
    }
    summary.close();
    written.push_back(summary_path);

    auto emit = [&](const std::string& name, const std::string& body) {
        std::string path = out_dir + "/" + name;
        std::ofstream f(path, std::ios::binary);
        if (!f.good()) throw DataError("cannot write " + path);
        f << body;
        written.push_back(path);
    };
    if (!pos_series.empty())
        emit("accuracy_vs_position.svg",
             line_chart_svg("accuracy vs relevant-block position", "position", "accuracy",
                            pos_series));
    if (!mask_series.empty())
        emit("accuracy_vs_masks.svg",
             line_chart_svg("accuracy vs appended masks", "extra masks", "accuracy",
                            mask_series));
    if (!degradation.empty())
        emit("degradation_bars.svg",
             bar_chart_svg("relative degradation over the mask grid", "degradation %",
                           degradation));
    return written;
}

}  // namespace maskdiff
