#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include "maskdiff/errors.hpp"
#include "maskdiff/harness.hpp"

namespace maskdiff {

namespace {

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

const std::string& check_field(const std::string& s) {
    if (s.find(',') != std::string::npos || s.find('\n') != std::string::npos)
        throw DataError("csv field contains a delimiter: '" + s + "'");
    return s;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

double parse_double(const std::string& s) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || s.empty())
        throw DataError("csv: not a number: '" + s + "'");
    return v;
}

int64_t parse_int(const std::string& s) {
    char* end = nullptr;
    long long v = std::strtoll(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || s.empty())
        throw DataError("csv: not an integer: '" + s + "'");
    return v;
}

}  // namespace

void write_results_csv(const std::string& path, std::span<const ResultRow> rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << kResultsCsvHeader << "\n";
    for (const auto& r : rows) {
        f << check_field(r.experiment) << ',' << check_field(r.task_id) << ',' << r.seed << ','
          << check_field(r.cell_key) << ',' << fmt_g17(r.cell_value) << ',' << r.extra_masks
          << ',' << r.steps << ',' << check_field(r.strategy) << ',' << fmt_g17(r.accuracy) << ','
          << fmt_g17(r.ci_low) << ',' << fmt_g17(r.ci_high) << ',' << fmt_g17(r.confidence) << ','
          << fmt_g17(r.entropy) << "\n";
    }
    if (!f) throw DataError("write failed: " + path);
}

std::vector<ResultRow> read_results_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line) || line != kResultsCsvHeader)
        throw DataError("results csv header mismatch in " + path);
    std::vector<ResultRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto fields = split_line(line);
        if (fields.size() != 13)
            throw DataError("results csv: expected 13 fields, got " +
                            std::to_string(fields.size()) + " in " + path);
        ResultRow r;
        r.experiment = fields[0];
        r.task_id = fields[1];
        r.seed = parse_int(fields[2]);
        r.cell_key = fields[3];
        r.cell_value = parse_double(fields[4]);
        r.extra_masks = (int)parse_int(fields[5]);
        r.steps = (int)parse_int(fields[6]);
        r.strategy = fields[7];
        r.accuracy = parse_double(fields[8]);
        r.ci_low = parse_double(fields[9]);
        r.ci_high = parse_double(fields[10]);
        r.confidence = parse_double(fields[11]);
        r.entropy = parse_double(fields[12]);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace maskdiff
