#pragma once

#include <string>
#include <vector>

namespace maskdiff {

// deterministic text-only charts: fixed canvas, fixed palette, %.6g numbers,
// no system fonts measured -- identical input means identical bytes

struct Series {
    std::string label;
    std::vector<double> x, y;
    std::vector<double> lo, hi;  // optional CI band; empty or same size as y
};

struct Bar {
    std::string label;
    double value = 0;
};

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series);

std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<Bar>& bars);

}  // namespace maskdiff
