#pragma once

#include <string>
#include <vector>

#include "maskdiff/harness.hpp"

namespace maskdiff {

// aggregates raw result rows into summary.csv plus the standard charts
// (accuracy vs position, accuracy vs mask count, degradation bars), written
// under out_dir. Returns the paths written. DataError on empty input.
std::vector<std::string> write_report(std::span<const ResultRow> rows,
                                      const std::string& out_dir);

}  // namespace maskdiff
