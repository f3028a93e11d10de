#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "maskdiff/rng.hpp"

namespace maskdiff {

enum class MdKind { nonlinear, swiss_roll, moons, circles };
inline constexpr int kNumMdKinds = 4;
const char* md_kind_name(MdKind k);

struct MdPoint {
    std::array<int, 3> coords{};
    int label = 0;  // 1 = Above, 0 = Below
    const char* label_text() const { return label ? "Above" : "Below"; }
};

// integer coordinates in [1,100]; exact class balance per split.
struct MultiDimDataset {
    MdKind kind{};
    uint64_t seed = 0;
    std::vector<MdPoint> train;  // n_train, half per class
    std::vector<MdPoint> test;   // n_test, half per class
};

MultiDimDataset gen_multidim_dataset(MdKind kind, uint64_t seed, int n_train = 100,
                                     int n_test = 1000);

enum class OrderScheme { random, decreasing_distance, increasing_distance };

// decreasing: farthest from the test point first (nearest last);
// increasing is the exact reverse for distinct distances.
std::vector<MdPoint> order_examples(const std::vector<MdPoint>& pts, OrderScheme scheme,
                                    const MdPoint& test_point, Rng& rng);

// <dir>/<kind>.seed<seed>.train.jsonl / .test.jsonl, one {coords,label} per line
void export_multidim_jsonl(const MultiDimDataset& ds, const std::string& dir);

}  // namespace maskdiff
