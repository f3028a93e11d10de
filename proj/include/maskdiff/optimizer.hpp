#pragma once

#include <cstdint>
#include <vector>

#include "maskdiff/model.hpp"

namespace maskdiff {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
};

// Adam with bias correction; moment slots are kept in double regardless of
// the parameter dtype so f32 training stays well-conditioned.
class Adam {
 public:
    Adam(const Model& model, AdamConfig cfg);

    // applies one update from the accumulated gradients and clears them.
    // returns the pre-clip global gradient norm. lr_override >= 0 replaces
    // cfg.lr for this step (for schedules).
    double step(Model& model, double lr_override = -1.0);

    int64_t steps_taken() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

 private:
    AdamConfig cfg_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;  // one slot vector per parameter
};

}  // namespace maskdiff
