#include <cmath>

#include "maskdiff/errors.hpp"
#include "maskdiff/optimizer.hpp"

namespace maskdiff {

Adam::Adam(const Model& model, AdamConfig cfg) : cfg_(cfg) {
    MD_CHECK(cfg_.lr > 0 && cfg_.beta1 >= 0 && cfg_.beta1 < 1 && cfg_.beta2 >= 0 &&
                 cfg_.beta2 < 1 && cfg_.eps > 0,
             "bad optimizer hyperparameters");
    m_.reserve(model.params.size());
    v_.reserve(model.params.size());
    for (const auto& p : model.params) {
        m_.emplace_back((size_t)p.tensor.numel(), 0.0);
        v_.emplace_back((size_t)p.tensor.numel(), 0.0);
    }
}

double Adam::step(Model& model, double lr_override) {
    MD_CHECK(m_.size() == model.params.size(), "optimizer bound to a different model");
    double lr = lr_override >= 0 ? lr_override : cfg_.lr;

    // global norm over every parameter gradient (missing grads count as zero)
    double sq = 0.0;
    for (auto& p : model.params) {
        if (!p.tensor.has_grad()) continue;
        auto g = p.tensor.grad_values();
        for (double x : g) {
            if (!std::isfinite(x)) throw NumericError("non-finite gradient in " + p.name);
            sq += x * x;
        }
    }
    double norm = std::sqrt(sq);
    double scale = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

    t_++;
    double bc1 = 1.0 - std::pow(cfg_.beta1, (double)t_);
    double bc2 = 1.0 - std::pow(cfg_.beta2, (double)t_);
    for (size_t i = 0; i < model.params.size(); i++) {
        Tensor& w = model.params[i].tensor;
        if (!w.has_grad()) continue;
        auto g = w.grad_values();
        auto& m = m_[i];
        auto& v = v_[i];
        if (w.dtype() == Dtype::f32) {
            auto data = w.data_f32();
            for (size_t j = 0; j < g.size(); j++) {
                double gj = g[j] * scale;
                m[j] = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * gj;
                v[j] = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * gj * gj;
                data[j] -= (float)(lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps));
            }
        } else {
            auto data = w.data_f64();
            for (size_t j = 0; j < g.size(); j++) {
                double gj = g[j] * scale;
                m[j] = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * gj;
                v[j] = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * gj * gj;
                data[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
            }
        }
        w.zero_grad();
    }
    return norm;
}

}  // namespace maskdiff
