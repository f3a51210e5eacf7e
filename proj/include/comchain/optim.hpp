#pragma once

// AdamW with decoupled weight decay, plus the warmup + cosine-decay
// learning-rate schedule used by every run.

#include "comchain/tensor.hpp"

#include <cmath>
#include <map>
#include <string>

namespace comchain {

struct OptimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.1;
};

using ParamSet = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, Tensor>;

struct OptimState {
    AdamWConfig cfg;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    int64_t t = 0;
};

// One decoupled-weight-decay Adam step. `lr` overrides cfg.lr when >= 0 so a
// schedule can drive it. Parameters without a gradient entry are untouched
// (they also skip decay; decay is part of the gradient step).
inline void adamw_step(ParamSet& params, const GradMap& grads, OptimState& state,
                       double lr = -1.0) {
    const auto& c = state.cfg;
    const double step_lr = lr >= 0 ? lr : c.lr;
    state.t += 1;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor& grad = git->second;
        if (!grad.same_shape(p))
            throw OptimError("adamw_step: gradient shape mismatch for " + name);
        for (float gv : grad.data)
            if (!std::isfinite(gv)) throw OptimError("adamw_step: non-finite gradient for " + name);
        auto mit = state.m.find(name);
        if (mit == state.m.end()) {
            mit = state.m.emplace(name, Tensor(p.shape, 0.0f)).first;
            state.v.emplace(name, Tensor(p.shape, 0.0f));
        }
        Tensor& m = mit->second;
        Tensor& v = state.v.at(name);
        for (size_t i = 0; i < p.data.size(); ++i) {
            const double gv = grad.data[i];
            const double mi = c.beta1 * m.data[i] + (1.0 - c.beta1) * gv;
            const double vi = c.beta2 * v.data[i] + (1.0 - c.beta2) * gv * gv;
            m.data[i] = static_cast<float>(mi);
            v.data[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            const double update = mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * p.data[i];
            p.data[i] = static_cast<float>(p.data[i] - step_lr * update);
        }
    }
}

// Linear warmup to lr_max, then cosine decay to zero over the remaining steps.
struct LrSchedule {
    double lr_max = 1e-3;
    int64_t warmup_steps = 0;
    int64_t total_steps = 1;

    double at(int64_t step) const {
        if (warmup_steps > 0 && step < warmup_steps)
            return lr_max * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
        const int64_t span = std::max<int64_t>(1, total_steps - warmup_steps);
        const double progress =
            std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(span));
        return 0.5 * lr_max * (1.0 + std::cos(3.141592653589793 * progress));
    }
};

}  // namespace comchain
