// Copyright (c) 2026 The paragen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "paragen/tensor.hpp"

namespace paragen {

// raised by training loops when divergence persists across steps
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Linear warm-up to base_lr, then polynomial decay to end_lr.
struct LrSchedule {
    double base_lr = 1e-4;
    double end_lr = 1e-6;
    double warmup_fraction = 0.10;
    int64_t total_steps = 1;
    double power = 1.0;

    int64_t warmup_steps() const {
        return static_cast<int64_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
    }

    double lr_at(int64_t step) const {
        if (step < 0 || step > total_steps) throw std::out_of_range("LrSchedule::lr_at: step out of range");
        const int64_t w = warmup_steps();
        if (step < w) return base_lr * static_cast<double>(step) / static_cast<double>(w);
        if (total_steps == w) return end_lr;
        const double progress = static_cast<double>(step - w) / static_cast<double>(total_steps - w);
        return end_lr + (base_lr - end_lr) * std::pow(1.0 - progress, power);
    }
};

struct AdamwConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct OptimState {
    std::vector<std::vector<double>> m;  // first moments, one buffer per parameter
    std::vector<std::vector<double>> v;  // second moments
    int64_t step = 0;
};

enum class StepStatus { ok, diverged };

// One decoupled-weight-decay Adam step over `params`, reading each tensor's
// accumulated grad. A non-finite gradient rejects the whole step: neither
// parameters nor moments are touched.
inline StepStatus adamw_step(std::vector<Tensor>& params, const AdamwConfig& cfg, OptimState& state, double lr) {
    if (state.m.empty()) {
        for (auto& p : params) {
            state.m.emplace_back(p.numel(), 0.0);
            state.v.emplace_back(p.numel(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adamw_step: state/parameter count mismatch");

    for (auto& p : params)
        for (double g : p.grad())
            if (!std::isfinite(g)) return StepStatus::diverged;

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& theta = params[pi].data();
        const auto& g = params[pi].grad();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        if (m.size() != theta.size()) throw std::invalid_argument("adamw_step: moment shape mismatch");
        for (size_t i = 0; i < theta.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps) + lr * cfg.weight_decay * theta[i];
        }
    }
    return StepStatus::ok;
}

// Convenience wrapper owning the state and schedule for a training loop.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamwConfig cfg, LrSchedule sched)
        : params_(std::move(params)), cfg_(cfg), sched_(sched) {}

    StepStatus step() {
        const double lr = sched_.lr_at(std::min(sched_step_, sched_.total_steps));
        const StepStatus st = adamw_step(params_, cfg_, state_, lr);
        sched_step_ += 1;
        last_lr_ = lr;
        return st;
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    const std::vector<Tensor>& params() const { return params_; }
    double last_lr() const { return last_lr_; }
    int64_t step_count() const { return state_.step; }

private:
    std::vector<Tensor> params_;
    AdamwConfig cfg_;
    LrSchedule sched_;
    OptimState state_;
    int64_t sched_step_ = 0;
    double last_lr_ = 0.0;
};

}  // namespace paragen
