#pragma once

#include <cmath>

#include "pcpmae/tensor.hpp"

namespace pcpmae {

// Per-parameter Adam moments plus the shared step counter. Moment arrays are
// indexed in ParamStore entry order.
template <class Real>
struct OptimState {
    std::vector<std::vector<Real>> m;
    std::vector<std::vector<Real>> v;
    std::int64_t step = 0;

    static OptimState init(const ParamStore<Real>& params) {
        OptimState s;
        s.m.reserve(params.size());
        s.v.reserve(params.size());
        for (const auto& e : params.entries()) {
            s.m.emplace_back(e.tensor.data().size(), Real(0));
            s.v.emplace_back(e.tensor.data().size(), Real(0));
        }
        return s;
    }
};

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

// Decoupled weight decay followed by the bias-corrected Adam update. A
// parameter with an absent gradient is treated as zero-gradient (decay still
// applies).
template <class Real>
void adamw_step(ParamStore<Real>& params, OptimState<Real>& state, double lr,
                const AdamWConfig& cfg = {}) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw std::invalid_argument("adamw_step: optimizer state tracks " +
                                    std::to_string(state.m.size()) + " tensors, store has " +
                                    std::to_string(params.size()));
    state.step += 1;
    const Real b1 = Real(cfg.beta1), b2 = Real(cfg.beta2);
    const Real bc1 = Real(1) - std::pow(b1, Real(state.step));
    const Real bc2 = Real(1) - std::pow(b2, Real(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& t = params.entries()[pi].tensor;
        auto& p = t.data();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        if (m.size() != p.size())
            throw std::invalid_argument("adamw_step: state shape mismatch for '" +
                                        params.entries()[pi].name + "'");
        const auto& g = t.grad();
        const bool has_grad = g.size() == p.size();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const Real gi = has_grad ? g[i] : Real(0);
            p[i] -= Real(lr) * Real(cfg.weight_decay) * p[i];
            m[i] = b1 * m[i] + (Real(1) - b1) * gi;
            v[i] = b2 * v[i] + (Real(1) - b2) * gi * gi;
            const Real mhat = m[i] / bc1;
            const Real vhat = v[i] / bc2;
            p[i] -= Real(lr) * mhat / (std::sqrt(vhat) + Real(cfg.eps));
        }
    }
}

// Linear warmup to base_lr, then half-cosine decay to min_lr.
inline double cosine_lr(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
                        double base_lr, double min_lr = 1e-6) {
    if (step < 0 || step > total_steps)
        throw std::invalid_argument("cosine_lr: step " + std::to_string(step) +
                                    " outside [0," + std::to_string(total_steps) + "]");
    if (warmup_steps >= total_steps)
        throw std::invalid_argument("cosine_lr: warmup_steps must be below total_steps");
    if (step < warmup_steps)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double t = static_cast<double>(step - warmup_steps) /
                     static_cast<double>(total_steps - warmup_steps);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

// Scales all gradients so their global l2 norm does not exceed max_norm.
// Returns the pre-clip norm.
template <class Real>
double clip_global_norm(ParamStore<Real>& params, double max_norm) {
    double sq = 0;
    for (auto& e : params.entries())
        for (Real g : e.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        const Real scale = Real(max_norm / norm);
        for (auto& e : params.entries())
            for (Real& g : e.tensor.grad()) g *= scale;
    }
    return norm;
}

}  // namespace pcpmae
