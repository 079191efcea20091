#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mapre/tensor.hpp"

namespace mapre {

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Linear warmup to base_lr, constant afterwards.
inline double lr_schedule(long step, long warmup_steps, double base_lr) {
    if (step < 0) throw std::invalid_argument("lr_schedule: negative step");
    if (warmup_steps <= 0 || step >= warmup_steps) return base_lr;
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

// Scales every gradient in place by max_norm / g when the global L2 norm g
// exceeds max_norm. Returns the pre-clip norm. Parameters without an
// assigned gradient do not contribute.
inline double clip_global_norm(std::vector<NamedParam>& params, double max_norm) {
    if (!(max_norm > 0)) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
    double sq = 0;
    for (const NamedParam& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw std::runtime_error("clip_global_norm: non-finite gradient norm");
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (NamedParam& p : params) {
            if (!p.tensor.has_grad()) continue;
            for (double& g : p.tensor.grad()) g *= s;
        }
    }
    return norm;
}

struct AdamWOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-5;
};

// Decoupled-weight-decay Adam with bias correction. Weight decay skips
// parameters flagged no_decay (layer-norm gains/biases and bias vectors).
// Parameters that received no gradient in a step are left untouched, with
// per-parameter step counters so bias correction stays consistent.
class AdamW {
public:
    AdamW(std::vector<NamedParam> params, AdamWOptions options = {})
        : params_(std::move(params)), options_(options) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        t_.assign(params_.size(), 0);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].tensor.size(), 0.0);
            v_[i].assign(params_[i].tensor.size(), 0.0);
        }
    }

    void step() { step(options_.learning_rate); }

    void step(double lr) {
        ++step_count_;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            NamedParam& p = params_[i];
            if (!p.tensor.has_grad()) continue;
            const std::vector<double>& g = p.tensor.grad();
            std::vector<double>& w = p.tensor.data();
            if (g.size() != w.size()) {
                throw std::runtime_error("adamw_step: gradient shape mismatch for parameter " + p.name);
            }
            if (!all_finite(g)) {
                throw std::runtime_error("adamw_step: non-finite gradient for parameter " + p.name);
            }
            const long t = ++t_[i];
            const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t));
            const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t));
            const double wd = p.no_decay ? 0.0 : options_.weight_decay;
            for (std::size_t k = 0; k < w.size(); ++k) {
                m_[i][k] = options_.beta1 * m_[i][k] + (1.0 - options_.beta1) * g[k];
                v_[i][k] = options_.beta2 * v_[i][k] + (1.0 - options_.beta2) * g[k] * g[k];
                const double m_hat = m_[i][k] / bc1;
                const double v_hat = v_[i][k] / bc2;
                w[k] -= lr * (m_hat / (std::sqrt(v_hat) + options_.epsilon) + wd * w[k]);
            }
        }
    }

    void zero_grad() {
        for (NamedParam& p : params_) p.tensor.clear_grad();
    }

    long step_count() const { return step_count_; }
    const AdamWOptions& options() const { return options_; }
    std::vector<NamedParam>& params() { return params_; }

    // moment buffers exposed for optional checkpointing
    const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
    const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }
    void restore_state(std::size_t i, std::vector<double> m, std::vector<double> v, long t) {
        if (m.size() != m_[i].size() || v.size() != v_[i].size()) {
            throw std::runtime_error("adamw: restored moment shape mismatch for " + params_[i].name);
        }
        m_[i] = std::move(m);
        v_[i] = std::move(v);
        t_[i] = t;
    }
    long param_step(std::size_t i) const { return t_[i]; }

private:
    std::vector<NamedParam> params_;
    AdamWOptions options_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::vector<long> t_;
    long step_count_ = 0;
};

}  // namespace mapre
