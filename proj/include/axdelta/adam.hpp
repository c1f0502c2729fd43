#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "axdelta/error.hpp"

namespace axdelta {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Adam with bias correction and decoupled weight decay (AdamW). Moments are
// kept in double; parameters stay FP32.
class AdamW {
public:
    AdamW(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::span<float> params, std::span<const double> grads, double lr) {
        if (params.size() != m_.size() || grads.size() != m_.size()) {
            throw DimensionError("AdamW::step: parameter count changed");
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grads[i];
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
            const double m_hat = m_[i] / bc1;
            const double v_hat = v_[i] / bc2;
            double p = params[i];
            p -= lr * cfg_.weight_decay * p;
            p -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
            params[i] = static_cast<float>(p);
        }
    }

    long steps() const noexcept { return t_; }

private:
    AdamConfig cfg_;
    std::vector<double> m_, v_;
    long t_ = 0;
};

// Cosine decay from lr to 0 over total_steps; step is 0-based.
inline double cosine_lr(double lr, long step, long total_steps) {
    if (total_steps <= 0) return lr;
    return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                      static_cast<double>(total_steps)));
}

}  // namespace axdelta
