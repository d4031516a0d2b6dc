#pragma once

// Optimizer shared by the NCA trainer and the autoencoders.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "nca_scope/common.hpp"

namespace nca_scope {

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Scales g to g / (||g||_2 + eps) in place.
template <typename T>
void normalise_gradient(std::span<T> g, double eps) {
    double sq = 0.0;
    for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
    const double scale = 1.0 / (std::sqrt(sq) + eps);
    for (T& v : g) v = static_cast<T>(static_cast<double>(v) * scale);
}

/// One optimizer instance tracks moment estimates for a fixed list of tensors.
template <typename T>
class Optimizer {
public:
    Optimizer(OptimizerConfig config, const std::vector<std::size_t>& sizes) : config_(config) {
        if (config_.kind == OptimizerKind::Adam) {
            for (auto n : sizes) {
                m_.emplace_back(n, 0.0);
                v_.emplace_back(n, 0.0);
            }
        }
        sizes_ = sizes;
    }

    const OptimizerConfig& config() const { return config_; }
    long steps_taken() const { return t_; }

    /// params[i] -= update(grads[i]). `lr_scale` multiplies the configured rate.
    void step(const std::vector<std::span<T>>& params, const std::vector<std::span<const T>>& grads,
              double lr_scale = 1.0) {
        if (params.size() != sizes_.size() || grads.size() != sizes_.size())
            throw ContractError("optimizer tensor count changed");
        const double lr = config_.learning_rate * lr_scale;
        ++t_;
        if (config_.kind == OptimizerKind::Sgd) {
            for (std::size_t i = 0; i < params.size(); ++i)
                for (std::size_t j = 0; j < params[i].size(); ++j)
                    params[i][j] = static_cast<T>(static_cast<double>(params[i][j]) - lr * static_cast<double>(grads[i][j]));
            return;
        }
        const double b1 = config_.beta1, b2 = config_.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].size() != sizes_[i] || grads[i].size() != sizes_[i])
                throw ContractError("optimizer tensor size changed");
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < params[i].size(); ++j) {
                const double g = static_cast<double>(grads[i][j]);
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                const double update = lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.epsilon);
                params[i][j] = static_cast<T>(static_cast<double>(params[i][j]) - update);
            }
        }
    }

private:
    OptimizerConfig config_;
    std::vector<std::size_t> sizes_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

}  // namespace nca_scope
