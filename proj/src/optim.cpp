#include "contracon/optim.h"

#include <cmath>
#include <numbers>
#include <string>

#include "contracon/error.h"

namespace contracon {

void adamw_step(std::span<float> params, std::span<const float> grads, AdamState& state, double lr,
                const AdamWConfig& config) {
    if (params.size() != grads.size()) {
        fail(ErrorCode::usage, "adamw: parameter has " + std::to_string(params.size()) + " values but gradient has " +
                                   std::to_string(grads.size()));
    }
    if (state.m.empty() && state.v.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        fail(ErrorCode::usage, "adamw: optimizer state does not match parameter size");
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    const double decay = 1.0 - lr * config.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        double p = static_cast<double>(params[i]) * decay;
        p -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
        params[i] = static_cast<float>(p);
    }
}

AdamW::AdamW(std::vector<Tensor<float>> params, AdamWConfig config)
    : params_(std::move(params)), states_(params_.size()), config_(config) {}

void AdamW::step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& node = *params_[i].node();
        if (node.grad.empty()) {
            const std::vector<float> zeros(node.data.size(), 0.0f);
            adamw_step(node.data, zeros, states_[i], lr, config_);
        } else {
            adamw_step(node.data, node.grad, states_[i], lr, config_);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

double cosine_annealing(double t_cur, double t_i, double lr_max, double lr_min) {
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t_cur / t_i));
}

double lr_schedule(double epoch, const LrSchedule& schedule) {
    if (epoch < 0.0) fail(ErrorCode::usage, "lr_schedule: negative step");
    double t_i = schedule.restart_period;
    double t_cur = epoch;
    while (t_cur >= t_i) {
        t_cur -= t_i;
        t_i *= schedule.restart_mult;
    }
    return cosine_annealing(t_cur, t_i, schedule.lr_max, schedule.lr_min);
}

}  // namespace contracon
