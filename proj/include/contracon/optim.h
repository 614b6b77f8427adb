#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "contracon/tensor.h"

namespace contracon {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t step = 0;
};

// theta <- theta - lr*wd*theta, then the bias-corrected Adam update.
// Throws a usage error when the buffers disagree in length.
void adamw_step(std::span<float> params, std::span<const float> grads, AdamState& state, double lr,
                const AdamWConfig& config);

// Keeps one AdamState per tensor; tensors must keep their shape between steps.
class AdamW {
   public:
    AdamW(std::vector<Tensor<float>> params, AdamWConfig config);

    // Applies one update from the gradients accumulated on the tensors. A
    // tensor without a gradient is treated as having a zero gradient.
    void step(double lr);
    void zero_grad();

    const std::vector<Tensor<float>>& params() const { return params_; }
    std::size_t steps() const { return states_.empty() ? 0 : states_.front().step; }

   private:
    std::vector<Tensor<float>> params_;
    std::vector<AdamState> states_;
    AdamWConfig config_;
};

struct LrSchedule {
    double lr_max = 8e-4;
    double lr_min = 1e-6;
    double restart_period = 10.0;  // T_0, in epochs
    double restart_mult = 2.0;
};

// Cosine annealing inside one cycle of length t_i.
double cosine_annealing(double t_cur, double t_i, double lr_max, double lr_min);

// Warm restarts: cycles of length T_0, T_0*mult, ... `epoch` may be fractional
// (epoch + batch / batches_per_epoch). A cycle boundary belongs to the next
// cycle, so lr(boundary) = lr_max.
double lr_schedule(double epoch, const LrSchedule& schedule);

}  // namespace contracon
