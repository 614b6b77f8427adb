#pragma once

#include <functional>
#include <vector>

#include "contracon/tensor.h"

namespace contracon {

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t coordinates = 0;
    std::vector<double> analytic;
    std::vector<double> numeric;
    bool passed = false;
};

// Compares the reverse-mode gradient of a scalar function against central
// differences (f(x+eps e_i) - f(x-eps e_i)) / 2eps, coordinate by coordinate.
// The relative error of a coordinate is |a - n| / max(|a|, |n|, floor); the
// floor keeps coordinates whose true gradient is ~0 from dividing noise by
// noise. Throws a usage error when f draws dropout masks.
GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                           double eps, double tol, double floor = 1e-3);

// Same check over several leaves at once; `f` closes over `inputs`.
GradCheckReport grad_check(const std::function<Tensor<double>()>& f, const std::vector<Tensor<double>>& inputs,
                           double eps, double tol, double floor = 1e-3);

}  // namespace contracon
