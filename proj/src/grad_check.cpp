#include "contracon/grad_check.h"

#include <algorithm>
#include <cmath>

#include "contracon/error.h"
#include "contracon/ops.h"

namespace contracon {

GradCheckReport grad_check(const std::function<Tensor<double>()>& f, const std::vector<Tensor<double>>& inputs,
                           double eps, double tol, double floor) {
    for (Tensor<double> x : inputs) {
        if (!x.requires_grad()) fail(ErrorCode::usage, "grad_check: inputs must require gradients");
        x.zero_grad();
    }
    const std::uint64_t draws_before = stochastic_draws();
    Tensor<double> loss = f();
    if (stochastic_draws() != draws_before) {
        fail(ErrorCode::usage, "grad_check: function is stochastic (dropout enabled)");
    }
    if (loss.numel() != 1) fail(ErrorCode::usage, "grad_check: function must be scalar-valued");
    if (loss.requires_grad()) loss.backward();

    GradCheckReport report;
    NoGradGuard no_grad;
    for (Tensor<double> x : inputs) {
        std::vector<double> analytic = x.grad();
        auto values = x.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + eps;
            const double plus = f().item();
            values[i] = saved - eps;
            const double minus = f().item();
            values[i] = saved;
            const double numeric = (plus - minus) / (2.0 * eps);
            const double a = analytic[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            report.max_relative_error = std::max(report.max_relative_error, rel);
            report.analytic.push_back(a);
            report.numeric.push_back(numeric);
        }
        report.coordinates += values.size();
    }
    report.passed = report.max_relative_error <= tol;
    return report;
}

GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                           double eps, double tol, double floor) {
    return grad_check([&] { return f(x); }, std::vector<Tensor<double>>{x}, eps, tol, floor);
}

}  // namespace contracon
