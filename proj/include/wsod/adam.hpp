#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <string>

namespace wsod {

using ParamTable = std::map<std::string, Eigen::MatrixXd>;

/// Adam optimizer state. Moment accumulators are created lazily per
/// parameter name on first update, shaped like the parameter.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    ParamTable m;
    ParamTable v;
};

/// One bias-corrected Adam step over all entries present in `grads`.
/// Parameters without a gradient entry are left untouched (used to freeze
/// masked parameter groups). Throws on shape mismatch or non-finite
/// gradients; parameters are not modified in that case.
void adam_step(AdamState& state, ParamTable& params, const ParamTable& grads);

/// Max over all parameter entries of the relative error between the given
/// analytic gradients and central finite differences of f:
///   |analytic - (f(p+h) - f(p-h)) / 2h| / max(1, |analytic|)
double grad_check(const std::function<double(const ParamTable&)>& f,
                  const ParamTable& params, const ParamTable& analytic,
                  double h = 1e-5);

} // namespace wsod
