#include "wsod/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace wsod {

void adam_step(AdamState& state, ParamTable& params, const ParamTable& grads) {
    // Validate everything before touching any parameter.
    for (const auto& [name, g] : grads) {
        auto it = params.find(name);
        if (it == params.end())
            throw std::invalid_argument("adam: gradient for unknown parameter " + name);
        if (g.rows() != it->second.rows() || g.cols() != it->second.cols())
            throw std::invalid_argument("adam: gradient shape mismatch for " + name);
        if (!g.allFinite())
            throw std::runtime_error("adam: non-finite gradient for " + name);
    }

    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (const auto& [name, g] : grads) {
        Eigen::MatrixXd& p = params.at(name);
        auto mi = state.m.find(name);
        if (mi == state.m.end()) {
            state.m[name] = Eigen::MatrixXd::Zero(p.rows(), p.cols());
            state.v[name] = Eigen::MatrixXd::Zero(p.rows(), p.cols());
        }
        Eigen::MatrixXd& m = state.m[name];
        Eigen::MatrixXd& v = state.v[name];
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
        Eigen::ArrayXXd mhat = m.array() / bc1;
        Eigen::ArrayXXd vhat = v.array() / bc2;
        p.array() -= state.lr * mhat / (vhat.sqrt() + state.eps);
    }
}

double grad_check(const std::function<double(const ParamTable&)>& f,
                  const ParamTable& params, const ParamTable& analytic,
                  double h) {
    ParamTable probe = params;
    double worst = 0.0;
    for (const auto& [name, a] : analytic) {
        Eigen::MatrixXd& p = probe.at(name);
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            for (Eigen::Index j = 0; j < p.cols(); ++j) {
                const double saved = p(i, j);
                p(i, j) = saved + h;
                const double up = f(probe);
                p(i, j) = saved - h;
                const double dn = f(probe);
                p(i, j) = saved;
                const double numeric = (up - dn) / (2.0 * h);
                const double err = std::abs(a(i, j) - numeric) /
                                   std::max(1.0, std::abs(a(i, j)));
                worst = std::max(worst, err);
            }
        }
    }
    return worst;
}

} // namespace wsod
