#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "wsod/adam.hpp"
#include "wsod/rng.hpp"
#include "wsod/tape.hpp"

using namespace wsod;

namespace {

Mat filled(Eigen::Index r, Eigen::Index c, double v) {
    return Mat::Constant(r, c, v);
}

} // namespace

TEST_CASE("first step with unit gradients moves by about -lr") {
    AdamState st;
    st.lr = 1e-3;
    ParamTable params{{"w", filled(2, 3, 0.5)}};
    adam_step(st, params, {{"w", filled(2, 3, 1.0)}});
    // Bias correction makes m_hat = v_hat = 1 on the first step, so the
    // update is -lr / (1 + eps), equal to -lr within 1e-8 relative.
    const Mat delta = params.at("w").array() - 0.5;
    CHECK(delta.maxCoeff() == doctest::Approx(-1e-3).epsilon(1e-6));
    CHECK(delta.minCoeff() == doctest::Approx(-1e-3).epsilon(1e-6));
    CHECK(st.t == 1);
}

TEST_CASE("zero gradients leave parameters unchanged") {
    AdamState st;
    ParamTable params{{"w", filled(2, 2, 0.25)}};
    adam_step(st, params, {{"w", Mat::Zero(2, 2)}});
    CHECK(params.at("w") == filled(2, 2, 0.25));
}

TEST_CASE("parameters without a gradient entry are frozen") {
    AdamState st;
    ParamTable params{{"a", filled(1, 1, 1.0)}, {"frozen", filled(1, 1, 2.0)}};
    adam_step(st, params, {{"a", filled(1, 1, 1.0)}});
    CHECK(params.at("frozen")(0, 0) == 2.0);
    CHECK(params.at("a")(0, 0) != 1.0);
}

TEST_CASE("step direction opposes the gradient sign") {
    AdamState st;
    ParamTable params{{"w", (Mat(1, 2) << 0.0, 0.0).finished()}};
    adam_step(st, params, {{"w", (Mat(1, 2) << 3.0, -0.5).finished()}});
    CHECK(params.at("w")(0, 0) < 0.0);
    CHECK(params.at("w")(0, 1) > 0.0);
}

TEST_CASE("two identical runs produce identical parameters") {
    auto run = [] {
        AdamState st;
        st.lr = 0.01;
        ParamTable params{{"w", filled(3, 3, 1.0)}};
        Rng rng(99);
        for (int i = 0; i < 50; ++i) {
            Mat g(3, 3);
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) g(r, c) = rng.normal();
            adam_step(st, params, {{"w", g}});
        }
        return params.at("w");
    };
    CHECK(run() == run());
}

TEST_CASE("descends a quadratic") {
    AdamState st;
    st.lr = 0.05;
    ParamTable params{{"w", filled(1, 1, 4.0)}};
    for (int i = 0; i < 400; ++i)
        adam_step(st, params, {{"w", filled(1, 1, 2.0 * params.at("w")(0, 0))}});
    CHECK(std::abs(params.at("w")(0, 0)) < 1e-2);
}

TEST_CASE("shape mismatch and non-finite gradients throw") {
    AdamState st;
    ParamTable params{{"w", filled(2, 2, 1.0)}};
    const ParamTable wrong_shape{{"w", filled(1, 2, 1.0)}};
    CHECK_THROWS(adam_step(st, params, wrong_shape));
    CHECK(params.at("w") == filled(2, 2, 1.0));
    Mat nan_grad = filled(2, 2, 1.0);
    nan_grad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    const ParamTable non_finite{{"w", nan_grad}};
    CHECK_THROWS(adam_step(st, params, non_finite));
    CHECK(params.at("w") == filled(2, 2, 1.0));
}

TEST_CASE("grad_check accepts correct analytic gradients") {
    // f(p) = sum p^2, gradient 2p.
    auto f = [](const ParamTable& p) {
        double s = 0.0;
        for (const auto& [k, m] : p) s += m.array().square().sum();
        return s;
    };
    ParamTable params{{"a", (Mat(2, 2) << 0.3, -1.2, 0.7, 2.0).finished()}};
    ParamTable good{{"a", Mat(2.0 * params.at("a"))}};
    CHECK(grad_check(f, params, good) < 1e-8);

    ParamTable bad{{"a", Mat(2.5 * params.at("a"))}};
    CHECK(grad_check(f, params, bad) > 1e-2);
}

TEST_CASE("grad_check uses the relative-error denominator") {
    // Large analytic values scale the tolerance: f(p) = 1000 * sum p.
    auto f = [](const ParamTable& p) { return 1000.0 * p.at("a").sum(); };
    ParamTable params{{"a", filled(1, 1, 0.1)}};
    ParamTable analytic{{"a", filled(1, 1, 1000.0)}};
    CHECK(grad_check(f, params, analytic) < 1e-8);
}
