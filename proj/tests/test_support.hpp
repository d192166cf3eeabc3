#pragma once

#include "reenact/autograd.hpp"

#include <functional>
#include <random>

namespace reenact::testing {

inline TensorD random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> d(lo, hi);
    TensorD t(s);
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = d(rng);
    return t;
}

inline TensorF random_tensor_f(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    return random_tensor(s, rng, lo, hi).cast<float>();
}

/// Central finite differences of a scalar function of one tensor.
inline TensorD numeric_gradient(const std::function<double(const TensorD&)>& f, TensorD x, double h = 1e-6)
{
    TensorD g(x.shape());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

/// Max relative error with a floor on the denominator.
inline double relative_error(const TensorD& a, const TensorD& b, double floor = 1e-6)
{
    double worst = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

/// Compares reverse-mode and finite-difference gradients of f at x.
inline double gradcheck(const std::function<VarD(const VarD&)>& f, const TensorD& x)
{
    auto in = VarD::leaf(x);
    auto out = f(in);
    out.backward();
    TensorD analytic = in.grad();
    TensorD numeric = numeric_gradient([&](const TensorD& t) { return f(VarD::constant(t)).item(); }, x);
    return relative_error(analytic, numeric, 1e-4);
}

} // namespace reenact::testing
