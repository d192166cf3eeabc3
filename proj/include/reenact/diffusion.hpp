#pragma once

#include "reenact/autograd.hpp"
#include "reenact/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace reenact {

/**
 * Variance schedule with beta_t and the cumulative product a_t = prod_{s<=t} (1 - beta_s).
 * Steps are 1-based; a(0) is defined as 1 so the last reverse step lands on the estimate of x0.
 */
class NoiseSchedule
{
public:
    NoiseSchedule() = default;
    explicit NoiseSchedule(Eigen::ArrayXd betas);

    int total_steps() const { return int(betas_.size()); }
    const Eigen::ArrayXd& betas() const { return betas_; }
    const Eigen::ArrayXd& alphas_cum() const { return alphas_cum_; }

    double beta(int t) const;
    double alpha(int t) const;

private:
    Eigen::ArrayXd betas_;
    Eigen::ArrayXd alphas_cum_;
};

/// Linear beta schedule from beta_min to beta_max inclusive.
NoiseSchedule make_schedule(int total_steps, double beta_min, double beta_max);

/// Strictly increasing step indices ending at the schedule length.
class StepPlan
{
public:
    StepPlan() = default;
    StepPlan(std::vector<int> indices, int total_steps);

    /// Evenly spaced plan of `steps` indices that always includes total_steps.
    static StepPlan even(int total_steps, int steps);

    const std::vector<int>& indices() const { return indices_; }
    int size() const { return int(indices_.size()); }
    int total_steps() const { return total_steps_; }

private:
    std::vector<int> indices_;
    int total_steps_ = 0;
};

void require_plan_fits(const StepPlan& plan, const NoiseSchedule& sched);

template <typename Image>
struct ImageTraits;
template <typename S>
struct ImageTraits<Tensor<S>>
{
    using Scalar = S;
};
template <typename S>
struct ImageTraits<Var<S>>
{
    using Scalar = S;
};

template <typename Scalar>
Tensor<Scalar> axpby(Scalar a, const Tensor<Scalar>& x, Scalar b, const Tensor<Scalar>& y)
{
    require_same_shape(x.shape(), y.shape(), "axpby");
    return Tensor<Scalar>(x.shape(), a * x.array() + b * y.array());
}

/// sqrt(a_t) x0 + sqrt(1 - a_t) eps
template <typename Image>
Image q_sample(const Image& x0, int t, const Image& eps, const NoiseSchedule& sched)
{
    using Scalar = typename ImageTraits<Image>::Scalar;
    if (t < 1 || t > sched.total_steps()) throw std::out_of_range("q_sample: step out of range");
    const double a = sched.alpha(t);
    return axpby(Scalar(std::sqrt(a)), x0, Scalar(std::sqrt(1.0 - a)), eps);
}

/// (x_t - sqrt(1 - a_t) eps) / sqrt(a_t); t = 0 returns x_t unchanged.
template <typename Image>
Image estimate_x0(const Image& x_t, int t, const Image& eps_pred, const NoiseSchedule& sched)
{
    using Scalar = typename ImageTraits<Image>::Scalar;
    const double a = sched.alpha(t);
    if (!(a > 0.0)) throw std::domain_error("estimate_x0: a_t must be positive");
    const double inv = 1.0 / std::sqrt(a);
    return axpby(Scalar(inv), x_t, Scalar(-std::sqrt(1.0 - a) * inv), eps_pred);
}

/// Moves x_t to step t_next (either direction) given one noise estimate.
template <typename Image>
Image ddim_transfer(const Image& x_t, int t, int t_next, const Image& eps, const NoiseSchedule& sched)
{
    using Scalar = typename ImageTraits<Image>::Scalar;
    const Image x0 = estimate_x0(x_t, t, eps, sched);
    const double a = sched.alpha(t_next);
    return axpby(Scalar(std::sqrt(a)), x0, Scalar(std::sqrt(1.0 - a)), eps);
}

/**
 * Denoiser contract: den(x_t, t, z) returns a noise estimate shaped like x_t.
 * t is always a trained step index in [1, T_max].
 */
template <typename Image, typename Code, typename Denoiser>
Image ddim_step(const Image& x_t, int t, int t_prev, const Code& z, Denoiser&& den, const NoiseSchedule& sched)
{
    if (!(t_prev < t) || t_prev < 0 || t > sched.total_steps()) throw std::out_of_range("ddim_step: bad steps");
    const Image eps = den(x_t, t, z);
    require_same_shape(eps.shape(), x_t.shape(), "ddim_step: denoiser output");
    return ddim_transfer(x_t, t, t_prev, eps, sched);
}

/// Deterministic reverse process from x_T down the plan to the x0 estimate.
template <typename Image, typename Code, typename Denoiser>
Image ddim_sample(const Image& x_T, const Code& z, const StepPlan& plan, Denoiser&& den, const NoiseSchedule& sched)
{
    require_plan_fits(plan, sched);
    const auto& idx = plan.indices();
    Image x = x_T;
    for (int i = plan.size() - 1; i >= 0; --i) {
        const int t_prev = i > 0 ? idx[i - 1] : 0;
        x = ddim_step(x, idx[i], t_prev, z, den, sched);
    }
    return x;
}

/**
 * Deterministic forward process from x0 up the plan to the stochastic subcode x_T.
 * The clean image sits at step 0 (a_0 = 1); its noise estimate is queried at step 1,
 * the smallest trained index.
 */
template <typename Image, typename Code, typename Denoiser>
Image ddim_encode(const Image& x0, const Code& z, const StepPlan& plan, Denoiser&& den, const NoiseSchedule& sched)
{
    require_plan_fits(plan, sched);
    Image x = x0;
    int t = 0;
    for (int t_next : plan.indices()) {
        const Image eps = den(x, t < 1 ? 1 : t, z);
        require_same_shape(eps.shape(), x.shape(), "ddim_encode: denoiser output");
        x = ddim_transfer(x, t, t_next, eps, sched);
        t = t_next;
    }
    return x;
}

} // namespace reenact
