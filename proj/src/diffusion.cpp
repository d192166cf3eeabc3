#include "reenact/diffusion.hpp"

#include <string>

namespace reenact {

NoiseSchedule::NoiseSchedule(Eigen::ArrayXd betas) : betas_(std::move(betas))
{
    if (betas_.size() < 1) throw std::invalid_argument("NoiseSchedule: need at least one step");
    if ((betas_ <= 0.0).any() || (betas_ >= 1.0).any()) {
        throw std::invalid_argument("NoiseSchedule: betas must lie in (0, 1)");
    }
    alphas_cum_.resize(betas_.size());
    double running = 1.0;
    for (Eigen::Index i = 0; i < betas_.size(); ++i) {
        running *= (1.0 - betas_[i]);
        alphas_cum_[i] = running;
    }
}

double NoiseSchedule::beta(int t) const
{
    if (t < 1 || t > total_steps()) throw std::out_of_range("NoiseSchedule::beta: step " + std::to_string(t));
    return betas_[t - 1];
}

double NoiseSchedule::alpha(int t) const
{
    if (t == 0) return 1.0;
    if (t < 0 || t > total_steps()) throw std::out_of_range("NoiseSchedule::alpha: step " + std::to_string(t));
    return alphas_cum_[t - 1];
}

NoiseSchedule make_schedule(int total_steps, double beta_min, double beta_max)
{
    if (total_steps < 1) throw std::invalid_argument("make_schedule: total_steps must be positive");
    if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0)) {
        throw std::invalid_argument("make_schedule: need 0 < beta_min <= beta_max < 1");
    }
    if (total_steps == 1) return NoiseSchedule(Eigen::ArrayXd::Constant(1, beta_min));
    return NoiseSchedule(Eigen::ArrayXd::LinSpaced(total_steps, beta_min, beta_max));
}

StepPlan::StepPlan(std::vector<int> indices, int total_steps) : indices_(std::move(indices)), total_steps_(total_steps)
{
    if (indices_.empty()) throw std::invalid_argument("StepPlan: empty plan");
    for (size_t i = 0; i < indices_.size(); ++i) {
        if (indices_[i] < 1 || indices_[i] > total_steps_) throw std::invalid_argument("StepPlan: index out of range");
        if (i > 0 && indices_[i] <= indices_[i - 1]) throw std::invalid_argument("StepPlan: indices not increasing");
    }
    if (indices_.back() != total_steps_) throw std::invalid_argument("StepPlan: last index must equal T_max");
}

StepPlan StepPlan::even(int total_steps, int steps)
{
    if (steps < 1 || steps > total_steps) throw std::invalid_argument("StepPlan::even: steps must be in [1, T_max]");
    std::vector<int> idx(steps);
    for (int k = 1; k <= steps; ++k) idx[k - 1] = int((long long)k * total_steps / steps);
    return StepPlan(std::move(idx), total_steps);
}

void require_plan_fits(const StepPlan& plan, const NoiseSchedule& sched)
{
    if (plan.size() == 0 || plan.total_steps() != sched.total_steps()) {
        throw std::invalid_argument("step plan does not match the schedule length");
    }
}

} // namespace reenact
