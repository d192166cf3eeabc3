#include "doctest.h"
#include "reenact/diffusion.hpp"
#include "test_support.hpp"

#include <cmath>

using namespace reenact;
using namespace reenact::testing;

namespace {

using Code = TensorD;

/// Denoiser that knows the clean image and returns the exact noise that maps x0 to x_t.
struct PerfectDenoiser
{
    TensorD x0;
    const NoiseSchedule* sched;
    TensorD operator()(const TensorD& x_t, int t, const Code&) const
    {
        const double a = sched->alpha(t);
        return TensorD(x_t.shape(), (x_t.array() - std::sqrt(a) * x0.array()) / std::sqrt(1 - a));
    }
};

struct ConstantDenoiser
{
    double value;
    TensorD operator()(const TensorD& x_t, int, const Code&) const { return TensorD::constant(x_t.shape(), value); }
};

NoiseSchedule hand_schedule() { return NoiseSchedule((Eigen::ArrayXd(3) << 0.1, 0.2, 0.3).finished()); }

} // namespace

TEST_CASE("make_schedule: single step and hand product")
{
    const auto s1 = make_schedule(1, 0.1, 0.1);
    CHECK(s1.alpha(1) == doctest::Approx(0.9).epsilon(1e-15));
    const auto s3 = hand_schedule();
    CHECK(s3.alpha(3) == doctest::Approx(0.504).epsilon(1e-14));
    CHECK(s3.alpha(0) == 1.0);
    const auto s = make_schedule(3, 0.1, 0.3);
    CHECK(s.beta(2) == doctest::Approx(0.2));
}

TEST_CASE("make_schedule: long schedule is strictly decreasing in (0,1) and matches running product")
{
    const auto s = make_schedule(1000, 1e-4, 0.02);
    double running = 1.0;
    for (int t = 1; t <= 1000; ++t) {
        running *= 1.0 - s.beta(t);
        CHECK(std::abs(s.alpha(t) - running) <= 1e-12 * running);
        CHECK(s.alpha(t) > 0.0);
        CHECK(s.alpha(t) < 1.0);
        if (t > 1) CHECK(s.alpha(t) < s.alpha(t - 1));
    }
    CHECK(s.alpha(1) <= 1.0 - s.beta(1));
}

TEST_CASE("make_schedule rejects invalid arguments")
{
    CHECK_THROWS(make_schedule(0, 1e-4, 0.02));
    CHECK_THROWS(make_schedule(10, 0.0, 0.02));
    CHECK_THROWS(make_schedule(10, 0.03, 0.02));
    CHECK_THROWS(make_schedule(10, 1e-4, 1.0));
}

TEST_CASE("step plans")
{
    const auto p = StepPlan::even(1000, 20);
    CHECK(p.size() == 20);
    CHECK(p.indices().front() == 50);
    CHECK(p.indices().back() == 1000);
    const auto all = StepPlan::even(7, 7);
    for (int i = 0; i < 7; ++i) CHECK(all.indices()[i] == i + 1);
    CHECK(StepPlan::even(1000, 1).indices() == std::vector<int>{1000});
    CHECK_THROWS(StepPlan({1, 1, 3}, 3));
    CHECK_THROWS(StepPlan({1, 2}, 3));
    CHECK_THROWS(StepPlan({}, 3));
    CHECK_THROWS(StepPlan::even(10, 11));
}

TEST_CASE("q_sample and estimate_x0")
{
    std::mt19937_64 rng(11);
    const auto sched = make_schedule(1000, 1e-4, 0.02);
    const TensorD x0 = random_tensor(Shape{2, 3, 4, 4}, rng);
    const TensorD eps = random_tensor(Shape{2, 3, 4, 4}, rng);
    const TensorD zero(x0.shape());

    // zero noise
    const auto clean = q_sample(x0, 100, zero, sched);
    CHECK((clean.array() - std::sqrt(sched.alpha(100)) * x0.array()).abs().maxCoeff() < 1e-15);

    // pure-noise limit under a heavy schedule
    const auto heavy = make_schedule(1000, 0.05, 0.5);
    const auto noisy = q_sample(x0, 1000, eps, heavy);
    CHECK((noisy.array() - eps.array()).abs().maxCoeff() < 1e-10);

    CHECK_THROWS_AS(q_sample(x0, 1001, eps, sched), std::out_of_range);
    CHECK_THROWS_AS(q_sample(x0, 5, TensorD(Shape{1, 3, 4, 4}), sched), ShapeError);

    // estimate_x0 with zero eps is a rescale
    const auto rescaled = estimate_x0(clean, 100, zero, sched);
    CHECK((rescaled.array() - clean.array() / std::sqrt(sched.alpha(100))).abs().maxCoeff() < 1e-14);
}

TEST_CASE("q_sample and estimate_x0 match an elementwise scalar oracle")
{
    std::mt19937_64 rng(12);
    const auto sched = hand_schedule();
    const TensorD x0 = random_tensor(Shape{1, 3, 3, 3}, rng);
    const TensorD eps = random_tensor(Shape{1, 3, 3, 3}, rng);
    const double a2 = 0.9 * 0.8, a3 = 0.9 * 0.8 * 0.7;
    const auto xt = q_sample(x0, 3, eps, sched);
    const auto x0_hat = estimate_x0(xt, 2, eps, sched);
    for (Eigen::Index i = 0; i < x0.size(); ++i) {
        const double q = std::sqrt(a3) * x0[i] + std::sqrt(1 - a3) * eps[i];
        CHECK(xt[i] == doctest::Approx(q).epsilon(1e-14));
        const double e = (q - std::sqrt(1 - a2) * eps[i]) / std::sqrt(a2);
        CHECK(x0_hat[i] == doctest::Approx(e).epsilon(1e-13));
    }
}

TEST_CASE("exact inversion property on random inputs")
{
    std::mt19937_64 rng(13);
    const auto sched = make_schedule(1000, 1e-4, 0.02);
    std::uniform_int_distribution<int> step(1, 1000);
    for (int trial = 0; trial < 200; ++trial) {
        const TensorD x0 = random_tensor(Shape{1, 3, 4, 4}, rng);
        const TensorD eps = random_tensor(Shape{1, 3, 4, 4}, rng, -3, 3);
        const int t = step(rng);
        const auto back = estimate_x0(q_sample(x0, t, eps, sched), t, eps, sched);
        CHECK((back.array() - x0.array()).abs().maxCoeff() <= 1e-5);
    }
}

TEST_CASE("ddim_step: final step collapses to the x0 estimate")
{
    std::mt19937_64 rng(14);
    const auto sched = make_schedule(100, 1e-4, 0.02);
    const TensorD x = random_tensor(Shape{1, 3, 4, 4}, rng);
    const Code z(vector_shape(1, 4));
    ConstantDenoiser den{0.25};
    const auto out = ddim_step(x, 40, 0, z, den, sched);
    const auto expect = estimate_x0(x, 40, TensorD::constant(x.shape(), 0.25), sched);
    CHECK((out.array() - expect.array()).abs().maxCoeff() < 1e-14);
    CHECK_THROWS(ddim_step(x, 40, 40, z, den, sched));
}

TEST_CASE("ddim_step with the true noise lands on q_sample at t_prev")
{
    std::mt19937_64 rng(15);
    const auto sched = make_schedule(100, 1e-4, 0.02);
    const TensorD x0 = random_tensor(Shape{1, 3, 4, 4}, rng);
    const TensorD eps = random_tensor(Shape{1, 3, 4, 4}, rng);
    const Code z(vector_shape(1, 4));
    const auto xt = q_sample(x0, 80, eps, sched);
    auto den = [&](const TensorD&, int, const Code&) { return eps; };
    const auto out = ddim_step(xt, 80, 30, z, den, sched);
    const auto expect = q_sample(x0, 30, eps, sched);
    CHECK((out.array() - expect.array()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("ddim_step with a constant denoiser matches hand arithmetic")
{
    const auto sched = hand_schedule();
    TensorD x(Shape{1, 1, 1, 2});
    x[0] = 0.5;
    x[1] = -1.0;
    const Code z(vector_shape(1, 1));
    ConstantDenoiser den{0.1};
    const auto out = ddim_step(x, 3, 1, z, den, sched);
    const double a3 = 0.504, a1 = 0.9;
    for (int i = 0; i < 2; ++i) {
        const double f = (x[i] - std::sqrt(1 - a3) * 0.1) / std::sqrt(a3);
        CHECK(out[i] == doctest::Approx(std::sqrt(a1) * f + std::sqrt(1 - a1) * 0.1).epsilon(1e-14));
    }
}

TEST_CASE("ddim_sample")
{
    std::mt19937_64 rng(16);
    const auto sched = make_schedule(50, 1e-4, 0.02);
    const TensorD xT = random_tensor(Shape{1, 3, 4, 4}, rng);
    const Code z(vector_shape(1, 4));

    SUBCASE("plan of length one is a single final step")
    {
        ConstantDenoiser den{0.3};
        const auto a = ddim_sample(xT, z, StepPlan::even(50, 1), den, sched);
        const auto b = ddim_step(xT, 50, 0, z, den, sched);
        CHECK((a.array() - b.array()).abs().maxCoeff() == 0.0);
    }
    SUBCASE("zero-noise denoiser unrolls to x_T / sqrt(a_T)")
    {
        ConstantDenoiser den{0.0};
        for (int steps : {1, 5, 50}) {
            const auto a = ddim_sample(xT, z, StepPlan::even(50, steps), den, sched);
            CHECK((a.array() - xT.array() / std::sqrt(sched.alpha(50))).abs().maxCoeff() < 1e-12);
        }
    }
    SUBCASE("perfect denoiser recovers x0 for any plan")
    {
        const TensorD x0 = random_tensor(Shape{1, 3, 4, 4}, rng);
        const TensorD eps = random_tensor(Shape{1, 3, 4, 4}, rng);
        PerfectDenoiser den{x0, &sched};
        const auto xt = q_sample(x0, 50, eps, sched);
        const auto one = ddim_sample(xt, z, StepPlan::even(50, 1), den, sched);
        const auto full = ddim_sample(xt, z, StepPlan::even(50, 50), den, sched);
        CHECK((one.array() - x0.array()).abs().maxCoeff() < 1e-10);
        CHECK((full.array() - x0.array()).abs().maxCoeff() < 1e-10);
    }
    SUBCASE("deterministic")
    {
        ConstantDenoiser den{0.2};
        const auto a = ddim_sample(xT, z, StepPlan::even(50, 7), den, sched);
        const auto b = ddim_sample(xT, z, StepPlan::even(50, 7), den, sched);
        CHECK(a.array().cwiseEqual(b.array()).all());
    }
}

TEST_CASE("ddim_encode")
{
    std::mt19937_64 rng(17);
    const auto sched = make_schedule(50, 1e-4, 0.02);
    const TensorD x0 = random_tensor(Shape{1, 3, 4, 4}, rng);
    const Code z(vector_shape(1, 4));

    SUBCASE("zero-noise denoiser gives the scaling chain sqrt(a_T) x0")
    {
        ConstantDenoiser den{0.0};
        const auto plan = StepPlan::even(50, 10);
        const auto xT = ddim_encode(x0, z, plan, den, sched);
        TensorD hand = x0;
        int t = 0;
        for (int tn : plan.indices()) {
            hand = TensorD(hand.shape(), hand.array() * std::sqrt(sched.alpha(tn) / sched.alpha(t)));
            t = tn;
        }
        CHECK((xT.array() - hand.array()).abs().maxCoeff() < 1e-13);
        CHECK((xT.array() - std::sqrt(sched.alpha(50)) * x0.array()).abs().maxCoeff() < 1e-13);
    }
    SUBCASE("plan of length one mirrors the final reverse step")
    {
        ConstantDenoiser den{0.4};
        const auto xT = ddim_encode(x0, z, StepPlan::even(50, 1), den, sched);
        const double a = sched.alpha(50);
        CHECK((xT.array() - (std::sqrt(a) * x0.array() + std::sqrt(1 - a) * 0.4)).abs().maxCoeff() < 1e-14);
        // decoding with the same constant noise inverts it exactly
        const auto back = ddim_sample(xT, z, StepPlan::even(50, 1), den, sched);
        CHECK((back.array() - x0.array()).abs().maxCoeff() < 1e-12);
    }
}
