#include "doctest.h"
#include "reenact/layers.hpp"
#include "test_support.hpp"

using namespace reenact;
using namespace reenact::testing;

namespace {

VarD weighted_sum(const VarD& y, const TensorD& w)
{
    return sum(mul(y, VarD::constant(w)));
}

} // namespace

TEST_CASE("elementwise ops match finite differences")
{
    std::mt19937_64 rng(1);
    const Shape s{2, 3, 2, 2};
    const TensorD x = random_tensor(s, rng);
    const TensorD w = random_tensor(s, rng);
    const TensorD other = random_tensor(s, rng);

    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(silu(v), w); }, x) < 1e-5);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(square(v), w); }, x) < 1e-5);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(abs(v), w); }, x) < 1e-5);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(mul(v, VarD::constant(other)), w); }, x) < 1e-5);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(axpby(0.3, v, -1.7, square(v)), w); }, x) < 1e-5);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(clamp(v, -0.5, 0.5), w); }, x) < 1e-5);
    CHECK(gradcheck([&](const VarD& v) { return sum(sqrt(sample_mean(square(v)))); }, x) < 1e-5);
}

TEST_CASE("shape ops route gradients")
{
    std::mt19937_64 rng(2);
    const TensorD a = random_tensor(Shape{2, 3, 2, 2}, rng);
    const TensorD b = random_tensor(Shape{2, 2, 2, 2}, rng);
    const TensorD w = random_tensor(Shape{2, 5, 2, 2}, rng);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(concat_channels(v, VarD::constant(b)), w); }, a) < 1e-5);
    const TensorD ws = random_tensor(Shape{2, 2, 2, 2}, rng);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(slice_channels(v, 1, 2), ws); }, a) < 1e-5);
    const TensorD wb = random_tensor(Shape{1, 3, 2, 2}, rng);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(slice_batch(v, 1, 1), wb); }, a) < 1e-5);
    const TensorD wp = random_tensor(Shape{2, 3, 1, 1}, rng);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(avg_pool2(v), wp); }, a) < 1e-5);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(global_avg_pool(v), wp); }, a) < 1e-5);
    const TensorD wu = random_tensor(Shape{2, 3, 4, 4}, rng);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(upsample2(v), wu); }, a) < 1e-5);
}

TEST_CASE("conv2d gradients for input, weight and bias")
{
    std::mt19937_64 rng(3);
    const TensorD x = random_tensor(Shape{2, 3, 5, 5}, rng);
    const TensorD weight = random_tensor(Shape{4, 3, 3, 3}, rng);
    const TensorD bias = random_tensor(Shape{1, 4, 1, 1}, rng);
    for (int stride : {1, 2}) {
        const int out = stride == 1 ? 5 : 3;
        const TensorD w = random_tensor(Shape{2, 4, out, out}, rng);
        CHECK(gradcheck([&](const VarD& v) { return weighted_sum(conv2d(v, VarD::constant(weight), VarD::constant(bias), stride, 1), w); }, x) < 1e-5);
        CHECK(gradcheck([&](const VarD& v) { return weighted_sum(conv2d(VarD::constant(x), v, VarD::constant(bias), stride, 1), w); }, weight) < 1e-5);
        CHECK(gradcheck([&](const VarD& v) { return weighted_sum(conv2d(VarD::constant(x), VarD::constant(weight), v, stride, 1), w); }, bias) < 1e-5);
    }
    const TensorD w1 = random_tensor(Shape{4, 3, 1, 1}, rng);
    const TensorD wo = random_tensor(Shape{2, 4, 5, 5}, rng);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(conv2d(v, VarD::constant(w1), VarD::constant(bias), 1, 0), wo); }, x) < 1e-5);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(conv2d(VarD::constant(x), v, VarD::constant(bias), 1, 0), wo); }, w1) < 1e-5);
}

TEST_CASE("conv2d matches direct convolution")
{
    std::mt19937_64 rng(4);
    const TensorD x = random_tensor(Shape{1, 2, 4, 4}, rng);
    const TensorD weight = random_tensor(Shape{3, 2, 3, 3}, rng);
    const TensorD bias = random_tensor(Shape{1, 3, 1, 1}, rng);
    const TensorD y = conv2d(VarD::constant(x), VarD::constant(weight), VarD::constant(bias), 1, 1).value();
    for (int co = 0; co < 3; ++co)
        for (int oy = 0; oy < 4; ++oy)
            for (int ox = 0; ox < 4; ++ox) {
                double acc = bias[co];
                for (int ci = 0; ci < 2; ++ci)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = oy + ky - 1, ix = ox + kx - 1;
                            if (iy < 0 || iy >= 4 || ix < 0 || ix >= 4) continue;
                            acc += weight.at(co, ci, ky, kx) * x.at(0, ci, iy, ix);
                        }
                CHECK(y.at(0, co, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("linear, group norm and modulation gradients")
{
    std::mt19937_64 rng(5);
    const TensorD x = random_tensor(vector_shape(3, 4), rng);
    const TensorD weight = random_tensor(Shape{5, 4, 1, 1}, rng);
    const TensorD bias = random_tensor(Shape{1, 5, 1, 1}, rng);
    const TensorD w = random_tensor(vector_shape(3, 5), rng);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(linear(v, VarD::constant(weight), VarD::constant(bias)), w); }, x) < 1e-5);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(linear(VarD::constant(x), v, VarD::constant(bias)), w); }, weight) < 1e-5);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(linear(VarD::constant(x), VarD::constant(weight), v), w); }, bias) < 1e-5);

    const TensorD img = random_tensor(Shape{2, 4, 3, 3}, rng);
    const TensorD wi = random_tensor(Shape{2, 4, 3, 3}, rng);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(group_norm(v, 2), wi); }, img) < 1e-5);
    const TensorD sc = random_tensor(vector_shape(2, 4), rng);
    const TensorD sh = random_tensor(vector_shape(2, 4), rng);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(modulate(v, VarD::constant(sc), VarD::constant(sh)), wi); }, img) < 1e-5);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(modulate(VarD::constant(img), v, VarD::constant(sh)), wi); }, sc) < 1e-5);
    CHECK(gradcheck([&](const VarD& v) { return weighted_sum(modulate(VarD::constant(img), VarD::constant(sc), v), wi); }, sh) < 1e-5);
}

TEST_CASE("cosine similarity gradient and zero-norm error")
{
    std::mt19937_64 rng(6);
    const TensorD a = random_tensor(vector_shape(3, 5), rng);
    const TensorD b = random_tensor(vector_shape(3, 5), rng);
    CHECK(gradcheck([&](const VarD& v) { return sum(cosine_similarity(v, VarD::constant(b))); }, a) < 1e-5);
    CHECK_THROWS_AS(cosine_similarity(VarD::constant(TensorD(vector_shape(1, 3))), VarD::constant(TensorD(vector_shape(1, 3)))),
                    std::domain_error);
}

TEST_CASE("no-grad mode records nothing and frozen parameters stay untouched")
{
    std::mt19937_64 rng(7);
    Linear<double> layer(3, 2, rng);
    const auto x = VarD::constant(random_tensor(vector_shape(2, 3), rng));
    {
        NoGradGuard guard;
        auto y = layer(x);
        CHECK_FALSE(y.requires_grad());
    }
    layer.weight.set_trainable(false);
    auto y = sum(layer(x));
    y.backward();
    CHECK_FALSE(layer.weight.has_grad());
    CHECK(layer.bias.has_grad());
}

TEST_CASE("parameter copies are independent")
{
    Parameter<double> p(TensorD::constant(vector_shape(1, 2), 1.0));
    Parameter<double> q = p;
    q.value()[0] = 5.0;
    CHECK(p.value()[0] == 1.0);
    CHECK(q.trainable());
}

TEST_CASE("sqrt has a zero subgradient at zero")
{
    auto v = VarD::leaf(TensorD(vector_shape(1, 3)));
    auto y = sum(sqrt(sample_mean(square(v))));
    y.backward();
    CHECK(y.item() == 0.0);
    CHECK(v.grad().array().isFinite().all());
}
