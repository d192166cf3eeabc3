#pragma once

#include "reenact/autograd.hpp"

#include <random>

namespace reenact {

namespace detail {

/// Unfolds one (C, H, W) sample into a column-major (Ho*Wo x C*K*K) matrix.
template <typename Scalar>
void im2col(const Scalar* x, int C, int H, int W, int K, int stride, int pad, int Ho, int Wo, Scalar* cols)
{
    const Eigen::Index P = Eigen::Index(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < K; ++ky) {
            for (int kx = 0; kx < K; ++kx) {
                Scalar* col = cols + ((Eigen::Index(c) * K + ky) * K + kx) * P;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    Scalar* row = col + oy * Wo;
                    if (iy < 0 || iy >= H) {
                        std::fill(row, row + Wo, Scalar(0));
                        continue;
                    }
                    const Scalar* src = x + (Eigen::Index(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        row[ox] = (ix >= 0 && ix < W) ? src[ix] : Scalar(0);
                    }
                }
            }
        }
    }
}

template <typename Scalar>
void col2im(const Scalar* cols, int C, int H, int W, int K, int stride, int pad, int Ho, int Wo, Scalar* x)
{
    const Eigen::Index P = Eigen::Index(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < K; ++ky) {
            for (int kx = 0; kx < K; ++kx) {
                const Scalar* col = cols + ((Eigen::Index(c) * K + ky) * K + kx) * P;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    const Scalar* row = col + oy * Wo;
                    Scalar* dst = x + (Eigen::Index(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) dst[ix] += row[ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

/**
 * 2D convolution. weight has shape (Cout, Cin, K, K), bias (1, Cout, 1, 1).
 * Columns are recomputed in the backward pass instead of being cached.
 */
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, int stride, int pad)
{
    using Matrix = typename Tensor<Scalar>::Matrix;
    const Shape xs = x.shape(), ws = weight.shape();
    if (ws.c != xs.c || ws.h != ws.w) throw ShapeError("conv2d: weight " + ws.str() + " input " + xs.str());
    const int K = ws.h, Cout = ws.n;
    const int Ho = (xs.h + 2 * pad - K) / stride + 1;
    const int Wo = (xs.w + 2 * pad - K) / stride + 1;
    const Eigen::Index CKK = Eigen::Index(xs.c) * K * K;
    const bool pointwise = (K == 1 && stride == 1 && pad == 0);

    Tensor<Scalar> out(Shape{xs.n, Cout, Ho, Wo});
    Eigen::Map<const Matrix> wm(weight.value().data(), CKK, Cout);
    const auto b = bias.value().array().matrix().transpose();
    Matrix cols(pointwise ? 0 : Eigen::Index(Ho) * Wo, pointwise ? 0 : CKK);
    for (int n = 0; n < xs.n; ++n) {
        auto o = out.plane(n);
        if (pointwise) {
            o.noalias() = x.value().plane(n) * wm;
        } else {
            detail::im2col(x.value().data() + n * xs.sample_size(), xs.c, xs.h, xs.w, K, stride, pad, Ho, Wo,
                           cols.data());
            o.noalias() = cols * wm;
        }
        o.rowwise() += b;
    }

    auto nx = x.node(), nw = weight.node(), nb = bias.node();
    return make_result<Scalar>(
        std::move(out), {x, weight, bias},
        [nx, nw, nb, K, stride, pad, Ho, Wo, CKK, pointwise, Cout](Node<Scalar>& self) {
            const Shape xs = nx->value.shape();
            Eigen::Map<const Matrix> wm(nw->value.data(), CKK, Cout);
            Matrix cols(pointwise ? 0 : Eigen::Index(Ho) * Wo, pointwise ? 0 : CKK);
            Matrix dcols;
            for (int n = 0; n < xs.n; ++n) {
                auto go = self.grad.plane(n);
                if (nb->requires_grad) nb->grad_buffer().array() += go.colwise().sum().transpose().array();
                if (nw->requires_grad) {
                    Eigen::Map<Matrix> dw(nw->grad_buffer().data(), CKK, Cout);
                    if (pointwise) {
                        dw.noalias() += nx->value.plane(n).transpose() * go;
                    } else {
                        detail::im2col(nx->value.data() + n * xs.sample_size(), xs.c, xs.h, xs.w, K, stride, pad,
                                       Ho, Wo, cols.data());
                        dw.noalias() += cols.transpose() * go;
                    }
                }
                if (nx->requires_grad) {
                    auto& gx = nx->grad_buffer();
                    if (pointwise) {
                        gx.plane(n).noalias() += go * wm.transpose();
                    } else {
                        dcols.noalias() = go * wm.transpose();
                        detail::col2im(dcols.data(), xs.c, xs.h, xs.w, K, stride, pad, Ho, Wo,
                                       gx.data() + n * xs.sample_size());
                    }
                }
            }
        });
}

/// Fully connected layer over flattened samples. weight (Dout, Din, 1, 1), bias (1, Dout, 1, 1).
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias)
{
    using Matrix = typename Tensor<Scalar>::Matrix;
    const Shape xs = x.shape();
    const int Dout = weight.shape().n, Din = weight.shape().c;
    if (xs.sample_size() != Din) throw ShapeError("linear: input " + xs.str() + " weight " + weight.shape().str());
    Tensor<Scalar> out(vector_shape(xs.n, Dout));
    Eigen::Map<const Matrix> wt(weight.value().data(), Din, Dout);
    out.columns().noalias() = wt.transpose() * x.value().columns();
    out.columns().colwise() += bias.value().array().matrix();

    auto nx = x.node(), nw = weight.node(), nb = bias.node();
    return make_result<Scalar>(std::move(out), {x, weight, bias}, [nx, nw, nb, Din, Dout](Node<Scalar>& self) {
        Eigen::Map<const Matrix> wt(nw->value.data(), Din, Dout);
        const auto g = self.grad.columns();
        if (nb->requires_grad) nb->grad_buffer().array() += g.rowwise().sum().array();
        if (nw->requires_grad) {
            Eigen::Map<Matrix> dw(nw->grad_buffer().data(), Din, Dout);
            dw.noalias() += nx->value.columns() * g.transpose();
        }
        if (nx->requires_grad) nx->grad_buffer().columns().noalias() += wt * g;
    });
}

/// Group normalisation without affine parameters (modulation supplies scale and shift).
template <typename Scalar>
Var<Scalar> group_norm(const Var<Scalar>& x, int groups, Scalar eps = Scalar(1e-5))
{
    using Array = typename Tensor<Scalar>::Array;
    const Shape s = x.shape();
    if (s.c % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
    const Eigen::Index len = Eigen::Index(s.c / groups) * s.pixels();
    Tensor<Scalar> out(s);
    Array inv_std(s.n * groups);
    for (int n = 0; n < s.n; ++n) {
        for (int g = 0; g < groups; ++g) {
            const Eigen::Index off = n * s.sample_size() + g * len;
            const auto seg = x.value().array().segment(off, len);
            const Scalar mu = seg.mean();
            const Scalar var = (seg - mu).square().mean();
            const Scalar inv = Scalar(1) / std::sqrt(var + eps);
            inv_std[n * groups + g] = inv;
            out.array().segment(off, len) = (seg - mu) * inv;
        }
    }
    auto nx = x.node();
    Tensor<Scalar> xhat = out;
    return make_result<Scalar>(std::move(out), {x}, [nx, xhat, inv_std, groups, len](Node<Scalar>& self) {
        const Shape s = xhat.shape();
        auto& gx = nx->grad_buffer();
        for (int n = 0; n < s.n; ++n) {
            for (int g = 0; g < groups; ++g) {
                const Eigen::Index off = n * s.sample_size() + g * len;
                const auto dy = self.grad.array().segment(off, len);
                const auto xh = xhat.array().segment(off, len);
                const Scalar mdy = dy.mean();
                const Scalar mdyx = (dy * xh).mean();
                gx.array().segment(off, len) += inv_std[n * groups + g] * (dy - mdy - xh * mdyx);
            }
        }
    });
}

/// y = x * (1 + scale) + shift with per-sample, per-channel scale/shift of shape (n, c, 1, 1).
template <typename Scalar>
Var<Scalar> modulate(const Var<Scalar>& x, const Var<Scalar>& scale_, const Var<Scalar>& shift)
{
    const Shape s = x.shape();
    if (scale_.shape().n != s.n || scale_.shape().sample_size() != s.c || !(shift.shape() == scale_.shape())) {
        throw ShapeError("modulate: " + s.str() + " with " + scale_.shape().str());
    }
    Tensor<Scalar> out(s);
    for (int n = 0; n < s.n; ++n) {
        auto o = out.plane(n);
        const auto xi = x.value().plane(n);
        for (int c = 0; c < s.c; ++c) {
            o.col(c) = xi.col(c).array() * (Scalar(1) + scale_.value().at(n, c, 0, 0)) + shift.value().at(n, c, 0, 0);
        }
    }
    auto nx = x.node(), ns = scale_.node(), nt = shift.node();
    return make_result<Scalar>(std::move(out), {x, scale_, shift}, [nx, ns, nt](Node<Scalar>& self) {
        const Shape s = nx->value.shape();
        for (int n = 0; n < s.n; ++n) {
            const auto go = self.grad.plane(n);
            const auto xi = nx->value.plane(n);
            for (int c = 0; c < s.c; ++c) {
                if (nx->requires_grad)
                    nx->grad_buffer().plane(n).col(c) += go.col(c) * (Scalar(1) + ns->value.at(n, c, 0, 0));
                if (ns->requires_grad) ns->grad_buffer().at(n, c, 0, 0) += go.col(c).dot(xi.col(c));
                if (nt->requires_grad) nt->grad_buffer().at(n, c, 0, 0) += go.col(c).sum();
            }
        }
    });
}

/// 2x2 average pooling (H and W must be even).
template <typename Scalar>
Var<Scalar> avg_pool2(const Var<Scalar>& x)
{
    const Shape s = x.shape();
    if (s.h % 2 || s.w % 2) throw ShapeError("avg_pool2: odd spatial size");
    Shape so{s.n, s.c, s.h / 2, s.w / 2};
    Tensor<Scalar> out(so);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < so.h; ++y)
                for (int xx = 0; xx < so.w; ++xx)
                    out.at(n, c, y, xx) = Scalar(0.25) * (x.value().at(n, c, 2 * y, 2 * xx) + x.value().at(n, c, 2 * y, 2 * xx + 1) +
                                                          x.value().at(n, c, 2 * y + 1, 2 * xx) +
                                                          x.value().at(n, c, 2 * y + 1, 2 * xx + 1));
    auto nx = x.node();
    return make_result<Scalar>(std::move(out), {x}, [nx](Node<Scalar>& self) {
        auto& g = nx->grad_buffer();
        const Shape so = self.value.shape();
        for (int n = 0; n < so.n; ++n)
            for (int c = 0; c < so.c; ++c)
                for (int y = 0; y < so.h; ++y)
                    for (int xx = 0; xx < so.w; ++xx) {
                        const Scalar v = Scalar(0.25) * self.grad.at(n, c, y, xx);
                        g.at(n, c, 2 * y, 2 * xx) += v;
                        g.at(n, c, 2 * y, 2 * xx + 1) += v;
                        g.at(n, c, 2 * y + 1, 2 * xx) += v;
                        g.at(n, c, 2 * y + 1, 2 * xx + 1) += v;
                    }
    });
}

/// Nearest-neighbour 2x upsampling.
template <typename Scalar>
Var<Scalar> upsample2(const Var<Scalar>& x)
{
    const Shape s = x.shape();
    Shape so{s.n, s.c, s.h * 2, s.w * 2};
    Tensor<Scalar> out(so);
    for (int n = 0; n < so.n; ++n)
        for (int c = 0; c < so.c; ++c)
            for (int y = 0; y < so.h; ++y)
                for (int xx = 0; xx < so.w; ++xx) out.at(n, c, y, xx) = x.value().at(n, c, y / 2, xx / 2);
    auto nx = x.node();
    return make_result<Scalar>(std::move(out), {x}, [nx](Node<Scalar>& self) {
        auto& g = nx->grad_buffer();
        const Shape so = self.value.shape();
        for (int n = 0; n < so.n; ++n)
            for (int c = 0; c < so.c; ++c)
                for (int y = 0; y < so.h; ++y)
                    for (int xx = 0; xx < so.w; ++xx) g.at(n, c, y / 2, xx / 2) += self.grad.at(n, c, y, xx);
    });
}

/// (n, c, h, w) -> (n, c, 1, 1)
template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x)
{
    const Shape s = x.shape();
    Tensor<Scalar> out(vector_shape(s.n, s.c));
    for (int n = 0; n < s.n; ++n) out.sample(n) = x.value().plane(n).colwise().mean().transpose().array();
    auto nx = x.node();
    return make_result<Scalar>(std::move(out), {x}, [nx](Node<Scalar>& self) {
        const Shape s = nx->value.shape();
        auto& g = nx->grad_buffer();
        const Scalar inv = Scalar(1) / Scalar(s.pixels());
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) g.plane(n).col(c).array() += self.grad.at(n, c, 0, 0) * inv;
    });
}

// ---------------------------------------------------------------------------
// Parameterised layers.

template <typename Scalar>
struct Conv2d
{
    Parameter<Scalar> weight;
    Parameter<Scalar> bias;
    int stride = 1;
    int pad = 1;

    Conv2d() = default;
    Conv2d(int cin, int cout, int kernel, int stride_, std::mt19937_64& rng, Scalar gain = Scalar(1))
        : stride(stride_), pad(kernel / 2)
    {
        Tensor<Scalar> w(Shape{cout, cin, kernel, kernel});
        std::normal_distribution<double> dist(0.0, 1.0);
        const double std = double(gain) * std::sqrt(2.0 / double(cin * kernel * kernel));
        for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = Scalar(dist(rng) * std);
        weight = Parameter<Scalar>(std::move(w));
        bias = Parameter<Scalar>(Tensor<Scalar>(Shape{1, cout, 1, 1}));
    }

    /// Zero-initialised convolution (weights and bias).
    static Conv2d zeros(int cin, int cout, int kernel)
    {
        Conv2d c;
        c.pad = kernel / 2;
        c.weight = Parameter<Scalar>(Tensor<Scalar>(Shape{cout, cin, kernel, kernel}));
        c.bias = Parameter<Scalar>(Tensor<Scalar>(Shape{1, cout, 1, 1}));
        return c;
    }

    Var<Scalar> operator()(const Var<Scalar>& x) const { return conv2d(x, weight.var(), bias.var(), stride, pad); }

    void collect(ParameterList<Scalar>& out, const std::string& prefix)
    {
        out.push_back({prefix + ".weight", &weight});
        out.push_back({prefix + ".bias", &bias});
    }
};

template <typename Scalar>
struct Linear
{
    Parameter<Scalar> weight;
    Parameter<Scalar> bias;

    Linear() = default;
    Linear(int din, int dout, std::mt19937_64& rng, Scalar gain = Scalar(1))
    {
        Tensor<Scalar> w(Shape{dout, din, 1, 1});
        std::normal_distribution<double> dist(0.0, 1.0);
        const double std = double(gain) * std::sqrt(1.0 / double(din));
        for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = Scalar(dist(rng) * std);
        weight = Parameter<Scalar>(std::move(w));
        bias = Parameter<Scalar>(Tensor<Scalar>(Shape{1, dout, 1, 1}));
    }

    Var<Scalar> operator()(const Var<Scalar>& x) const { return linear(x, weight.var(), bias.var()); }

    void collect(ParameterList<Scalar>& out, const std::string& prefix)
    {
        out.push_back({prefix + ".weight", &weight});
        out.push_back({prefix + ".bias", &bias});
    }
};

} // namespace reenact
