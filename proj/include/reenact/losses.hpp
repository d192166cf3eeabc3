#pragma once

#include "reenact/autograd.hpp"
#include "reenact/config.hpp"
#include "reenact/oracles.hpp"

#include <json.hpp>

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace reenact {

/// Per-sample root-mean-square of (a - b), averaged over the batch. Gradient is zero where a sample's RMS is zero.
template <typename Scalar>
Var<Scalar> rms_distance(const Var<Scalar>& a, const Var<Scalar>& b)
{
    require_same_shape(a.shape(), b.shape(), "rms_distance");
    const Var<Scalar> d = a - b;
    const Shape s = d.shape();
    typename Tensor<Scalar>::Array r(s.n);
    for (int n = 0; n < s.n; ++n) r[n] = std::sqrt(d.value().sample(n).square().mean());
    Tensor<Scalar> out(Shape{}, Tensor<Scalar>::Array::Constant(1, r.mean()));
    auto nd = d.node();
    return make_result<Scalar>(std::move(out), {d}, [nd, r](Node<Scalar>& self) {
        const Shape s = nd->value.shape();
        auto& g = nd->grad_buffer();
        for (int n = 0; n < s.n; ++n) {
            if (r[n] > Scalar(0)) {
                g.sample(n) += self.grad[0] / Scalar(s.n) * nd->value.sample(n) / (r[n] * Scalar(s.sample_size()));
            }
        }
    });
}

/// Mean absolute difference over all elements.
template <typename Scalar>
Var<Scalar> l1_loss(const Var<Scalar>& a, const Var<Scalar>& b)
{
    require_same_shape(a.shape(), b.shape(), "l1_loss");
    return mean(abs(a - b));
}

// Terms on precomputed features. The reference side is normally a constant.

template <typename Scalar>
Var<Scalar> pixel_loss(const Var<Scalar>& x_ref, const Var<Scalar>& x_gen)
{
    return rms_distance(x_ref, x_gen);
}

template <typename Scalar>
Var<Scalar> perceptual_loss(const std::vector<Var<Scalar>>& f_ref, const std::vector<Var<Scalar>>& f_gen)
{
    if (f_ref.size() != f_gen.size() || f_ref.empty()) throw ShapeError("perceptual_loss: layer count mismatch");
    Var<Scalar> total = rms_distance(f_ref[0], f_gen[0]);
    for (std::size_t l = 1; l < f_ref.size(); ++l) total = total + rms_distance(f_ref[l], f_gen[l]);
    return total;
}

/// 1 - cosine of identity embeddings, averaged over the batch.
template <typename Scalar>
Var<Scalar> identity_loss(const Var<Scalar>& e_ref, const Var<Scalar>& e_gen)
{
    return mean(add_scalar(scale(cosine_similarity(e_ref, e_gen), Scalar(-1)), Scalar(1)));
}

/// Distance of the images outside their face masks; masks are (n, 1, H, W) with 1 on the face.
template <typename Scalar>
Var<Scalar> background_loss(const Var<Scalar>& x_ref, const Var<Scalar>& x_gen, const Tensor<Scalar>& mask_ref,
                            const Tensor<Scalar>& mask_gen)
{
    const auto keep = [](const Tensor<Scalar>& mask, const Shape& s) {
        if (mask.shape().n != s.n || mask.shape().c != 1 || mask.shape().h != s.h || mask.shape().w != s.w) {
            throw ShapeError("background_loss: mask " + mask.shape().str() + " for images " + s.str());
        }
        Tensor<Scalar> k(s);
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) k.plane(n).col(c) = Scalar(1) - mask.plane(n).col(0).array();
        return Var<Scalar>::constant(std::move(k));
    };
    return rms_distance(mul(x_ref, keep(mask_ref, x_ref.shape())), mul(x_gen, keep(mask_gen, x_gen.shape())));
}

template <typename Scalar>
Var<Scalar> style_loss(const Var<Scalar>& s_ref, const Var<Scalar>& s_gen)
{
    return rms_distance(s_ref, s_gen);
}

/// Gaze (radians), landmark (pixels) and head pose (degrees) terms are mean absolute differences.
template <typename Scalar>
Var<Scalar> gaze_loss(const Var<Scalar>& g_ref, const Var<Scalar>& g_gen)
{
    return l1_loss(g_ref, g_gen);
}

template <typename Scalar>
Var<Scalar> shape_loss(const Var<Scalar>& l_ref, const Var<Scalar>& l_gen)
{
    return l1_loss(l_ref, l_gen);
}

template <typename Scalar>
Var<Scalar> headpose_loss(const Var<Scalar>& p_ref, const Var<Scalar>& p_gen)
{
    return l1_loss(p_ref, p_gen);
}

// Image-level forms with an arbitrary extractor callable.

template <typename Scalar, typename Backbone>
Var<Scalar> perceptual_loss(const Var<Scalar>& x_ref, const Var<Scalar>& x_gen, const Backbone& backbone)
{
    return perceptual_loss<Scalar>(backbone(x_ref), backbone(x_gen));
}

template <typename Scalar, typename Extractor>
Var<Scalar> feature_l1(const Var<Scalar>& x_ref, const Var<Scalar>& x_gen, const Extractor& f)
{
    return l1_loss<Scalar>(f(x_ref), f(x_gen));
}

template <typename Scalar, typename Embedder>
Var<Scalar> identity_loss(const Var<Scalar>& x_ref, const Var<Scalar>& x_gen, const Embedder& f)
{
    return identity_loss<Scalar>(f(x_ref), f(x_gen));
}

template <typename Scalar, typename Embedder>
Var<Scalar> style_loss(const Var<Scalar>& x_ref, const Var<Scalar>& x_gen, const Embedder& f)
{
    return style_loss<Scalar>(f(x_ref), f(x_gen));
}

inline constexpr int kLossTerms = 8;
inline const std::array<std::string, kLossTerms> kLossTermNames{"pix", "per", "id", "st", "bg", "sh", "g", "hp"};

inline std::array<double, kLossTerms> weight_array(const LossWeights& w)
{
    return {w.lambda_pix, w.lambda_per, w.lambda_id, w.lambda_st, w.lambda_bg, w.lambda_sh, w.lambda_g, w.lambda_hp};
}

/// Per-term values and the weighted total.
struct LossReport
{
    std::array<double, kLossTerms> terms{};
    double total = 0;

    double term(const std::string& name) const
    {
        for (int k = 0; k < kLossTerms; ++k)
            if (kLossTermNames[std::size_t(k)] == name) return terms[std::size_t(k)];
        throw std::out_of_range("unknown loss term " + name);
    }
    nlohmann::json to_json() const
    {
        nlohmann::json j;
        for (int k = 0; k < kLossTerms; ++k) j[kLossTermNames[std::size_t(k)]] = terms[std::size_t(k)];
        j["total"] = total;
        return j;
    }
};

template <typename Scalar>
struct LossResult
{
    Var<Scalar> total;
    LossReport report;
};

/**
 * Weighted objective of the reenacted batch against the target batch. All terms use
 * the target as reference; the target's face mask is used for both images. The
 * target side is evaluated without a graph. Throws NumericError naming a non-finite term.
 */
template <typename Scalar>
LossResult<Scalar> total_loss(const Tensor<Scalar>& x_target, const Var<Scalar>& x_reenacted,
                              const Tensor<Scalar>& target_mask, const OracleExtractors<Scalar>& ext,
                              const LossWeights& weights)
{
    require_same_shape(x_target.shape(), x_reenacted.shape(), "total_loss");
    const auto ref = Var<Scalar>::constant(x_target);
    OracleOutputs<Scalar> o_ref;
    std::vector<Var<Scalar>> f_ref;
    {
        NoGradGuard guard;
        o_ref = ext(ref);
        f_ref = ext.perceptual(ref);
    }
    const auto o_gen = ext(x_reenacted);
    const auto f_gen = ext.perceptual(x_reenacted);

    const std::array<Var<Scalar>, kLossTerms> terms{pixel_loss(ref, x_reenacted),
                                                    perceptual_loss<Scalar>(f_ref, f_gen),
                                                    identity_loss<Scalar>(o_ref.identity, o_gen.identity),
                                                    style_loss<Scalar>(o_ref.style, o_gen.style),
                                                    background_loss(ref, x_reenacted, target_mask, target_mask),
                                                    shape_loss<Scalar>(o_ref.landmarks, o_gen.landmarks),
                                                    gaze_loss<Scalar>(o_ref.gaze, o_gen.gaze),
                                                    headpose_loss<Scalar>(o_ref.pose, o_gen.pose)};
    const auto w = weight_array(weights);
    LossResult<Scalar> r;
    for (int k = 0; k < kLossTerms; ++k) {
        const double v = double(terms[std::size_t(k)].item());
        if (!std::isfinite(v)) throw NumericError("total_loss: non-finite term " + kLossTermNames[std::size_t(k)]);
        r.report.terms[std::size_t(k)] = v;
        r.report.total += w[std::size_t(k)] * v;
        const auto weighted = scale(terms[std::size_t(k)], Scalar(w[std::size_t(k)]));
        r.total = k == 0 ? weighted : r.total + weighted;
    }
    return r;
}

} // namespace reenact
