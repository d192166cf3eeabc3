#pragma once

#include "reenact/diffae.hpp"
#include "reenact/landmarks.hpp"

#include <vector>

namespace reenact {

/**
 * Semantic encoder copy whose input is the source image plus a zero-initialised
 * 1x1 convolution of the target condition map.
 */
template <typename Scalar>
class ReenactEncoder
{
public:
    ReenactEncoder() = default;
    ReenactEncoder(const SemanticEncoder<Scalar>& backbone, int image_channels, int condition_channels)
        : backbone_(backbone), zero_conv_(Conv2d<Scalar>::zeros(condition_channels, image_channels, 1))
    {
    }

    SemanticEncoder<Scalar>& backbone() { return backbone_; }
    const SemanticEncoder<Scalar>& backbone() const { return backbone_; }
    Conv2d<Scalar>& zero_conv() { return zero_conv_; }
    const Conv2d<Scalar>& zero_conv() const { return zero_conv_; }

    Var<Scalar> inject(const Var<Scalar>& condition) const { return zero_conv_(condition); }

    Var<Scalar> operator()(const Var<Scalar>& x_source, const Var<Scalar>& condition) const
    {
        const Shape a = x_source.shape(), b = condition.shape();
        if (a.n != b.n || a.h != b.h || a.w != b.w) {
            throw ShapeError("encode_reenact: condition " + b.str() + " does not match image " + a.str());
        }
        return backbone_(x_source + zero_conv_(condition));
    }

    ParameterList<Scalar> parameters()
    {
        ParameterList<Scalar> l;
        backbone_.collect(l, "reenact.backbone");
        zero_conv_.collect(l, "reenact.zero_conv");
        return l;
    }

    void save(Archive& a, const std::string& prefix = "reenact/") { save_parameters(a, parameters(), prefix); }
    /// Loads parameters into an encoder of matching architecture.
    void load(const Archive& a, const std::string& prefix = "reenact/") { load_parameters(a, parameters(), prefix); }

private:
    SemanticEncoder<Scalar> backbone_;
    Conv2d<Scalar> zero_conv_;
};

/// Copies (not shares) the semantic encoder weights and adds the zero convolution.
template <typename Scalar>
ReenactEncoder<Scalar> init_from_diffae(const DiffAEModel<Scalar>& model, int condition_channels = kConditionChannels)
{
    return ReenactEncoder<Scalar>(model.encoder(), model.config().image_channels, condition_channels);
}

/// Reenacted semantic codes (n, d, 1, 1) without recording a graph.
template <typename Scalar>
Tensor<Scalar> encode_reenact(const ReenactEncoder<Scalar>& enc, const Tensor<Scalar>& x_source,
                              const Tensor<Scalar>& condition)
{
    NoGradGuard guard;
    return enc(Var<Scalar>::constant(x_source), Var<Scalar>::constant(condition)).value();
}

/// Rasterised condition maps for a batch of landmark sets, (n, 3, H, W).
template <typename Scalar>
Tensor<Scalar> condition_maps(const std::vector<LandmarkSet>& lms, int size)
{
    Tensor<Scalar> out;
    for (const auto& l : lms) out = concat_batch(out, rasterize(l, size, size).template cast<Scalar>());
    return out;
}

} // namespace reenact
