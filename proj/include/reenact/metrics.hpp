#pragma once

#include "reenact/landmarks.hpp"
#include "reenact/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace reenact {

inline constexpr double kPsnrCap = 100.0;
inline constexpr double kValueRange = 2.0; // images live in [-1, 1]

/// 10 log10(peak^2 / MSE) over all elements, capped for identical inputs.
template <typename Scalar>
double psnr(const Tensor<Scalar>& a, const Tensor<Scalar>& b, double peak = kValueRange)
{
    require_same_shape(a.shape(), b.shape(), "psnr");
    const double mse = (a.array() - b.array()).template cast<double>().square().mean();
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

template <typename Scalar>
double l1_distance(const Tensor<Scalar>& a, const Tensor<Scalar>& b)
{
    require_same_shape(a.shape(), b.shape(), "l1");
    return (a.array() - b.array()).template cast<double>().abs().mean();
}

/**
 * Mean SSIM over all valid uniform windows (7x7, or the image size if smaller),
 * channels and samples. Population statistics, k1 = 0.01, k2 = 0.03.
 */
template <typename Scalar>
double ssim(const Tensor<Scalar>& a, const Tensor<Scalar>& b, int window = 7, double range = kValueRange)
{
    require_same_shape(a.shape(), b.shape(), "ssim");
    const Shape s = a.shape();
    const int win = std::min({window, s.h, s.w});
    const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
    const double inv = 1.0 / double(win * win);
    double total = 0;
    long count = 0;
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y + win <= s.h; ++y) {
                for (int x = 0; x + win <= s.w; ++x) {
                    double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                    for (int dy = 0; dy < win; ++dy) {
                        for (int dx = 0; dx < win; ++dx) {
                            const double va = a.at(n, c, y + dy, x + dx), vb = b.at(n, c, y + dy, x + dx);
                            ma += va;
                            mb += vb;
                            saa += va * va;
                            sbb += vb * vb;
                            sab += va * vb;
                        }
                    }
                    ma *= inv;
                    mb *= inv;
                    const double va = saa * inv - ma * ma, vb = sbb * inv - mb * mb;
                    const double cov = sab * inv - ma * mb;
                    total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    ++count;
                }
            }
        }
    }
    return total / double(count);
}

/// Cosine similarity of two embedding vectors.
inline double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b)
{
    const double aa = a.squaredNorm(), bb = b.squaredNorm();
    if (!(aa > 0) || !(bb > 0)) throw std::domain_error("cosine: zero-norm embedding");
    return std::clamp(a.dot(b) / std::sqrt(aa * bb), -1.0, 1.0);
}

/// Diagonal of the axis-aligned bounding box of a landmark set.
inline double bbox_diagonal(const LandmarkSet& l)
{
    return (l.points.rowwise().maxCoeff() - l.points.rowwise().minCoeff()).norm();
}

/// Mean point error normalised by the reference bounding-box diagonal, in percent. Not symmetric.
inline double nme(const LandmarkSet& pred, const LandmarkSet& ref)
{
    if (pred.size() != ref.size() || ref.size() == 0) throw std::invalid_argument("nme: landmark count mismatch");
    const double diag = bbox_diagonal(ref);
    if (!(diag > 0)) throw std::domain_error("nme: degenerate reference landmarks");
    return 100.0 * (pred.points - ref.points).colwise().norm().mean() / diag;
}

/// Mean absolute difference over yaw, pitch and roll (degrees).
inline double apd(const Eigen::Vector3d& a, const Eigen::Vector3d& b) { return (a - b).cwiseAbs().mean(); }

/// Mean absolute difference over expression coefficients.
inline double aed(const Eigen::VectorXd& a, const Eigen::VectorXd& b)
{
    if (a.size() != b.size() || a.size() == 0) throw std::invalid_argument("aed: size mismatch");
    return (a - b).cwiseAbs().mean();
}

struct TemporalId
{
    double local = 1.0;
    double global = 1.0;
};

/**
 * Identity consistency of a generated video relative to the real one. Local uses
 * consecutive frames, global all frame pairs; each is the ratio of mean generated
 * similarity to mean real similarity, capped at 1. Embeddings one per frame.
 */
inline TemporalId temporal_id(const std::vector<Eigen::VectorXd>& real, const std::vector<Eigen::VectorXd>& generated)
{
    if (real.size() != generated.size() || real.size() < 2) {
        throw std::invalid_argument("temporal_id: need two or more frames in both videos");
    }
    const auto ratio = [](double gen, double ref) {
        if (gen >= ref) return 1.0;
        return ref > 0 ? std::max(0.0, gen / ref) : 0.0;
    };
    double lr = 0, lg = 0, gr = 0, gg = 0;
    int nl = 0, ng = 0;
    for (std::size_t i = 0; i < real.size(); ++i) {
        for (std::size_t j = i + 1; j < real.size(); ++j) {
            const double r = cosine(real[i], real[j]), g = cosine(generated[i], generated[j]);
            gr += r;
            gg += g;
            ++ng;
            if (j == i + 1) {
                lr += r;
                lg += g;
                ++nl;
            }
        }
    }
    return {ratio(lg / nl, lr / nl), ratio(gg / ng, gr / ng)};
}

} // namespace reenact
