#pragma once

#include "reenact/tensor.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <vector>

namespace reenact {

inline constexpr int kLandmarkCount = 32;

/// Contiguous index range of one facial part inside the 32-point layout.
struct LandmarkGroup
{
    int begin;
    int count;
    bool closed;
};

namespace groups {
inline constexpr LandmarkGroup jaw{0, 9, false};
inline constexpr LandmarkGroup left_brow{9, 3, false};
inline constexpr LandmarkGroup right_brow{12, 3, false};
inline constexpr LandmarkGroup left_eye{15, 4, true};  // outer, top, inner, bottom
inline constexpr LandmarkGroup right_eye{19, 4, true}; // inner, top, outer, bottom
inline constexpr LandmarkGroup nose{23, 3, false};
inline constexpr LandmarkGroup mouth{26, 6, false}; // corner, upper, corner, lower, inner top, inner bottom
inline constexpr std::array<int, 4> mouth_outer{26, 27, 28, 29};
inline constexpr std::array<int, 4> mouth_inner{26, 30, 28, 31};
} // namespace groups

/// Norms of the raw directions before orthonormalisation; maps parameter units to basis coefficients.
struct BasisScales
{
    Eigen::VectorXd identity;
    Eigen::Vector3d pose = Eigen::Vector3d::Ones();
    Eigen::VectorXd expression;
};

/**
 * Linear 2D shape model s = mean + S_i p_i + S_pose p_pose + S_e p_e with the
 * columns of [S_i | S_pose | S_e] mutually orthonormal. Vectors are interleaved
 * (x0, y0, x1, y1, ...) in image-normalised coordinates.
 */
struct ShapeBasis
{
    Eigen::VectorXd mean;
    Eigen::MatrixXd identity;
    Eigen::MatrixXd pose;
    Eigen::MatrixXd expression;
    BasisScales scales;

    int identity_dims() const { return int(identity.cols()); }
    int expression_dims() const { return int(expression.cols()); }
    int rows() const { return int(mean.size()); }
};

/// Builds the orthonormal basis; directions are structured (jaw width, smile, ...) plus a seeded perturbation.
ShapeBasis make_shape_basis(std::uint64_t seed, int identity_dims, int expression_dims);

struct LandmarkSet
{
    Eigen::Matrix2Xd points;                   // one column per landmark
    std::vector<Eigen::Vector2d> gaze_points;  // left eye, right eye (may be empty)

    int size() const { return int(points.cols()); }
    Eigen::VectorXd flat() const { return Eigen::Map<const Eigen::VectorXd>(points.data(), points.size()); }
    static LandmarkSet from_flat(const Eigen::VectorXd& v);
    Eigen::Matrix2Xd group(const LandmarkGroup& g) const { return points.middleCols(g.begin, g.count); }
};

struct ShapeCoefficients
{
    Eigen::VectorXd identity;
    Eigen::VectorXd pose;
    Eigen::VectorXd expression;
};

LandmarkSet compose_shape(const ShapeBasis& basis, const Eigen::VectorXd& identity, const Eigen::VectorXd& pose,
                          const Eigen::VectorXd& expression);

/// Target shape that keeps the source identity and takes pose and expression from the target.
LandmarkSet mix_cross_subject(const ShapeBasis& basis, const Eigen::VectorXd& source_identity,
                              const Eigen::VectorXd& target_pose, const Eigen::VectorXd& target_expression);

/// Projects (s - mean) onto each basis block.
ShapeCoefficients project_coefficients(const ShapeBasis& basis, const LandmarkSet& shape);

/**
 * Gaze position inside one eye: c - (w/2) sin(beta) cos(alpha) horizontally and
 * c - (h/2) sin(alpha) vertically, with c the centre of the eye's bounding box.
 */
Eigen::Vector2d gaze_point(const Eigen::Matrix2Xd& eye_points, double alpha, double beta);

/// Fills gaze_points for both eyes of a 32-point set.
void attach_gaze(LandmarkSet& lms, double alpha, double beta);

inline constexpr int kConditionChannels = 3; // contour, feature points, gaze

/**
 * Rasterises landmarks to a (1, 3, H, W) map in [0, 1]: polylines of each part in
 * channel 0, anti-aliased point disks in channel 1, gaze disks in channel 2.
 * Radii scale with resolution (1 px at 32x32).
 */
TensorF rasterize(const LandmarkSet& lms, int height, int width);

} // namespace reenact
