#include "reenact/landmarks.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace reenact {

namespace {

constexpr double kPi = 3.14159265358979323846;

Eigen::Matrix2Xd mean_points()
{
    Eigen::Matrix2Xd p(2, kLandmarkCount);
    const double cx = 0.5, cy = 0.45, rx = 0.27, ry = 0.38;
    for (int k = 0; k < 9; ++k) {
        const double th = kPi - k * kPi / 8.0;
        p.col(k) << cx + rx * std::cos(th), cy + ry * std::sin(th);
    }
    const double rest[23][2] = {
        {0.30, 0.36},  {0.37, 0.33},  {0.44, 0.35},                  // left brow
        {0.56, 0.35},  {0.63, 0.33},  {0.70, 0.36},                  // right brow
        {0.31, 0.43},  {0.375, 0.405}, {0.44, 0.43}, {0.375, 0.452}, // left eye
        {0.56, 0.43},  {0.625, 0.405}, {0.69, 0.43}, {0.625, 0.452}, // right eye
        {0.50, 0.46},  {0.50, 0.57},  {0.50, 0.595},                 // nose
        {0.42, 0.69},  {0.50, 0.665}, {0.58, 0.69}, {0.50, 0.725},   // outer lips
        {0.50, 0.683}, {0.50, 0.699},                                // inner lips
    };
    for (int k = 0; k < 23; ++k) p.col(9 + k) << rest[k][0], rest[k][1];
    return p;
}

using Field = Eigen::Matrix2Xd;

Field empty_field() { return Field::Zero(2, kLandmarkCount); }

void shift_range(Field& f, int begin, int count, double dx, double dy)
{
    for (int k = begin; k < begin + count; ++k) f.col(k) += Eigen::Vector2d(dx, dy);
}

Eigen::VectorXd flatten(const Field& f) { return Eigen::Map<const Eigen::VectorXd>(f.data(), f.size()); }

std::vector<Eigen::VectorXd> pose_directions(const Field& mean)
{
    Field yaw = empty_field(), pitch = empty_field(), roll = empty_field();
    for (int k = 0; k < kLandmarkCount; ++k) {
        const bool jaw = k < groups::jaw.count;
        yaw(0, k) = jaw ? 0.002 : 0.0025;
        pitch(1, k) = jaw ? 0.001 : 0.003;
        const double dx = mean(0, k) - 0.5, dy = mean(1, k) - 0.5;
        roll.col(k) << -dy * kPi / 180.0, dx * kPi / 180.0;
    }
    return {flatten(yaw), flatten(pitch), flatten(roll)};
}

Eigen::VectorXd expression_direction(int k)
{
    Field f = empty_field();
    switch (k) {
    case 0: // mouth open
        f(1, 27) = -0.004;
        f(1, 29) = 0.014;
        f(1, 30) = -0.004;
        f(1, 31) = 0.012;
        f(1, 26) = f(1, 28) = 0.003;
        break;
    case 1: // smile
        f.col(26) << -0.012, -0.010;
        f.col(28) << 0.012, -0.010;
        f(1, 27) = -0.002;
        break;
    case 2: // brow raise
        shift_range(f, groups::left_brow.begin, 6, 0.0, -0.012);
        f(1, 16) = f(1, 20) = -0.004;
        break;
    case 3: // eye openness
        f(1, 16) = f(1, 20) = -0.006;
        f(1, 18) = f(1, 22) = 0.004;
        break;
    default:
        return {};
    }
    return flatten(f);
}

Eigen::VectorXd identity_direction(int k, const Field& mean)
{
    Field f = empty_field();
    switch (k) {
    case 0: // jaw width
        for (int j = 0; j < groups::jaw.count; ++j) f(0, j) = 0.018 * (mean(0, j) - 0.5) / 0.27;
        break;
    case 1: // face length
        for (int j = 0; j < groups::jaw.count; ++j) f(1, j) = 0.02 * std::max(0.0, mean(1, j) - 0.45) / 0.38;
        shift_range(f, groups::mouth.begin, groups::mouth.count, 0.0, 0.012);
        f(1, 24) = f(1, 25) = 0.008;
        break;
    case 2: // eye spacing
        shift_range(f, groups::left_brow.begin, 3, -0.008, 0.0);
        shift_range(f, groups::left_eye.begin, 4, -0.008, 0.0);
        shift_range(f, groups::right_brow.begin, 3, 0.008, 0.0);
        shift_range(f, groups::right_eye.begin, 4, 0.008, 0.0);
        break;
    case 3: // nose length
        f(1, 24) = f(1, 25) = 0.014;
        break;
    case 4: // mouth width
        f(0, 26) = -0.015;
        f(0, 28) = 0.015;
        break;
    case 5: // brow height
        shift_range(f, groups::left_brow.begin, 6, 0.0, -0.010);
        break;
    default:
        return {};
    }
    return flatten(f);
}

Eigen::VectorXd random_unit(std::mt19937_64& rng, int rows)
{
    std::normal_distribution<double> n01;
    Eigen::VectorXd v(rows);
    for (int i = 0; i < rows; ++i) v[i] = n01(rng);
    return v.normalized();
}

/// Modified Gram-Schmidt with one re-orthogonalisation pass, preserving column order and sign.
Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& raw)
{
    Eigen::MatrixXd q = raw;
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (Eigen::Index i = 0; i < j; ++i) q.col(j) -= q.col(i).dot(q.col(j)) * q.col(i);
        }
        const double n = q.col(j).norm();
        if (n < 1e-8 * std::max(1.0, raw.col(j).norm())) {
            throw std::invalid_argument("make_shape_basis: linearly dependent directions");
        }
        q.col(j) /= n;
    }
    return q;
}

void require_rows(const Eigen::VectorXd& v, Eigen::Index n, const char* what)
{
    if (v.size() != n) {
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(n) + " coefficients, got " +
                                    std::to_string(v.size()));
    }
}

} // namespace

ShapeBasis make_shape_basis(std::uint64_t seed, int identity_dims, int expression_dims)
{
    const int rows = 2 * kLandmarkCount;
    if (identity_dims < 1 || expression_dims < 1 || identity_dims + expression_dims + 3 > rows) {
        throw std::invalid_argument("make_shape_basis: bad basis dimensions");
    }
    std::mt19937_64 rng(seed);
    const Field mean = mean_points();

    Eigen::MatrixXd raw(rows, 3 + expression_dims + identity_dims);
    const auto pose = pose_directions(mean);
    for (int k = 0; k < 3; ++k) raw.col(k) = pose[k];
    for (int k = 0; k < expression_dims; ++k) {
        Eigen::VectorXd d = expression_direction(k);
        raw.col(3 + k) = d.size() ? d : Eigen::VectorXd(0.02 * random_unit(rng, rows));
    }
    for (int k = 0; k < identity_dims; ++k) {
        Eigen::VectorXd d = identity_direction(k, mean);
        if (d.size() == 0) d = 0.03 * random_unit(rng, rows);
        d += 0.2 * d.norm() * random_unit(rng, rows);
        raw.col(3 + expression_dims + k) = d;
    }

    const Eigen::MatrixXd q = orthonormalize(raw);
    const Eigen::VectorXd norms = raw.colwise().norm().transpose();

    ShapeBasis b;
    b.mean = flatten(mean);
    b.pose = q.leftCols(3);
    b.expression = q.middleCols(3, expression_dims);
    b.identity = q.rightCols(identity_dims);
    b.scales.pose = norms.head(3);
    b.scales.expression = norms.segment(3, expression_dims);
    b.scales.identity = norms.tail(identity_dims);
    return b;
}

LandmarkSet LandmarkSet::from_flat(const Eigen::VectorXd& v)
{
    if (v.size() % 2 != 0) throw std::invalid_argument("LandmarkSet::from_flat: odd length");
    LandmarkSet s;
    s.points = Eigen::Map<const Eigen::Matrix2Xd>(v.data(), 2, v.size() / 2);
    return s;
}

LandmarkSet compose_shape(const ShapeBasis& basis, const Eigen::VectorXd& identity, const Eigen::VectorXd& pose,
                          const Eigen::VectorXd& expression)
{
    require_rows(identity, basis.identity.cols(), "compose_shape identity");
    require_rows(pose, basis.pose.cols(), "compose_shape pose");
    require_rows(expression, basis.expression.cols(), "compose_shape expression");
    const Eigen::VectorXd s = basis.mean + basis.identity * identity + basis.pose * pose + basis.expression * expression;
    return LandmarkSet::from_flat(s);
}

LandmarkSet mix_cross_subject(const ShapeBasis& basis, const Eigen::VectorXd& source_identity,
                              const Eigen::VectorXd& target_pose, const Eigen::VectorXd& target_expression)
{
    return compose_shape(basis, source_identity, target_pose, target_expression);
}

ShapeCoefficients project_coefficients(const ShapeBasis& basis, const LandmarkSet& shape)
{
    const Eigen::VectorXd d = shape.flat();
    require_rows(d, basis.rows(), "project_coefficients");
    const Eigen::VectorXd r = d - basis.mean;
    return {basis.identity.transpose() * r, basis.pose.transpose() * r, basis.expression.transpose() * r};
}

Eigen::Vector2d gaze_point(const Eigen::Matrix2Xd& eye_points, double alpha, double beta)
{
    if (eye_points.cols() < 2) throw std::invalid_argument("gaze_point: need at least two eye points");
    const Eigen::Vector2d lo = eye_points.rowwise().minCoeff();
    const Eigen::Vector2d hi = eye_points.rowwise().maxCoeff();
    const Eigen::Vector2d extent = hi - lo;
    if (!(extent.x() > 0.0) || !(extent.y() > 0.0)) throw std::invalid_argument("gaze_point: degenerate eye");
    const Eigen::Vector2d c = 0.5 * (lo + hi);
    return {c.x() - 0.5 * extent.x() * std::sin(beta) * std::cos(alpha), c.y() - 0.5 * extent.y() * std::sin(alpha)};
}

void attach_gaze(LandmarkSet& lms, double alpha, double beta)
{
    if (lms.size() != kLandmarkCount) throw std::invalid_argument("attach_gaze: need the full landmark layout");
    lms.gaze_points = {gaze_point(lms.group(groups::left_eye), alpha, beta),
                       gaze_point(lms.group(groups::right_eye), alpha, beta)};
}

namespace {

struct Canvas
{
    TensorF& map;
    int channel;
    int h, w;

    void put(int x, int y, float v)
    {
        float& dst = map.at(0, channel, y, x);
        dst = std::max(dst, v);
    }

    template <typename Dist>
    void stamp(double x0, double y0, double x1, double y1, double reach, Dist&& dist)
    {
        const int xa = std::max(0, int(std::floor(std::min(x0, x1) - reach)));
        const int xb = std::min(w - 1, int(std::ceil(std::max(x0, x1) + reach)));
        const int ya = std::max(0, int(std::floor(std::min(y0, y1) - reach)));
        const int yb = std::min(h - 1, int(std::ceil(std::max(y0, y1) + reach)));
        for (int y = ya; y <= yb; ++y) {
            for (int x = xa; x <= xb; ++x) {
                const double v = std::clamp(reach - dist(x + 0.5, y + 0.5), 0.0, 1.0);
                if (v > 0.0) put(x, y, float(v));
            }
        }
    }

    void disk(Eigen::Vector2d p, double radius)
    {
        p.x() *= w;
        p.y() *= h;
        stamp(p.x(), p.y(), p.x(), p.y(), radius + 0.5, [&](double x, double y) { return std::hypot(x - p.x(), y - p.y()); });
    }

    void segment(Eigen::Vector2d a, Eigen::Vector2d b, double half_width)
    {
        a.x() *= w;
        a.y() *= h;
        b.x() *= w;
        b.y() *= h;
        const Eigen::Vector2d ab = b - a;
        const double len2 = ab.squaredNorm();
        stamp(a.x(), a.y(), b.x(), b.y(), half_width + 0.5, [&](double x, double y) {
            const Eigen::Vector2d ap(x - a.x(), y - a.y());
            const double t = len2 > 0.0 ? std::clamp(ap.dot(ab) / len2, 0.0, 1.0) : 0.0;
            return (ap - t * ab).norm();
        });
    }
};

} // namespace

TensorF rasterize(const LandmarkSet& lms, int height, int width)
{
    if (height < 1 || width < 1) throw std::invalid_argument("rasterize: bad size");
    TensorF map(Shape{1, kConditionChannels, height, width});
    const double unit = std::min(height, width) / 32.0;
    Canvas contour{map, 0, height, width}, features{map, 1, height, width}, gaze{map, 2, height, width};

    const bool full = lms.size() == kLandmarkCount;
    if (full) {
        auto polyline = [&](const LandmarkGroup& g) {
            for (int k = 0; k + 1 < g.count; ++k) {
                contour.segment(lms.points.col(g.begin + k), lms.points.col(g.begin + k + 1), 0.5 * unit);
            }
            if (g.closed) contour.segment(lms.points.col(g.begin + g.count - 1), lms.points.col(g.begin), 0.5 * unit);
        };
        for (const auto& g : {groups::jaw, groups::left_brow, groups::right_brow, groups::left_eye, groups::right_eye,
                              groups::nose}) {
            polyline(g);
        }
        for (size_t k = 0; k < groups::mouth_outer.size(); ++k) {
            contour.segment(lms.points.col(groups::mouth_outer[k]),
                            lms.points.col(groups::mouth_outer[(k + 1) % groups::mouth_outer.size()]), 0.5 * unit);
        }
    }
    for (int k = full ? groups::jaw.count : 0; k < lms.size(); ++k) features.disk(lms.points.col(k), unit);
    for (const auto& g : lms.gaze_points) gaze.disk(g, unit);
    return map;
}

} // namespace reenact
