#include "reenact/facegen.hpp"

#include "reenact/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace reenact {

namespace {

constexpr double kPi = 3.14159265358979323846;

using Poly = std::vector<Eigen::Vector2d>;

double segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b)
{
    const Eigen::Vector2d ab = b - a, ap = p - a;
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0 ? std::clamp(ap.dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (ap - t * ab).norm();
}

/// Signed distance to a closed polygon, negative inside (even-odd rule).
double signed_distance(const Eigen::Vector2d& p, const Poly& poly)
{
    double d = 1e30;
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto& a = poly[j];
        const auto& b = poly[i];
        d = std::min(d, segment_distance(p, a, b));
        if ((b.y() > p.y()) != (a.y() > p.y())) {
            const double x = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
            if (p.x() < x) inside = !inside;
        }
    }
    return inside ? -d : d;
}

double polyline_distance(const Eigen::Vector2d& p, const Poly& line)
{
    double d = 1e30;
    for (std::size_t i = 0; i + 1 < line.size(); ++i) d = std::min(d, segment_distance(p, line[i], line[i + 1]));
    return d;
}

double coverage(double sd_pixels) { return std::clamp(0.5 - sd_pixels, 0.0, 1.0); }

Eigen::Vector3d lerp(const Eigen::Vector3d& a, const Eigen::Vector3d& b, double t) { return a + t * (b - a); }

Eigen::Vector3d uniform_color(std::mt19937_64& rng, double lo, double hi)
{
    std::uniform_real_distribution<double> u(lo, hi);
    const double r = u(rng), g = u(rng), b = u(rng);
    return {r, g, b};
}

/// Geometry derived from landmarks in pixel units.
struct FaceLayout
{
    Poly head, hair, left_eye, right_eye, mouth_outer, mouth_inner, nose, left_brow, right_brow;
    Eigen::Vector2d centre, axis_u, axis_v, left_pupil, right_pupil;
    double half_width = 1, half_height = 1, nose_offset = 0;
    bool mouth_open = false;
};

FaceLayout layout(const LandmarkSet& lms, double size)
{
    FaceLayout f;
    auto px = [&](int k) -> Eigen::Vector2d { return lms.points.col(k) * size; };
    const Eigen::Vector2d j0 = px(0), j8 = px(8), chin = px(4);
    const Eigen::Vector2d c = 0.5 * (j0 + j8);
    const Eigen::Vector2d u = (j8 - j0).normalized();
    const Eigen::Vector2d up(u.y(), -u.x());
    const double rx = 0.5 * (j8 - j0).norm();
    const Eigen::Vector2d brow_mid = 0.5 * (px(10) + px(13));
    const double ry = std::max((brow_mid - c).dot(up), 0.0) + 0.12 * size;

    for (int k = 0; k < groups::jaw.count; ++k) f.head.push_back(px(k));
    const int arc = 7;
    for (int k = 1; k < arc; ++k) {
        const double th = k * kPi / arc;
        f.head.push_back(c + rx * std::cos(th) * u + ry * std::sin(th) * up);
    }
    const double grow = 0.035 * size;
    f.hair.push_back(j8 + grow * u - 0.05 * size * up);
    for (int k = 0; k <= arc; ++k) {
        const double th = k * kPi / arc;
        f.hair.push_back(c + (rx + grow) * std::cos(th) * u + (ry + grow) * std::sin(th) * up);
    }
    f.hair.push_back(j0 - grow * u - 0.05 * size * up);

    for (int k = 0; k < 4; ++k) {
        f.left_eye.push_back(px(groups::left_eye.begin + k));
        f.right_eye.push_back(px(groups::right_eye.begin + k));
        f.mouth_outer.push_back(px(groups::mouth_outer[k]));
        f.mouth_inner.push_back(px(groups::mouth_inner[k]));
    }
    for (int k = 0; k < 3; ++k) {
        f.nose.push_back(px(groups::nose.begin + k));
        f.left_brow.push_back(px(groups::left_brow.begin + k));
        f.right_brow.push_back(px(groups::right_brow.begin + k));
    }
    f.mouth_open = (px(31) - px(30)).dot(-up) > 0.0;
    const Eigen::Vector2d top = c + ry * up;
    f.centre = 0.5 * (top + chin);
    f.axis_u = u;
    f.axis_v = -up;
    f.half_width = std::max(rx, 1e-6);
    f.half_height = std::max(0.5 * (chin - top).norm(), 1e-6);
    f.nose_offset = (px(24) - f.centre).dot(u) / f.half_width;
    f.left_pupil = lms.gaze_points.at(0) * size;
    f.right_pupil = lms.gaze_points.at(1) * size;
    return f;
}

} // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b)
{
    std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

FaceGenerator::FaceGenerator(int image_size, int identity_dims, int expression_dims, std::uint64_t basis_seed,
                             ParamBounds bounds)
    : size_(image_size), basis_seed_(basis_seed), bounds_(bounds),
      basis_(make_shape_basis(basis_seed, identity_dims, expression_dims))
{
    if (image_size < 8) throw std::invalid_argument("FaceGenerator: image too small");
}

FaceGenerator::FaceGenerator(const DataConfig& cfg)
    : FaceGenerator(cfg.image_size, cfg.identity_dims, cfg.expression_dims, cfg.basis_seed)
{
}

FaceParams FaceGenerator::sample_params(std::uint64_t identity_seed, std::uint64_t pose_seed) const
{
    FaceParams p;
    std::mt19937_64 id_rng(mix_seed(identity_seed, 1));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto sym = [&](std::mt19937_64& r, double b) { return b * (2.0 * unit(r) - 1.0); };

    p.identity.resize(basis_.identity_dims());
    for (auto& v : p.identity) v = sym(id_rng, bounds_.identity);
    Appearance& a = p.appearance;
    a.skin = lerp({0.96, 0.80, 0.69}, {0.42, 0.28, 0.20}, unit(id_rng)) + uniform_color(id_rng, -0.04, 0.04);
    static const Eigen::Vector3d hair_palette[5] = {
        {0.08, 0.06, 0.05}, {0.35, 0.22, 0.12}, {0.85, 0.72, 0.42}, {0.62, 0.25, 0.10}, {0.65, 0.65, 0.65}};
    a.hair = hair_palette[std::uniform_int_distribution<int>(0, 4)(id_rng)] + uniform_color(id_rng, -0.05, 0.05);
    a.iris = lerp({0.10, 0.08, 0.05}, {0.15, 0.35, 0.55}, unit(id_rng));
    a.background_top = uniform_color(id_rng, 0.1, 0.9);
    a.background_bottom = uniform_color(id_rng, 0.1, 0.9);
    a.light = sym(id_rng, 0.6);
    for (auto* col : {&a.skin, &a.hair}) *col = col->cwiseMax(0.0).cwiseMin(1.0);

    std::mt19937_64 pose_rng(mix_seed(pose_seed, 2));
    for (int k = 0; k < 3; ++k) p.pose[k] = sym(pose_rng, bounds_.pose[k]);
    p.expression.resize(basis_.expression_dims());
    for (auto& v : p.expression) v = sym(pose_rng, bounds_.expression);
    p.gaze = {sym(pose_rng, bounds_.gaze), sym(pose_rng, bounds_.gaze)};
    return p;
}

ShapeCoefficients FaceGenerator::coefficients(const FaceParams& p) const
{
    return {basis_.scales.identity.cwiseProduct(p.identity), basis_.scales.pose.cwiseProduct(p.pose),
            basis_.scales.expression.cwiseProduct(p.expression)};
}

Eigen::Vector3d FaceGenerator::pose_from_coefficients(const Eigen::VectorXd& c) const
{
    return c.cwiseQuotient(basis_.scales.pose);
}

LandmarkSet FaceGenerator::landmarks(const FaceParams& p) const
{
    const auto c = coefficients(p);
    LandmarkSet s = compose_shape(basis_, c.identity, c.pose, c.expression);
    attach_gaze(s, p.gaze[0], p.gaze[1]);
    return s;
}

FaceSample FaceGenerator::render(const FaceParams& p) const
{
    FaceSample out;
    out.params = p;
    out.landmarks = landmarks(p);
    const FaceLayout f = layout(out.landmarks, size_);
    const Appearance& a = p.appearance;
    const double s = size_ / 32.0;

    out.image = TensorF(Shape{1, 3, size_, size_});
    out.mask = TensorF(Shape{1, 1, size_, size_});
    const Eigen::Vector3d light = Eigen::Vector3d(a.light, -0.35, 0.85).normalized();
    const Eigen::Vector3d sclera(0.93, 0.93, 0.90);
    const Eigen::Vector3d lip = lerp(a.skin, {0.72, 0.22, 0.25}, 0.6);
    const Eigen::Vector3d mouth_dark(0.22, 0.06, 0.07);
    const Eigen::Vector3d brow = 0.8 * a.hair;
    const Eigen::Vector3d nose_line = 0.72 * a.skin;

    for (int y = 0; y < size_; ++y) {
        for (int x = 0; x < size_; ++x) {
            const Eigen::Vector2d q(x + 0.5, y + 0.5);
            Eigen::Vector3d col = lerp(a.background_top, a.background_bottom, q.y() / size_);
            col = lerp(col, a.hair, coverage(signed_distance(q, f.hair)));

            const double head_sd = signed_distance(q, f.head);
            const double face_cov = coverage(head_sd);
            if (face_cov > 0) {
                const Eigen::Vector2d d = q - f.centre;
                Eigen::Vector2d n2(d.dot(f.axis_u) / f.half_width - 0.5 * f.nose_offset, d.dot(f.axis_v) / f.half_height);
                const double r2 = std::min(n2.squaredNorm(), 1.0);
                const Eigen::Vector3d normal(n2.x(), n2.y(), std::sqrt(1.0 - r2));
                const double shade = 0.72 + 0.28 * std::max(0.0, normal.dot(light));
                Eigen::Vector3d skin = shade * a.skin;

                skin = lerp(skin, brow, std::clamp(0.55 * s + 0.5 - polyline_distance(q, f.left_brow), 0.0, 1.0));
                skin = lerp(skin, brow, std::clamp(0.55 * s + 0.5 - polyline_distance(q, f.right_brow), 0.0, 1.0));
                skin = lerp(skin, nose_line, std::clamp(0.35 * s + 0.5 - polyline_distance(q, f.nose), 0.0, 1.0));
                for (int e = 0; e < 2; ++e) {
                    const double eye_cov = coverage(signed_distance(q, e == 0 ? f.left_eye : f.right_eye));
                    if (eye_cov <= 0) continue;
                    const Eigen::Vector2d& pc = e == 0 ? f.left_pupil : f.right_pupil;
                    const double pupil = std::clamp(0.8 * s + 0.5 - (q - pc).norm(), 0.0, 1.0);
                    skin = lerp(skin, lerp(sclera, a.iris, pupil), eye_cov);
                }
                skin = lerp(skin, lip, coverage(signed_distance(q, f.mouth_outer)));
                if (f.mouth_open) skin = lerp(skin, mouth_dark, coverage(signed_distance(q, f.mouth_inner)));
                col = lerp(col, skin, face_cov);
            }
            for (int c = 0; c < 3; ++c) out.image.at(0, c, y, x) = float(2.0 * std::clamp(col[c], 0.0, 1.0) - 1.0);
            out.mask.at(0, 0, y, x) = head_sd < 0 ? 1.f : 0.f;
        }
    }
    quantize_8bit(out.image);
    return out;
}

std::vector<FaceParams> video_params(const FaceGenerator& gen, const FaceParams& start, int frames,
                                     const VideoOptions& opt)
{
    if (frames < 2) throw std::invalid_argument("make_video: need at least two frames");
    std::mt19937_64 rng(mix_seed(opt.motion_seed, 3));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto& b = gen.bounds();

    struct Track
    {
        double amp, omega, phase, lo, hi;
        double at(double x0, int k) const
        {
            return std::clamp(x0 + amp * (std::sin(omega * k + phase) - std::sin(phase)), lo, hi);
        }
    };
    // amplitude * omega bounds the per-frame change; scale every track by the yaw ratio
    const double yaw_amp = 12.0;
    auto make = [&](double amp, double bound) {
        const double cycles = 0.5 + unit(rng);
        const double omega = std::min(2 * kPi * cycles / frames, 0.9 * opt.max_yaw_step / yaw_amp);
        return Track{amp, omega, 2 * kPi * unit(rng), -bound, bound};
    };
    std::vector<Track> pose{make(yaw_amp, b.pose[0]), make(8.0, b.pose[1]), make(6.0, b.pose[2])};
    std::vector<Track> expr;
    for (int k = 0; k < start.expression.size(); ++k) expr.push_back(make(0.6, b.expression));
    std::vector<Track> gaze{make(0.2, b.gaze), make(0.2, b.gaze)};

    std::vector<FaceParams> out;
    for (int k = 0; k < frames; ++k) {
        FaceParams p = start;
        for (int d = 0; d < 3; ++d) p.pose[d] = k == 0 ? start.pose[d] : pose[d].at(start.pose[d], k);
        for (int d = 0; d < p.expression.size(); ++d) p.expression[d] = k == 0 ? start.expression[d] : expr[d].at(start.expression[d], k);
        for (int d = 0; d < 2; ++d) p.gaze[d] = k == 0 ? start.gaze[d] : gaze[d].at(start.gaze[d], k);
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<FaceSample> make_video(const FaceGenerator& gen, const FaceParams& start, int frames,
                                   const VideoOptions& opt)
{
    std::vector<FaceSample> out;
    for (const auto& p : video_params(gen, start, frames, opt)) out.push_back(gen.render(p));
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::uint64_t> identity_list(std::uint64_t seed, std::uint64_t split, int count)
{
    std::vector<std::uint64_t> ids(std::size_t(std::max(count, 0)));
    for (int i = 0; i < count; ++i) ids[i] = mix_seed(mix_seed(seed, 100 + split), std::uint64_t(i));
    return ids;
}

} // namespace

FaceDataset::FaceDataset(const DataConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed), gen_(cfg), train_(identity_list(seed, 0, cfg.train_identities)),
      val_(identity_list(seed, 1, cfg.val_identities)), test_(identity_list(seed, 2, cfg.test_identities))
{
}

const std::vector<std::uint64_t>& FaceDataset::identities(Split s) const
{
    return s == Split::Train ? train_ : s == Split::Val ? val_ : test_;
}

std::uint64_t FaceDataset::pose_seed(std::uint64_t identity, int index) const
{
    return mix_seed(identity ^ 0xA5A5A5A5ull, std::uint64_t(index));
}

FaceRef FaceDataset::random_face(Split s, std::mt19937_64& rng) const
{
    const auto& ids = identities(s);
    const auto id = ids[std::uniform_int_distribution<std::size_t>(0, ids.size() - 1)(rng)];
    const int k = std::uniform_int_distribution<int>(0, cfg_.poses_per_identity - 1)(rng);
    return {id, pose_seed(id, k)};
}

FacePair FaceDataset::random_self_pair(Split s, std::mt19937_64& rng) const
{
    const auto& ids = identities(s);
    const auto id = ids[std::uniform_int_distribution<std::size_t>(0, ids.size() - 1)(rng)];
    const int a = std::uniform_int_distribution<int>(0, cfg_.poses_per_identity - 1)(rng);
    int b = std::uniform_int_distribution<int>(0, cfg_.poses_per_identity - 2)(rng);
    if (b >= a) ++b;
    return {{id, pose_seed(id, a)}, {id, pose_seed(id, b)}};
}

FacePair FaceDataset::random_cross_pair(Split s, std::mt19937_64& rng) const
{
    const auto& ids = identities(s);
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, ids.size() - 1)(rng);
    std::size_t j = std::uniform_int_distribution<std::size_t>(0, ids.size() - 2)(rng);
    if (j >= i) ++j;
    const int a = std::uniform_int_distribution<int>(0, cfg_.poses_per_identity - 1)(rng);
    const int b = std::uniform_int_distribution<int>(0, cfg_.poses_per_identity - 1)(rng);
    return {{ids[i], pose_seed(ids[i], a)}, {ids[j], pose_seed(ids[j], b)}};
}

std::vector<FacePair> FaceDataset::self_pairs(Split s, int count) const
{
    std::vector<FacePair> out;
    for (int i = 0; i < count; ++i) {
        std::mt19937_64 rng(mix_seed(mix_seed(seed_, 200 + std::uint64_t(s)), std::uint64_t(i)));
        out.push_back(random_self_pair(s, rng));
    }
    return out;
}

std::vector<FacePair> FaceDataset::cross_pairs(Split s, int count) const
{
    std::vector<FacePair> out;
    for (int i = 0; i < count; ++i) {
        std::mt19937_64 rng(mix_seed(mix_seed(seed_, 300 + std::uint64_t(s)), std::uint64_t(i)));
        out.push_back(random_cross_pair(s, rng));
    }
    return out;
}

std::vector<VideoRef> FaceDataset::videos(Split s) const
{
    std::vector<VideoRef> out;
    const auto& ids = identities(s);
    for (int i = 0; i < cfg_.videos; ++i) {
        const auto id = ids[std::size_t(i) % ids.size()];
        out.push_back({id, pose_seed(id, 0), mix_seed(mix_seed(seed_, 400 + std::uint64_t(s)), std::uint64_t(i))});
    }
    return out;
}

std::vector<FaceSample> FaceDataset::video(const VideoRef& v) const
{
    return make_video(gen_, gen_.sample_params(v.identity, v.pose), cfg_.video_frames,
                      VideoOptions{cfg_.max_yaw_step, v.motion});
}

std::string FaceDataset::manifest_json() const
{
    using nlohmann::json;
    const auto& b = gen_.basis();
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    auto mat = [&](const Eigen::MatrixXd& m) {
        json cols = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) cols.push_back(vec(m.col(c)));
        return cols;
    };
    json j = {{"generator_version", kGeneratorVersion},
              {"seed", seed_},
              {"data",
               {{"image_size", cfg_.image_size},
                {"identity_dims", cfg_.identity_dims},
                {"expression_dims", cfg_.expression_dims},
                {"basis_seed", cfg_.basis_seed},
                {"train_identities", cfg_.train_identities},
                {"poses_per_identity", cfg_.poses_per_identity},
                {"val_identities", cfg_.val_identities},
                {"test_identities", cfg_.test_identities},
                {"videos", cfg_.videos},
                {"video_frames", cfg_.video_frames},
                {"max_yaw_step", cfg_.max_yaw_step},
                {"write_images", cfg_.write_images}}},
              {"shape_basis",
               {{"mean", vec(b.mean)},
                {"identity", mat(b.identity)},
                {"pose", mat(b.pose)},
                {"expression", mat(b.expression)},
                {"identity_scales", vec(b.scales.identity)},
                {"pose_scales", vec(b.scales.pose)},
                {"expression_scales", vec(b.scales.expression)}}},
              {"splits", {{"train", train_}, {"val", val_}, {"test", test_}}}};
    return j.dump(1) + "\n";
}

FaceDataset FaceDataset::from_manifest_json(const std::string& text)
{
    using nlohmann::json;
    json j;
    try {
        j = json::parse(text);
        if (j.at("generator_version").get<int>() != kGeneratorVersion) {
            throw DataError("dataset manifest was written by a different generator version");
        }
        const json& d = j.at("data");
        DataConfig cfg;
        cfg.image_size = d.at("image_size");
        cfg.identity_dims = d.at("identity_dims");
        cfg.expression_dims = d.at("expression_dims");
        cfg.basis_seed = d.at("basis_seed");
        cfg.train_identities = d.at("train_identities");
        cfg.poses_per_identity = d.at("poses_per_identity");
        cfg.val_identities = d.at("val_identities");
        cfg.test_identities = d.at("test_identities");
        cfg.videos = d.at("videos");
        cfg.video_frames = d.at("video_frames");
        cfg.max_yaw_step = d.at("max_yaw_step");
        cfg.write_images = d.at("write_images");
        FaceDataset ds(cfg, j.at("seed").get<std::uint64_t>());
        if (j.at("splits").at("train").get<std::vector<std::uint64_t>>() != ds.train_ ||
            j.at("splits").at("val").get<std::vector<std::uint64_t>>() != ds.val_ ||
            j.at("splits").at("test").get<std::vector<std::uint64_t>>() != ds.test_) {
            throw DataError("dataset manifest seed lists do not match its seed");
        }
        const auto mean = j.at("shape_basis").at("mean").get<std::vector<double>>();
        if (Eigen::Map<const Eigen::VectorXd>(mean.data(), Eigen::Index(mean.size())) != ds.gen_.basis().mean) {
            throw DataError("dataset manifest shape basis does not match the generator");
        }
        return ds;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed dataset manifest: ") + e.what());
    }
}

void FaceDataset::write(const std::filesystem::path& dir) const
{
    write_file_atomic(dir / "manifest.json", manifest_json());
    if (!cfg_.write_images) return;
    for (auto [split, name] : {std::pair{Split::Val, "val"}, std::pair{Split::Test, "test"}}) {
        const auto pairs = self_pairs(split, 64);
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const auto idx = std::to_string(i);
            write_png(dir / name / ("self_" + idx + "_source.png"), sample(pairs[i].source).image);
            write_png(dir / name / ("self_" + idx + "_target.png"), sample(pairs[i].target).image);
        }
        const auto vids = videos(split);
        for (std::size_t v = 0; v < vids.size(); ++v) {
            const auto frames = video(vids[v]);
            for (std::size_t k = 0; k < frames.size(); ++k) {
                write_png(dir / name / ("video_" + std::to_string(v)) / ("frame_" + std::to_string(k) + ".png"),
                          frames[k].image);
            }
        }
    }
    const int shown = std::min<int>(int(train_.size()), 64);
    for (int i = 0; i < shown; ++i) {
        write_png(dir / "train" / ("sample_" + std::to_string(i) + ".png"), sample({train_[i], pose_seed(train_[i], 0)}).image);
    }
}

FaceDataset FaceDataset::load(const std::filesystem::path& dir)
{
    return from_manifest_json(read_file(dir / "manifest.json"));
}

TensorF stack_images(const std::vector<FaceSample>& samples)
{
    TensorF out;
    for (const auto& s : samples) out = concat_batch(out, s.image);
    return out;
}

TensorF stack_masks(const std::vector<FaceSample>& samples)
{
    TensorF out;
    for (const auto& s : samples) out = concat_batch(out, s.mask);
    return out;
}

} // namespace reenact
