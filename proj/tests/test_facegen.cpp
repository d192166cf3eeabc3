#include "doctest.h"
#include "reenact/facegen.hpp"
#include "reenact/io.hpp"

#include <filesystem>
#include <set>

using namespace reenact;
namespace fs = std::filesystem;

namespace {

DataConfig small_config()
{
    DataConfig c;
    c.train_identities = 20;
    c.poses_per_identity = 4;
    c.val_identities = 6;
    c.test_identities = 6;
    c.videos = 2;
    c.video_frames = 5;
    return c;
}

} // namespace

TEST_CASE("sample_params is seeded and bounded")
{
    const FaceGenerator g(small_config());
    CHECK(g.sample_params(3) == g.sample_params(3));
    CHECK(g.sample_params(3).identity != g.sample_params(4).identity);
    CHECK(g.sample_params(3, 10).identity == g.sample_params(3, 11).identity);
    CHECK(g.sample_params(3, 10).appearance == g.sample_params(3, 11).appearance);
    CHECK(g.sample_params(3, 10).pose != g.sample_params(3, 11).pose);

    const auto& b = g.bounds();
    for (std::uint64_t s = 0; s < 10000; ++s) {
        const auto p = g.sample_params(s);
        REQUIRE(p.identity.cwiseAbs().maxCoeff() <= b.identity);
        REQUIRE(p.expression.cwiseAbs().maxCoeff() <= b.expression);
        for (int k = 0; k < 3; ++k) REQUIRE(std::abs(p.pose[k]) <= b.pose[k]);
        REQUIRE(p.pose.cwiseAbs().maxCoeff() <= 45.0);
        REQUIRE(p.gaze.cwiseAbs().maxCoeff() <= b.gaze);
        REQUIRE(p.identity.cwiseAbs().maxCoeff() <= 3.0);
    }
}

TEST_CASE("render: neutral parameters give the mean shape and samples are self-consistent")
{
    const FaceGenerator g(small_config());
    FaceParams p = g.sample_params(1);
    p.identity.setZero();
    p.expression.setZero();
    p.pose.setZero();
    const auto s = g.render(p);
    CHECK(s.landmarks.flat() == g.basis().mean);
    CHECK(s.image.shape() == Shape{1, 3, 32, 32});
    CHECK(s.image.array().abs().maxCoeff() <= 1.0f);

    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto q = g.sample_params(seed);
        const auto r = g.render(q);
        REQUIRE(r.landmarks.points == g.landmarks(q).points);
        const auto c = project_coefficients(g.basis(), r.landmarks);
        REQUIRE((c.identity - g.coefficients(q).identity).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE((g.pose_from_coefficients(c.pose) - q.pose).cwiseAbs().maxCoeff() < 1e-9);
        for (int e = 0; e < 2; ++e) {
            const auto& grp = e == 0 ? groups::left_eye : groups::right_eye;
            REQUIRE((r.landmarks.gaze_points[e] - gaze_point(r.landmarks.group(grp), q.gaze[0], q.gaze[1])).norm() == 0.0);
        }
        // eye centres lie on the face mask
        for (int k : {16, 17, 19, 20, 24}) {
            const int x = int(r.landmarks.points(0, k) * 32), y = int(r.landmarks.points(1, k) * 32);
            REQUIRE(r.mask.at(0, 0, y, x) == 1.0f);
        }
        REQUIRE(r.mask.at(0, 0, 0, 0) == 0.0f);
    }
}

TEST_CASE("render is deterministic and injective on sampled parameters")
{
    const FaceGenerator g(small_config());
    std::set<std::string> seen;
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const auto img = g.render(g.sample_params(s)).image;
        seen.insert(std::string(reinterpret_cast<const char*>(img.data()), sizeof(float) * img.size()));
    }
    CHECK(seen.size() == 1000);
    const auto a = g.render(g.sample_params(7)).image, b = g.render(g.sample_params(7)).image;
    CHECK((a.array() == b.array()).all());
}

TEST_CASE("pupil is drawn at the gaze point")
{
    const FaceGenerator g(128, 6, 4, 99);
    FaceParams p = g.sample_params(12);
    p.pose.setZero();
    p.expression.setZero();
    p.gaze = {0.0, 0.25};
    p.appearance.iris = {0.0, 0.0, 0.0};
    const auto s = g.render(p);
    const auto expected = gaze_point(s.landmarks.group(groups::left_eye), 0.0, 0.25) * 128.0;
    // centroid of near-black pixels around the left eye
    double sx = 0, sy = 0, n = 0;
    for (int y = 0; y < 128; ++y) {
        for (int x = 0; x < 128; ++x) {
            if ((Eigen::Vector2d(x + 0.5, y + 0.5) - expected).norm() > 8) continue;
            const float v = s.image.at(0, 0, y, x) + s.image.at(0, 1, y, x) + s.image.at(0, 2, y, x);
            if (v < -2.7f) {
                sx += x + 0.5;
                sy += y + 0.5;
                n += 1;
            }
        }
    }
    REQUIRE(n > 0);
    CHECK(std::abs(sx / n - expected.x()) < 1.0);
    CHECK(std::abs(sy / n - expected.y()) < 1.0);
}

TEST_CASE("pose changes leave the identity component untouched")
{
    const FaceGenerator g(small_config());
    const auto base = g.sample_params(5, 1);
    for (std::uint64_t k = 2; k < 20; ++k) {
        const auto other = g.sample_params(5, k);
        const auto a = project_coefficients(g.basis(), g.landmarks(base));
        const auto b = project_coefficients(g.basis(), g.landmarks(other));
        CHECK((a.identity - b.identity).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("make_video keeps identity, bounds motion and starts at the given parameters")
{
    const FaceGenerator g(small_config());
    const auto start = g.sample_params(9);
    const VideoOptions opt{2.5, 4};
    const auto frames = make_video(g, start, 24, opt);
    REQUIRE(frames.size() == 24);
    CHECK((frames[0].image.array() == g.render(start).image.array()).all());
    for (std::size_t k = 1; k < frames.size(); ++k) {
        CHECK(frames[k].params.identity == start.identity);
        CHECK(frames[k].params.appearance == start.appearance);
        CHECK(std::abs(frames[k].params.pose[0] - frames[k - 1].params.pose[0]) <= 2.5);
    }
    CHECK(frames[10].params.pose != start.pose);
    CHECK_THROWS(make_video(g, start, 1, opt));
}

TEST_CASE("dataset splits, pairs and manifest regeneration")
{
    const auto cfg = small_config();
    const FaceDataset ds(cfg, 17);
    CHECK(ds.identities(Split::Train).size() == 20);
    CHECK(ds.identities(Split::Val).size() == 6);
    for (const auto& p : ds.self_pairs(Split::Val, 10)) {
        CHECK(p.source.identity == p.target.identity);
        CHECK(p.source.pose != p.target.pose);
    }
    for (const auto& p : ds.cross_pairs(Split::Test, 10)) CHECK(p.source.identity != p.target.identity);
    const auto first = ds.self_pairs(Split::Val, 3), more = ds.self_pairs(Split::Val, 8);
    CHECK(first[2].target == more[2].target);

    const auto again = FaceDataset::from_manifest_json(ds.manifest_json());
    CHECK(again.manifest_json() == ds.manifest_json());
    CHECK(FaceDataset(cfg, 17).manifest_json() == ds.manifest_json());
    CHECK(FaceDataset(cfg, 18).manifest_json() != ds.manifest_json());

    const fs::path a = fs::temp_directory_path() / "reenact_ds_a", b = fs::temp_directory_path() / "reenact_ds_b";
    fs::remove_all(a);
    fs::remove_all(b);
    ds.write(a);
    FaceDataset::load(a).write(b);
    int files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        ++files;
        REQUIRE(read_file(e.path()) == read_file(b / fs::relative(e.path(), a)));
    }
    CHECK(files > 100);
    const auto png = read_png(a / "val" / "self_0_source.png");
    CHECK((png.array() == ds.sample(ds.self_pairs(Split::Val, 1)[0].source).image.array()).all());
    CHECK_THROWS_AS(FaceDataset::from_manifest_json("{}"), DataError);
}
