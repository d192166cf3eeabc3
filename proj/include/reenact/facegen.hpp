#pragma once

#include "reenact/config.hpp"
#include "reenact/landmarks.hpp"
#include "reenact/tensor.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace reenact {

inline constexpr int kGeneratorVersion = 1;

/// Parameter bounds used by sample_params.
struct ParamBounds
{
    double identity = 2.0;
    double expression = 1.5;
    Eigen::Vector3d pose{30.0, 20.0, 15.0}; // yaw, pitch, roll in degrees
    double gaze = 0.45;                     // radians, both angles
};

struct Appearance
{
    Eigen::Vector3d skin{0.8, 0.6, 0.5};
    Eigen::Vector3d hair{0.2, 0.15, 0.1};
    Eigen::Vector3d iris{0.2, 0.15, 0.1};
    Eigen::Vector3d background_top{0.5, 0.5, 0.5};
    Eigen::Vector3d background_bottom{0.3, 0.3, 0.3};
    double light = 0.0; // horizontal light direction in [-1, 1]

    bool operator==(const Appearance&) const = default;
};

struct FaceParams
{
    Eigen::VectorXd identity;
    Eigen::Vector3d pose = Eigen::Vector3d::Zero(); // yaw, pitch, roll in degrees
    Eigen::VectorXd expression;
    Eigen::Vector2d gaze = Eigen::Vector2d::Zero(); // alpha (vertical), beta (horizontal) in radians
    Appearance appearance;

    bool operator==(const FaceParams& o) const
    {
        return identity == o.identity && pose == o.pose && expression == o.expression && gaze == o.gaze &&
               appearance == o.appearance;
    }
};

struct FaceSample
{
    TensorF image; // (1, 3, H, W) in [-1, 1], quantised to 8-bit levels
    TensorF mask;  // (1, 1, H, W), 1 inside the face
    LandmarkSet landmarks;
    FaceParams params;
};

/// Mixes integers into a 64-bit seed (splitmix64 finaliser).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

class FaceGenerator
{
public:
    FaceGenerator(int image_size, int identity_dims, int expression_dims, std::uint64_t basis_seed,
                  ParamBounds bounds = {});
    explicit FaceGenerator(const DataConfig& cfg);

    const ShapeBasis& basis() const { return basis_; }
    const ParamBounds& bounds() const { return bounds_; }
    int image_size() const { return size_; }
    std::uint64_t basis_seed() const { return basis_seed_; }

    /// Identity and appearance come from identity_seed; pose, expression and gaze from pose_seed.
    FaceParams sample_params(std::uint64_t identity_seed, std::uint64_t pose_seed) const;
    FaceParams sample_params(std::uint64_t seed) const { return sample_params(seed, seed); }

    /// Basis coefficients of the landmark model for these parameters.
    ShapeCoefficients coefficients(const FaceParams& p) const;
    /// Pose in degrees recovered from pose coefficients.
    Eigen::Vector3d pose_from_coefficients(const Eigen::VectorXd& c) const;

    LandmarkSet landmarks(const FaceParams& p) const;
    FaceSample render(const FaceParams& p) const;

private:
    int size_;
    std::uint64_t basis_seed_;
    ParamBounds bounds_;
    ShapeBasis basis_;
};

struct VideoOptions
{
    double max_yaw_step = 3.0; // degrees per frame
    std::uint64_t motion_seed = 0;
};

/// Fixed identity; pose, expression and gaze follow smooth bounded sinusoids starting at `start`.
std::vector<FaceParams> video_params(const FaceGenerator& gen, const FaceParams& start, int frames,
                                     const VideoOptions& opt);
std::vector<FaceSample> make_video(const FaceGenerator& gen, const FaceParams& start, int frames,
                                   const VideoOptions& opt);

struct FaceRef
{
    std::uint64_t identity = 0;
    std::uint64_t pose = 0;
    bool operator==(const FaceRef&) const = default;
};

struct FacePair
{
    FaceRef source;
    FaceRef target;
};

struct VideoRef
{
    std::uint64_t identity = 0;
    std::uint64_t pose = 0;
    std::uint64_t motion = 0;
};

enum class Split { Train, Val, Test };

/**
 * Seed lists for the synthetic splits. Everything is derived from (config, seed),
 * so the manifest regenerates bit-identical samples.
 */
class FaceDataset
{
public:
    FaceDataset(const DataConfig& cfg, std::uint64_t seed);

    const DataConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }
    const FaceGenerator& generator() const { return gen_; }
    const std::vector<std::uint64_t>& identities(Split s) const;

    std::uint64_t pose_seed(std::uint64_t identity, int index) const;
    FaceRef random_face(Split s, std::mt19937_64& rng) const;
    /// Same identity, two distinct pose indices.
    FacePair random_self_pair(Split s, std::mt19937_64& rng) const;
    /// Two distinct identities.
    FacePair random_cross_pair(Split s, std::mt19937_64& rng) const;

    /// Fixed held-out lists (first `count` entries are stable as count grows).
    std::vector<FacePair> self_pairs(Split s, int count) const;
    std::vector<FacePair> cross_pairs(Split s, int count) const;
    std::vector<VideoRef> videos(Split s) const;

    FaceParams params(const FaceRef& r) const { return gen_.sample_params(r.identity, r.pose); }
    FaceSample sample(const FaceRef& r) const { return gen_.render(params(r)); }
    std::vector<FaceSample> video(const VideoRef& v) const;

    std::string manifest_json() const;
    static FaceDataset from_manifest_json(const std::string& text);
    /// Writes manifest.json and, when enabled, PNGs of held-out pairs, videos and a training sample.
    void write(const std::filesystem::path& dir) const;
    static FaceDataset load(const std::filesystem::path& dir);

private:
    DataConfig cfg_;
    std::uint64_t seed_;
    FaceGenerator gen_;
    std::vector<std::uint64_t> train_, val_, test_;
};

/// Stacks sample images (and masks) into batches.
TensorF stack_images(const std::vector<FaceSample>& samples);
TensorF stack_masks(const std::vector<FaceSample>& samples);

} // namespace reenact
