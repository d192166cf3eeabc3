#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace reenact {

/// Invalid or unknown configuration; the CLI maps it to the config error category.
class ConfigError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

struct DataConfig
{
    int image_size = 32;
    int identity_dims = 6;
    int expression_dims = 4;
    std::uint64_t basis_seed = 20240601;
    int train_identities = 1500;
    int poses_per_identity = 8;
    int val_identities = 64;
    int test_identities = 64;
    int videos = 4;
    int video_frames = 16;
    double max_yaw_step = 3.0; // degrees per video frame
    bool write_images = true;

    bool operator==(const DataConfig&) const = default;
};

struct DiffAEConfig
{
    int image_size = 32;
    int image_channels = 3;
    int code_dim = 64;
    std::vector<int> channels{16, 32, 64};
    std::vector<int> encoder_channels{16, 32, 64, 64};
    int groups = 8;
    int time_dim = 64;
    int t_max = 1000;
    double beta_min = 1e-4;
    double beta_max = 0.02;
    bool mse = false;

    bool operator==(const DiffAEConfig&) const = default;
};

struct DiffAETrainOptions
{
    int steps = 12000;
    int batch_size = 32;
    double lr = 2e-4;
    double weight_decay = 0.0;
    double grad_clip = 1.0;
    int warmup = 200;
    std::uint64_t seed = 0;

    bool operator==(const DiffAETrainOptions&) const = default;
};

struct OracleConfig
{
    int steps = 4000;
    int batch_size = 32;
    double lr = 1e-3;
    int embed_dim = 32;
    std::vector<int> channels{32, 64, 96, 128};
    std::vector<int> perceptual_channels{16, 32, 64};
    double max_pose_error = 2.0;   // degrees, mean absolute per angle
    double min_identity_gap = 0.3; // same minus cross identity cosine
    double max_nme = 5.0;          // percent of the reference bounding-box diagonal

    bool operator==(const OracleConfig&) const = default;
};

struct LossWeights
{
    double lambda_pix = 20;
    double lambda_per = 20;
    double lambda_id = 20;
    double lambda_st = 20;
    double lambda_bg = 10;
    double lambda_sh = 0.5;
    double lambda_g = 2;
    double lambda_hp = 2;

    bool operator==(const LossWeights&) const = default;
};

struct Ablation
{
    bool no_pretrain = false;
    bool no_batch_split = false;
    bool no_finetune = false;

    bool operator==(const Ablation&) const = default;
    std::string tag() const;
};

struct TrainConfig
{
    double lr_pretrain = 1e-3;
    int batch_pretrain = 32;
    int steps_pretrain = 500;
    double lr_main = 1e-4;
    int batch_main = 4;
    int steps_main = 1500;
    double lr_finetune = 1e-5;
    int batch_finetune = 4;
    int steps_finetune = 500;
    int t_tr = 8;
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    bool stop_grad_xt = true;
    int checkpoint_interval = 250;
    int val_pairs = 16;
    Ablation ablation;

    bool operator==(const TrainConfig&) const = default;
};

struct InferenceConfig
{
    int t_xt = 50;
    int t = 20;

    bool operator==(const InferenceConfig&) const = default;
};

struct EvalConfig
{
    int pairs = 64;
    std::vector<int> t_list{10, 20, 50};
    std::vector<int> t_xt_list{10, 20, 50};
    int grid_items = 8;

    bool operator==(const EvalConfig&) const = default;
};

struct Config
{
    std::uint64_t seed = 0;
    DataConfig data;
    DiffAEConfig diffae;
    DiffAETrainOptions diffae_train;
    OracleConfig oracles;
    LossWeights loss;
    TrainConfig train;
    InferenceConfig inference;
    EvalConfig eval;

    bool operator==(const Config&) const = default;
};

/// Strict JSON parsing: unknown keys and wrong types are ConfigError. Missing keys keep defaults.
Config parse_config(const std::string& json_text);
std::string serialize_config(const Config& cfg);
Config load_config(const std::string& path);

std::string to_json_string(const DiffAEConfig& cfg);
DiffAEConfig diffae_config_from_json_string(const std::string& s);

void validate(const Config& cfg);
void validate(const DiffAEConfig& cfg);
void validate(const LossWeights& w);

/// FNV-1a of a byte string, hex encoded.
std::string fingerprint(const std::string& bytes);

} // namespace reenact
