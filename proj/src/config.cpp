#include "reenact/config.hpp"

#include "reenact/io.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <set>

namespace reenact {

using nlohmann::json;

namespace {

/// Reads known keys from one JSON object and rejects anything left over.
class Section
{
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name))
    {
        if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
    }

    template <typename T>
    void get(const char* key, T& out)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!it->is_boolean()) throw ConfigError("");
            } else if constexpr (std::is_integral_v<T>) {
                if (!it->is_number_integer()) throw ConfigError("");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!it->is_number()) throw ConfigError("");
            }
            out = it->get<T>();
        } catch (const std::exception&) {
            throw ConfigError("config key '" + name_ + "." + key + "' has the wrong type");
        }
    }

    json sub(const char* key)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? json::object() : *it;
    }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + name_ + "." + it.key() + "'");
        }
    }

private:
    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

json dump(const DataConfig& c)
{
    return {{"image_size", c.image_size},         {"identity_dims", c.identity_dims},
            {"expression_dims", c.expression_dims}, {"basis_seed", c.basis_seed},
            {"train_identities", c.train_identities}, {"poses_per_identity", c.poses_per_identity},
            {"val_identities", c.val_identities},   {"test_identities", c.test_identities},
            {"videos", c.videos},                   {"video_frames", c.video_frames},
            {"max_yaw_step", c.max_yaw_step},       {"write_images", c.write_images}};
}

void read(const json& j, DataConfig& c)
{
    Section s(j, "data");
    s.get("image_size", c.image_size);
    s.get("identity_dims", c.identity_dims);
    s.get("expression_dims", c.expression_dims);
    s.get("basis_seed", c.basis_seed);
    s.get("train_identities", c.train_identities);
    s.get("poses_per_identity", c.poses_per_identity);
    s.get("val_identities", c.val_identities);
    s.get("test_identities", c.test_identities);
    s.get("videos", c.videos);
    s.get("video_frames", c.video_frames);
    s.get("max_yaw_step", c.max_yaw_step);
    s.get("write_images", c.write_images);
    s.finish();
}

json dump(const DiffAEConfig& c)
{
    return {{"image_size", c.image_size}, {"image_channels", c.image_channels}, {"code_dim", c.code_dim},
            {"channels", c.channels},     {"encoder_channels", c.encoder_channels}, {"groups", c.groups},
            {"time_dim", c.time_dim},     {"t_max", c.t_max},                     {"beta_min", c.beta_min},
            {"beta_max", c.beta_max},     {"mse", c.mse}};
}

void read(const json& j, DiffAEConfig& c)
{
    Section s(j, "diffae");
    s.get("image_size", c.image_size);
    s.get("image_channels", c.image_channels);
    s.get("code_dim", c.code_dim);
    s.get("channels", c.channels);
    s.get("encoder_channels", c.encoder_channels);
    s.get("groups", c.groups);
    s.get("time_dim", c.time_dim);
    s.get("t_max", c.t_max);
    s.get("beta_min", c.beta_min);
    s.get("beta_max", c.beta_max);
    s.get("mse", c.mse);
    s.finish();
}

json dump(const DiffAETrainOptions& c)
{
    return {{"steps", c.steps},         {"batch_size", c.batch_size}, {"lr", c.lr}, {"weight_decay", c.weight_decay},
            {"grad_clip", c.grad_clip}, {"warmup", c.warmup},         {"seed", c.seed}};
}

void read(const json& j, DiffAETrainOptions& c)
{
    Section s(j, "diffae_train");
    s.get("steps", c.steps);
    s.get("batch_size", c.batch_size);
    s.get("lr", c.lr);
    s.get("weight_decay", c.weight_decay);
    s.get("grad_clip", c.grad_clip);
    s.get("warmup", c.warmup);
    s.get("seed", c.seed);
    s.finish();
}

json dump(const OracleConfig& c)
{
    return {{"steps", c.steps},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"embed_dim", c.embed_dim},
            {"channels", c.channels},
            {"perceptual_channels", c.perceptual_channels},
            {"max_pose_error", c.max_pose_error},
            {"min_identity_gap", c.min_identity_gap},
            {"max_nme", c.max_nme}};
}

void read(const json& j, OracleConfig& c)
{
    Section s(j, "oracles");
    s.get("steps", c.steps);
    s.get("batch_size", c.batch_size);
    s.get("lr", c.lr);
    s.get("embed_dim", c.embed_dim);
    s.get("channels", c.channels);
    s.get("perceptual_channels", c.perceptual_channels);
    s.get("max_pose_error", c.max_pose_error);
    s.get("min_identity_gap", c.min_identity_gap);
    s.get("max_nme", c.max_nme);
    s.finish();
}

json dump(const LossWeights& c)
{
    return {{"lambda_pix", c.lambda_pix}, {"lambda_per", c.lambda_per}, {"lambda_id", c.lambda_id},
            {"lambda_st", c.lambda_st},   {"lambda_bg", c.lambda_bg},   {"lambda_sh", c.lambda_sh},
            {"lambda_g", c.lambda_g},     {"lambda_hp", c.lambda_hp}};
}

void read(const json& j, LossWeights& c)
{
    Section s(j, "loss");
    s.get("lambda_pix", c.lambda_pix);
    s.get("lambda_per", c.lambda_per);
    s.get("lambda_id", c.lambda_id);
    s.get("lambda_st", c.lambda_st);
    s.get("lambda_bg", c.lambda_bg);
    s.get("lambda_sh", c.lambda_sh);
    s.get("lambda_g", c.lambda_g);
    s.get("lambda_hp", c.lambda_hp);
    s.finish();
}

json dump(const TrainConfig& c)
{
    return {{"lr_pretrain", c.lr_pretrain},
            {"batch_pretrain", c.batch_pretrain},
            {"steps_pretrain", c.steps_pretrain},
            {"lr_main", c.lr_main},
            {"batch_main", c.batch_main},
            {"steps_main", c.steps_main},
            {"lr_finetune", c.lr_finetune},
            {"batch_finetune", c.batch_finetune},
            {"steps_finetune", c.steps_finetune},
            {"t_tr", c.t_tr},
            {"weight_decay", c.weight_decay},
            {"grad_clip", c.grad_clip},
            {"stop_grad_xt", c.stop_grad_xt},
            {"checkpoint_interval", c.checkpoint_interval},
            {"val_pairs", c.val_pairs},
            {"ablation",
             {{"no_pretrain", c.ablation.no_pretrain},
              {"no_batch_split", c.ablation.no_batch_split},
              {"no_finetune", c.ablation.no_finetune}}}};
}

void read(const json& j, TrainConfig& c)
{
    Section s(j, "train");
    s.get("lr_pretrain", c.lr_pretrain);
    s.get("batch_pretrain", c.batch_pretrain);
    s.get("steps_pretrain", c.steps_pretrain);
    s.get("lr_main", c.lr_main);
    s.get("batch_main", c.batch_main);
    s.get("steps_main", c.steps_main);
    s.get("lr_finetune", c.lr_finetune);
    s.get("batch_finetune", c.batch_finetune);
    s.get("steps_finetune", c.steps_finetune);
    s.get("t_tr", c.t_tr);
    s.get("weight_decay", c.weight_decay);
    s.get("grad_clip", c.grad_clip);
    s.get("stop_grad_xt", c.stop_grad_xt);
    s.get("checkpoint_interval", c.checkpoint_interval);
    s.get("val_pairs", c.val_pairs);
    const json ab = s.sub("ablation");
    Section a(ab, "train.ablation");
    a.get("no_pretrain", c.ablation.no_pretrain);
    a.get("no_batch_split", c.ablation.no_batch_split);
    a.get("no_finetune", c.ablation.no_finetune);
    a.finish();
    s.finish();
}

json dump(const InferenceConfig& c) { return {{"t_xt", c.t_xt}, {"t", c.t}}; }

void read(const json& j, InferenceConfig& c)
{
    Section s(j, "inference");
    s.get("t_xt", c.t_xt);
    s.get("t", c.t);
    s.finish();
}

json dump(const EvalConfig& c)
{
    return {{"pairs", c.pairs}, {"t_list", c.t_list}, {"t_xt_list", c.t_xt_list}, {"grid_items", c.grid_items}};
}

void read(const json& j, EvalConfig& c)
{
    Section s(j, "eval");
    s.get("pairs", c.pairs);
    s.get("t_list", c.t_list);
    s.get("t_xt_list", c.t_xt_list);
    s.get("grid_items", c.grid_items);
    s.finish();
}

void require(bool ok, const std::string& what)
{
    if (!ok) throw ConfigError("invalid config: " + what);
}

} // namespace

std::string Ablation::tag() const
{
    std::string t;
    if (no_pretrain) t += "wo_pretrain";
    if (no_batch_split) t += std::string(t.empty() ? "" : "+") + "wo_batch_split";
    if (no_finetune) t += std::string(t.empty() ? "" : "+") + "wo_finetune";
    return t.empty() ? "full" : t;
}

Config parse_config(const std::string& json_text)
{
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    Config c;
    Section s(j, "<root>");
    s.get("seed", c.seed);
    read(s.sub("data"), c.data);
    read(s.sub("diffae"), c.diffae);
    read(s.sub("diffae_train"), c.diffae_train);
    read(s.sub("oracles"), c.oracles);
    read(s.sub("loss"), c.loss);
    read(s.sub("train"), c.train);
    read(s.sub("inference"), c.inference);
    read(s.sub("eval"), c.eval);
    s.finish();
    validate(c);
    return c;
}

std::string serialize_config(const Config& c)
{
    json j = {{"seed", c.seed},
              {"data", dump(c.data)},
              {"diffae", dump(c.diffae)},
              {"diffae_train", dump(c.diffae_train)},
              {"oracles", dump(c.oracles)},
              {"loss", dump(c.loss)},
              {"train", dump(c.train)},
              {"inference", dump(c.inference)},
              {"eval", dump(c.eval)}};
    return j.dump(2) + "\n";
}

Config load_config(const std::string& path)
{
    std::string text;
    try {
        text = read_file(path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    return parse_config(text);
}

std::string to_json_string(const DiffAEConfig& cfg) { return dump(cfg).dump(); }

DiffAEConfig diffae_config_from_json_string(const std::string& s)
{
    DiffAEConfig c;
    read(json::parse(s), c);
    validate(c);
    return c;
}

void validate(const DiffAEConfig& c)
{
    require(c.image_size >= 8 && c.image_channels >= 1 && c.code_dim >= 1, "diffae sizes");
    require(!c.channels.empty() && !c.encoder_channels.empty(), "diffae channel lists");
    require(c.image_size % (1 << (c.channels.size() - 1)) == 0, "diffae image size vs UNet depth");
    require(c.image_size % (1 << (c.encoder_channels.size() - 1)) == 0, "diffae image size vs encoder depth");
    for (int ch : c.channels) require(ch > 0 && ch % c.groups == 0, "diffae channels divisible by groups");
    for (int ch : c.encoder_channels) require(ch > 0 && ch % c.groups == 0, "encoder channels divisible by groups");
    require(c.time_dim >= 2 && c.time_dim % 2 == 0, "diffae time_dim even");
    require(c.t_max >= 1 && c.beta_min > 0 && c.beta_min <= c.beta_max && c.beta_max < 1, "diffusion schedule");
}

void validate(const LossWeights& w)
{
    for (double v : {w.lambda_pix, w.lambda_per, w.lambda_id, w.lambda_st, w.lambda_bg, w.lambda_sh, w.lambda_g,
                     w.lambda_hp}) {
        require(std::isfinite(v) && v >= 0, "loss weights must be non-negative");
    }
}

void validate(const Config& c)
{
    validate(c.diffae);
    validate(c.loss);
    require(c.data.image_size == c.diffae.image_size, "data.image_size must equal diffae.image_size");
    require(c.data.identity_dims >= 1 && c.data.expression_dims >= 1, "basis dims");
    require(c.data.train_identities >= 2 && c.data.poses_per_identity >= 2, "training split size");
    require(c.data.val_identities >= 2 && c.data.test_identities >= 2, "held-out split sizes");
    require(c.data.video_frames >= 2 && c.data.max_yaw_step > 0, "video settings");
    require(c.diffae_train.steps >= 0 && c.diffae_train.batch_size >= 1 && c.diffae_train.lr > 0, "diffae_train");
    require(c.oracles.steps >= 0 && c.oracles.batch_size >= 2 && c.oracles.lr > 0, "oracles");
    const auto& t = c.train;
    require(t.lr_pretrain > 0 && t.lr_main > 0 && t.lr_finetune > 0, "learning rates");
    require(t.batch_pretrain >= 1 && t.batch_finetune >= 1, "batch sizes");
    require(t.batch_main >= 2 && t.batch_main % 2 == 0, "batch_main must be even (split into halves)");
    require(t.batch_finetune % 2 == 0, "batch_finetune must be even");
    require(t.steps_pretrain >= 0 && t.steps_main >= 0 && t.steps_finetune >= 0, "step counts");
    require(t.t_tr >= 1 && t.t_tr <= c.diffae.t_max, "t_tr");
    require(t.checkpoint_interval >= 1 && t.val_pairs >= 1, "checkpoint interval / val pairs");
    require(c.inference.t >= 1 && c.inference.t <= c.diffae.t_max, "inference.t");
    require(c.inference.t_xt >= 1 && c.inference.t_xt <= c.diffae.t_max, "inference.t_xt");
    require(c.eval.pairs >= 1, "eval.pairs");
    for (int v : c.eval.t_list) require(v >= 1 && v <= c.diffae.t_max, "eval.t_list");
    for (int v : c.eval.t_xt_list) require(v >= 1 && v <= c.diffae.t_max, "eval.t_xt_list");
}

std::string fingerprint(const std::string& bytes)
{
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace reenact
