#pragma once

#include "reenact/config.hpp"
#include "reenact/diffae.hpp"
#include "reenact/facegen.hpp"
#include "reenact/losses.hpp"
#include "reenact/oracles.hpp"
#include "reenact/reenact_encoder.hpp"

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace reenact {

enum class Stage { Pretrain, Main, Finetune };

std::string stage_name(Stage s);
Stage parse_stage(const std::string& name);

/// Source/target images with the target condition maps and face masks.
template <typename Scalar>
struct TrainBatch
{
    Tensor<Scalar> sources, targets, conditions, target_masks;
    std::vector<FacePair> pairs;
    int self_count = 0; // leading self-reenactment pairs; the rest are reconstructions
};

/**
 * Builds a batch of n items. With split the first n/2 are same-identity pairs with
 * different poses and the rest have source == target; otherwise all are self pairs.
 */
template <typename Scalar>
TrainBatch<Scalar> make_batch(const FaceDataset& ds, Split split, std::mt19937_64& rng, int n, bool halves)
{
    TrainBatch<Scalar> b;
    b.self_count = halves ? n / 2 : n;
    for (int i = 0; i < n; ++i) {
        if (i < b.self_count) {
            b.pairs.push_back(ds.random_self_pair(split, rng));
        } else {
            const auto f = ds.random_face(split, rng);
            b.pairs.push_back({f, f});
        }
    }
    std::vector<FaceSample> src, tgt;
    std::vector<LandmarkSet> lms;
    for (const auto& p : b.pairs) {
        src.push_back(ds.sample(p.source));
        tgt.push_back(p.target == p.source ? src.back() : ds.sample(p.target));
        lms.push_back(tgt.back().landmarks);
    }
    b.sources = stack_images(src).template cast<Scalar>();
    b.targets = stack_images(tgt).template cast<Scalar>();
    b.target_masks = stack_masks(tgt).template cast<Scalar>();
    b.conditions = condition_maps<Scalar>(lms, ds.config().image_size);
    return b;
}

/// Throws unless the leading self_count pairs share identity with distinct poses and the rest are identical.
template <typename Scalar>
void check_batch_split(const TrainBatch<Scalar>& b)
{
    for (std::size_t i = 0; i < b.pairs.size(); ++i) {
        const auto& p = b.pairs[i];
        const bool ok = int(i) < b.self_count ? p.source.identity == p.target.identity && p.source.pose != p.target.pose
                                              : p.source == p.target;
        if (!ok) throw std::logic_error("batch split invariant violated at item " + std::to_string(i));
    }
}

/// Deterministic encode/decode through the DDIM with codes z_s (encode) and z_r (decode).
template <typename Scalar>
Tensor<Scalar> synthesize_reenacted(const ReenactEncoder<Scalar>& enc, const DiffAEModel<Scalar>& diffae,
                                    const Tensor<Scalar>& x_source, const Tensor<Scalar>& y_target, int encode_steps,
                                    int decode_steps)
{
    const auto& sched = diffae.schedule();
    const auto den = diffae.tensor_denoiser();
    const auto z_s = encode_semantic(diffae, x_source);
    const auto x_T = ddim_encode(x_source, z_s, StepPlan::even(sched.total_steps(), encode_steps), den, sched);
    const auto z_r = encode_reenact(enc, x_source, y_target);
    return ddim_sample(x_T, z_r, StepPlan::even(sched.total_steps(), decode_steps), den, sched);
}

template <typename Scalar>
Tensor<Scalar> synthesize_reenacted(const ReenactEncoder<Scalar>& enc, const DiffAEModel<Scalar>& diffae,
                                    const Tensor<Scalar>& x_source, const Tensor<Scalar>& y_target, int t_tr)
{
    return synthesize_reenacted(enc, diffae, x_source, y_target, t_tr, t_tr);
}

/// Clamps into the image range.
template <typename Scalar>
Tensor<Scalar> clamp_image(Tensor<Scalar> x)
{
    x.array() = x.array().max(Scalar(-1)).min(Scalar(1));
    return x;
}

/// Graph-recording synthesis used for training; x_T can optionally carry gradients to the denoiser.
template <typename Scalar>
Var<Scalar> synthesize_for_training(const ReenactEncoder<Scalar>& enc, const DiffAEModel<Scalar>& diffae,
                                    const TrainBatch<Scalar>& b, int t_tr, bool stop_grad_xt)
{
    const auto& sched = diffae.schedule();
    const auto plan = StepPlan::even(sched.total_steps(), t_tr);
    const auto z_s = Var<Scalar>::constant(encode_semantic(diffae, b.sources));
    Var<Scalar> x_T;
    if (stop_grad_xt) {
        x_T = Var<Scalar>::constant(ddim_encode(b.sources, z_s.value(), plan, diffae.tensor_denoiser(), sched));
    } else {
        x_T = ddim_encode(Var<Scalar>::constant(b.sources), z_s, plan, diffae.var_denoiser(), sched);
    }
    const auto z_r = enc(Var<Scalar>::constant(b.sources), Var<Scalar>::constant(b.conditions));
    return ddim_sample(x_T, z_r, plan, diffae.var_denoiser(), sched);
}

/// Sets which parameters may change in a stage; the semantic encoder and oracles stay frozen.
template <typename Scalar>
void configure_stage(Stage s, ReenactEncoder<Scalar>& enc, DiffAEModel<Scalar>& diffae)
{
    set_trainable(diffae.encoder_parameters(), false);
    set_trainable(diffae.denoiser_parameters(), s == Stage::Finetune);
    set_trainable(enc.parameters(), true);
}

template <typename Scalar>
ParameterList<Scalar> stage_parameters(Stage s, ReenactEncoder<Scalar>& enc, DiffAEModel<Scalar>& diffae)
{
    auto l = enc.parameters();
    if (s == Stage::Finetune) {
        auto d = diffae.denoiser_parameters();
        l.insert(l.end(), d.begin(), d.end());
    }
    return l;
}

/// Code loss mean |E_r(x_s, y_t) - E(x_t)| with one optimiser step on E_r.
template <typename Scalar>
double pretrain_step(ReenactEncoder<Scalar>& enc, const DiffAEModel<Scalar>& diffae, const TrainBatch<Scalar>& b,
                     AdamW<Scalar>& adam, double grad_clip)
{
    const auto z_t = Var<Scalar>::constant(encode_semantic(diffae, b.targets));
    adam.zero_grad();
    const auto loss = l1_loss(enc(Var<Scalar>::constant(b.sources), Var<Scalar>::constant(b.conditions)), z_t);
    const double v = double(loss.item());
    if (!std::isfinite(v)) throw NumericError("pretrain_step: non-finite code loss");
    loss.backward();
    if (grad_clip > 0) adam.clip_grad_norm(grad_clip);
    adam.step();
    return v;
}

/// Evaluates the objective through T_tr-step synthesis without updating anything.
template <typename Scalar>
LossResult<Scalar> reenactment_loss(const ReenactEncoder<Scalar>& enc, const DiffAEModel<Scalar>& diffae,
                                    const TrainBatch<Scalar>& b, const OracleExtractors<Scalar>& ext,
                                    const LossWeights& w, int t_tr, bool stop_grad_xt)
{
    const auto x_r = synthesize_for_training(enc, diffae, b, t_tr, stop_grad_xt);
    return total_loss(b.targets, x_r, b.target_masks, ext, w);
}

/**
 * One optimisation step of the main or fine-tuning stage over the parameters the
 * optimiser was built with. Non-finite gradients throw.
 */
template <typename Scalar>
LossReport reenactment_step(ReenactEncoder<Scalar>& enc, DiffAEModel<Scalar>& diffae, const TrainBatch<Scalar>& b,
                            const OracleExtractors<Scalar>& ext, const LossWeights& w, AdamW<Scalar>& adam, int t_tr,
                            bool stop_grad_xt, double grad_clip)
{
    adam.zero_grad();
    const auto r = reenactment_loss(enc, diffae, b, ext, w, t_tr, stop_grad_xt);
    r.total.backward();
    double sq = 0;
    for (const auto& p : adam.params())
        if (p.param->has_grad()) sq += double(p.param->grad().array().square().sum());
    if (!std::isfinite(sq)) throw NumericError("reenactment_step: non-finite gradient");
    if (grad_clip > 0) adam.clip_grad_norm(grad_clip);
    adam.step();
    return r.report;
}

template <typename Scalar>
LossReport main_step(ReenactEncoder<Scalar>& enc, DiffAEModel<Scalar>& diffae, const TrainBatch<Scalar>& b,
                     const OracleExtractors<Scalar>& ext, const LossWeights& w, AdamW<Scalar>& adam, int t_tr,
                     double grad_clip = 1.0)
{
    configure_stage(Stage::Main, enc, diffae);
    return reenactment_step(enc, diffae, b, ext, w, adam, t_tr, true, grad_clip);
}

template <typename Scalar>
LossReport finetune_step(ReenactEncoder<Scalar>& enc, DiffAEModel<Scalar>& diffae, const TrainBatch<Scalar>& b,
                         const OracleExtractors<Scalar>& ext, const LossWeights& w, AdamW<Scalar>& adam, int t_tr,
                         bool stop_grad_xt = true, double grad_clip = 1.0)
{
    configure_stage(Stage::Finetune, enc, diffae);
    return reenactment_step(enc, diffae, b, ext, w, adam, t_tr, stop_grad_xt, grad_clip);
}

/// DiffAE model plus reenactment encoder; the unit that is checkpointed and evaluated.
struct ReenactModel
{
    DiffAEModel<float> diffae;
    ReenactEncoder<float> encoder;

    void save(Archive& a)
    {
        diffae.save(a, "diffae/");
        encoder.save(a, "reenact/");
    }
    static ReenactModel load(const Archive& a)
    {
        ReenactModel m;
        m.diffae = DiffAEModel<float>::load(a, "diffae/");
        m.encoder = init_from_diffae(m.diffae);
        m.encoder.load(a, "reenact/");
        return m;
    }
};

/// Reenacts sources toward condition maps with separate encode/decode step counts, clamped.
TensorF reenact(const ReenactModel& m, const TensorF& sources, const TensorF& conditions, int t_xt, int t);

struct StagePaths
{
    std::filesystem::path root; // <output>/<ablation tag>
    std::filesystem::path checkpoint(Stage s) const { return root / (stage_name(s) + ".ckpt"); }
    std::filesystem::path log(Stage s) const { return root / (stage_name(s) + "_log.jsonl"); }
};

/// Shared inputs of every training stage.
struct TrainContext
{
    Config config;
    const FaceDataset* dataset = nullptr;
    std::filesystem::path diffae_checkpoint;
    std::filesystem::path oracle_checkpoint;
    std::filesystem::path output; // per-run directory; stages write under output/<tag>
    std::function<void(const std::string&)> progress;
};

/// Validation snapshot: oracle APD/AED/NME and pixel L1 on the fixed validation pairs.
struct ValidationSnapshot
{
    double apd = 0, aed = 0, nme = 0, l1 = 0;
    nlohmann::json to_json() const { return {{"apd", apd}, {"aed", aed}, {"nme", nme}, {"l1", l1}}; }
};

ValidationSnapshot validate_model(const ReenactModel& m, const OracleExtractors<float>& ext, const FaceDataset& ds,
                                  int pairs, const InferenceConfig& inf);

/// Trains the DiffAE on training renders and writes a checkpoint (resumes a partial one).
std::filesystem::path run_diffae_stage(const TrainContext& ctx);
/// Trains the stand-in extractors and writes a checkpoint; throws if ceilings are missed.
std::filesystem::path run_oracle_stage(const TrainContext& ctx);

/**
 * Runs one reenactment stage, resuming from its own partial checkpoint when present
 * and otherwise from the previous stage. Returns the final checkpoint path. Throws
 * std::logic_error when an upstream stage is missing.
 */
std::filesystem::path run_stage(const TrainContext& ctx, Stage stage);

/// All reenactment stages in order, honouring the ablation flags. Returns the final checkpoint.
std::filesystem::path run_reenactment(const TrainContext& ctx);

/// Model from a stage checkpoint.
ReenactModel load_stage_model(const std::filesystem::path& checkpoint);

} // namespace reenact
