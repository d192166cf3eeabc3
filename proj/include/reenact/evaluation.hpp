#pragma once

#include "reenact/facegen.hpp"
#include "reenact/metrics.hpp"
#include "reenact/oracles.hpp"
#include "reenact/trainer.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace reenact {

/// Per-pair evaluation values. For cross-subject pairs the image metrics and csim use the source as reference.
struct EvalRecord
{
    std::string kind; // self, cross or video
    int index = 0;
    double psnr = 0, ssim = 0, l1 = 0, csim = 0, perceptual_proxy = 0, nme = 0, apd = 0, aed = 0;
};

struct VideoRecord
{
    int index = 0;
    TemporalId temporal;
};

struct EvalTable
{
    std::vector<EvalRecord> records;
    std::vector<VideoRecord> videos;

    /// Arithmetic mean of the records of one kind (index = count).
    EvalRecord mean(const std::string& kind) const;
};

/// Column order of the report table.
const std::vector<std::string>& eval_columns();

/// (sources, conditions) -> generated images in [-1, 1].
using Generator = std::function<TensorF(const TensorF&, const TensorF&)>;

/// Inference path of a trained model.
Generator model_generator(const ReenactModel& m, const InferenceConfig& inf);
/// Returns the sources unchanged (the "no reenactment" baseline).
Generator source_generator();

/// Condition for driving `source` with the pose and expression of `target` while keeping the source identity.
LandmarkSet cross_subject_landmarks(const FaceGenerator& gen, const FaceSample& source, const FaceSample& target);

struct EvalRequest
{
    Split split = Split::Test;
    int self_pairs = 64;
    int cross_pairs = 0;
    bool videos = false;
    int batch = 16;
};

EvalTable run_eval(const Generator& g, const OracleExtractors<float>& ext, const FaceDataset& ds, const EvalRequest& req);

/// Metrics of one batch of generated images against references (pose/landmark targets given separately).
std::vector<EvalRecord> score_batch(const std::string& kind, int first_index, const TensorF& generated,
                                    const TensorF& reference, const std::vector<LandmarkSet>& target_landmarks,
                                    const std::vector<FaceParams>& target_params, const OracleExtractors<float>& ext);

void write_eval_table(const EvalTable& t, const std::filesystem::path& tsv, const std::filesystem::path& jsonl);

struct StepAblationRow
{
    int t = 0;
    int t_xt = 0; // 0 marks the random x_T row
    double psnr = 0, ssim = 0, csim = 0, perceptual_proxy = 0, seconds = 0;
};

/**
 * Self-reenactment quality over a grid of decode steps x encode steps, plus one row
 * decoding a standard-normal x_T with `random_t` steps. Seconds are wall-clock per pair.
 */
std::vector<StepAblationRow> ablate_steps(const ReenactModel& m, const OracleExtractors<float>& ext,
                                          const FaceDataset& ds, int pairs, const std::vector<int>& t_list,
                                          const std::vector<int>& t_xt_list, int random_t, std::uint64_t seed);

void write_step_ablation(const std::vector<StepAblationRow>& rows, const std::filesystem::path& tsv);

/// Source | target | generated rows as a PNG grid.
void write_triplet_grid(const TensorF& sources, const TensorF& targets, const TensorF& generated, int items,
                        const std::filesystem::path& path);

} // namespace reenact
