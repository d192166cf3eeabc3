#include "reenact/trainer.hpp"

#include <fstream>
#include <stdexcept>

namespace reenact {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kCheckpointFormat = 1;
constexpr const char* kCodeVersion = "reenact-1";

void say(const TrainContext& ctx, const std::string& msg)
{
    if (ctx.progress) ctx.progress(msg);
}

std::uint64_t stage_seed(std::uint64_t seed, int stage, int step)
{
    return mix_seed(mix_seed(seed, std::uint64_t(10 + stage)), std::uint64_t(step));
}

void append_line(const fs::path& path, const json& j)
{
    std::ofstream out(path, std::ios::app);
    if (!out) throw DataError("cannot append to " + path.string());
    out << j.dump() << "\n";
}

/// Drops log records at or beyond `step` so a resumed run does not duplicate them.
void truncate_log(const fs::path& path, int step)
{
    if (!fs::exists(path)) return;
    std::ifstream in(path);
    std::string line, kept;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = json::parse(line, nullptr, false);
        if (!j.is_discarded() && j.contains("step") && j["step"].get<int>() >= step) continue;
        kept += line + "\n";
    }
    in.close();
    write_file_atomic(path, kept);
}

void put_meta(Archive& a, const TrainContext& ctx, const std::string& stage, int step, int total,
              const std::string& parent)
{
    a.put_int("meta/format", kCheckpointFormat);
    a.put_string("meta/code_version", kCodeVersion);
    a.put_string("meta/stage", stage);
    a.put_int("meta/step", step);
    a.put_int("meta/total_steps", total);
    a.put_string("meta/tag", ctx.config.train.ablation.tag());
    a.put_string("meta/config", serialize_config(ctx.config));
    a.put_string("meta/dataset", fingerprint(ctx.dataset->manifest_json()));
    a.put_string("meta/parent", parent);
}

bool is_complete(const fs::path& ckpt)
{
    if (!fs::exists(ckpt)) return false;
    const auto a = Archive::load(ckpt);
    return a.get_int("meta/step") >= a.get_int("meta/total_steps");
}

void write_run_manifest(const TrainContext& ctx, const fs::path& dir, const json& lineage)
{
    json m = {{"config", json::parse(serialize_config(ctx.config))},
              {"dataset_manifest_hash", fingerprint(ctx.dataset->manifest_json())},
              {"code_version", kCodeVersion},
              {"seed", ctx.config.seed},
              {"tag", ctx.config.train.ablation.tag()},
              {"lineage", lineage}};
    write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

json read_lineage(const fs::path& dir)
{
    const auto p = dir / "manifest.json";
    if (!fs::exists(p)) return json::object();
    return json::parse(read_file(p)).value("lineage", json::object());
}

OracleExtractors<float> load_oracles(const fs::path& p)
{
    if (!fs::exists(p)) throw std::logic_error("oracle checkpoint missing: " + p.string() + " (run: train --stage oracles)");
    return OracleExtractors<float>::load(Archive::load(p));
}

DiffAEModel<float> load_diffae(const fs::path& p)
{
    if (!is_complete(p)) throw std::logic_error("DiffAE checkpoint missing or partial: " + p.string() + " (run: train --stage diffae)");
    return DiffAEModel<float>::load(Archive::load(p));
}

} // namespace

std::string stage_name(Stage s)
{
    switch (s) {
    case Stage::Pretrain: return "pretrain";
    case Stage::Main: return "main";
    case Stage::Finetune: return "finetune";
    }
    return "unknown";
}

Stage parse_stage(const std::string& name)
{
    if (name == "pretrain") return Stage::Pretrain;
    if (name == "main") return Stage::Main;
    if (name == "finetune") return Stage::Finetune;
    throw ConfigError("unknown stage '" + name + "'");
}

TensorF reenact(const ReenactModel& m, const TensorF& sources, const TensorF& conditions, int t_xt, int t)
{
    return clamp_image(synthesize_reenacted(m.encoder, m.diffae, sources, conditions, t_xt, t));
}

ValidationSnapshot validate_model(const ReenactModel& m, const OracleExtractors<float>& ext, const FaceDataset& ds,
                                  int pairs, const InferenceConfig& inf)
{
    const auto list = ds.self_pairs(Split::Val, pairs);
    std::vector<FaceSample> src, tgt;
    std::vector<LandmarkSet> lms;
    for (const auto& p : list) {
        src.push_back(ds.sample(p.source));
        tgt.push_back(ds.sample(p.target));
        lms.push_back(tgt.back().landmarks);
    }
    const int size = ds.config().image_size;
    const TensorF targets = stack_images(tgt);
    const TensorF out = reenact(m, stack_images(src), condition_maps<float>(lms, size), inf.t_xt, inf.t);
    const auto pred = ext.predict(out);
    ValidationSnapshot v;
    const double n = double(list.size());
    for (std::size_t i = 0; i < list.size(); ++i) {
        const int r = int(i);
        v.apd += apd(pred.pose.row(r).transpose(), tgt[i].params.pose) / n;
        v.aed += aed(pred.expression.row(r).transpose(), tgt[i].params.expression) / n;
        v.nme += reenact::nme(LandmarkSet::from_flat(pred.landmarks.row(r).transpose() / size), tgt[i].landmarks) / n;
    }
    v.l1 = l1_distance(out, targets);
    return v;
}

fs::path run_diffae_stage(const TrainContext& ctx)
{
    fs::create_directories(ctx.output);
    const fs::path ckpt = ctx.output / "diffae.ckpt", log = ctx.output / "diffae_log.jsonl";
    const auto& cfg = ctx.config;
    DiffAETrainOptions opt = cfg.diffae_train;
    opt.seed = mix_seed(cfg.seed, 1);

    DiffAEModel<float> model(cfg.diffae, mix_seed(cfg.seed, 2));
    AdamW<float> adam(model.parameters(), AdamWConfig{opt.lr, 0.9, 0.999, 1e-8, opt.weight_decay});
    int step = 0;
    if (fs::exists(ckpt)) {
        const auto a = Archive::load(ckpt);
        model = DiffAEModel<float>::load(a);
        adam = AdamW<float>(model.parameters(), AdamWConfig{opt.lr, 0.9, 0.999, 1e-8, opt.weight_decay});
        adam.load(a, "adam/");
        step = int(a.get_int("meta/step"));
        say(ctx, "diffae: resuming at step " + std::to_string(step));
    }
    truncate_log(log, step);
    const FaceDataset& ds = *ctx.dataset;
    const auto batch = [&ds](std::mt19937_64& rng, int n) {
        std::vector<FaceSample> s;
        for (int i = 0; i < n; ++i) s.push_back(ds.sample(ds.random_face(Split::Train, rng)));
        return stack_images(s);
    };
    const int interval = cfg.train.checkpoint_interval;
    double acc = 0;
    int count = 0;
    while (step < opt.steps) {
        auto chunk = opt;
        chunk.steps = std::min(opt.steps, step + interval);
        train_diffae<float>(model, chunk, batch,
                            [&](int s, double l) {
                                acc += l;
                                ++count;
                                if ((s + 1) % 10 == 0) {
                                    append_line(log, {{"step", s}, {"stage", "diffae"}, {"loss", acc / count}});
                                    acc = 0;
                                    count = 0;
                                }
                            },
                            &adam, step);
        step = chunk.steps;
        Archive a;
        model.save(a);
        adam.save(a, "adam/");
        put_meta(a, ctx, "diffae", step, opt.steps, "");
        a.save(ckpt);
        say(ctx, "diffae: step " + std::to_string(step) + "/" + std::to_string(opt.steps));
    }
    if (!fs::exists(ckpt)) {
        Archive a;
        model.save(a);
        adam.save(a, "adam/");
        put_meta(a, ctx, "diffae", step, opt.steps, "");
        a.save(ckpt);
    }
    return ckpt;
}

fs::path run_oracle_stage(const TrainContext& ctx)
{
    fs::create_directories(ctx.output);
    const fs::path ckpt = ctx.output / "oracles.ckpt", log = ctx.output / "oracles_log.jsonl";
    truncate_log(log, 0);
    OracleReport report;
    auto ext = train_oracles<float>(
        *ctx.dataset, ctx.config.oracles, mix_seed(ctx.config.seed, 3),
        [&](int s, double l) {
            if ((s + 1) % 10 == 0) append_line(log, {{"step", s}, {"stage", "oracles"}, {"loss", l}});
            if ((s + 1) % 500 == 0) say(ctx, "oracles: step " + std::to_string(s + 1));
        },
        &report);
    Archive a;
    ext.save(a);
    put_meta(a, ctx, "oracles", ctx.config.oracles.steps, ctx.config.oracles.steps, "");
    a.save(ckpt);
    json r = {{"pose_mae", {report.pose_mae[0], report.pose_mae[1], report.pose_mae[2]}},
              {"expression_mae", report.expression_mae},
              {"gaze_mae", report.gaze_mae},
              {"nme", report.nme},
              {"same_cosine", report.same_cosine},
              {"cross_cosine", report.cross_cosine},
              {"appearance_mae", report.appearance_mae}};
    write_file_atomic(ctx.output / "oracles_report.json", r.dump(2) + "\n");
    say(ctx, "oracles: " + report.str());
    return ckpt;
}

ReenactModel load_stage_model(const fs::path& checkpoint)
{
    if (!fs::exists(checkpoint)) throw DataError("checkpoint not found: " + checkpoint.string());
    const auto a = Archive::load(checkpoint);
    if (a.get_int("meta/format") != kCheckpointFormat) throw DataError("unsupported checkpoint format");
    return ReenactModel::load(a);
}

fs::path run_stage(const TrainContext& ctx, Stage stage)
{
    const auto& cfg = ctx.config;
    const auto& tc = cfg.train;
    const StagePaths paths{ctx.output / tc.ablation.tag()};
    fs::create_directories(paths.root);
    const fs::path ckpt = paths.checkpoint(stage), log = paths.log(stage);

    if (stage == Stage::Pretrain && tc.ablation.no_pretrain) throw std::logic_error("pretrain stage disabled by ablation");
    if (stage == Stage::Finetune && tc.ablation.no_finetune) throw std::logic_error("finetune stage disabled by ablation");

    int total = 0, batch_size = 0;
    double lr = 0;
    switch (stage) {
    case Stage::Pretrain: total = tc.steps_pretrain, batch_size = tc.batch_pretrain, lr = tc.lr_pretrain; break;
    case Stage::Main: total = tc.steps_main, batch_size = tc.batch_main, lr = tc.lr_main; break;
    case Stage::Finetune: total = tc.steps_finetune, batch_size = tc.batch_finetune, lr = tc.lr_finetune; break;
    }

    // Upstream model.
    std::string parent;
    ReenactModel model;
    if (stage == Stage::Pretrain || (stage == Stage::Main && tc.ablation.no_pretrain)) {
        parent = ctx.diffae_checkpoint.string();
        model.diffae = load_diffae(ctx.diffae_checkpoint);
        model.encoder = init_from_diffae(model.diffae);
    } else {
        const Stage up = stage == Stage::Main ? Stage::Pretrain : Stage::Main;
        const fs::path p = paths.checkpoint(up);
        if (!is_complete(p)) {
            throw std::logic_error(stage_name(stage) + " needs a finished " + stage_name(up) + " checkpoint at " +
                                   p.string() + " (run: train --stage " + stage_name(up) + ")");
        }
        parent = p.string();
        model = load_stage_model(p);
    }
    const auto ext = load_oracles(ctx.oracle_checkpoint);

    configure_stage(stage, model.encoder, model.diffae);
    const AdamWConfig acfg{lr, 0.9, 0.999, 1e-8, tc.weight_decay};
    AdamW<float> adam(stage_parameters(stage, model.encoder, model.diffae), acfg);
    int step = 0;
    if (fs::exists(ckpt)) {
        const auto a = Archive::load(ckpt);
        if (a.get_string("meta/config") != serialize_config(cfg)) {
            throw ConfigError("existing " + ckpt.string() + " was written with a different config");
        }
        model = ReenactModel::load(a);
        configure_stage(stage, model.encoder, model.diffae);
        adam = AdamW<float>(stage_parameters(stage, model.encoder, model.diffae), acfg);
        adam.load(a, "adam/");
        step = int(a.get_int("meta/step"));
        say(ctx, stage_name(stage) + ": resuming at step " + std::to_string(step));
    }
    truncate_log(log, step);

    const auto save = [&](int s) {
        Archive a;
        model.save(a);
        adam.save(a, "adam/");
        put_meta(a, ctx, stage_name(stage), s, total, parent);
        a.save(ckpt);
    };
    const bool halves = !tc.ablation.no_batch_split;
    while (step < total) {
        std::mt19937_64 rng(stage_seed(cfg.seed, int(stage), step));
        json rec = {{"step", step}, {"stage", stage_name(stage)}};
        if (stage == Stage::Pretrain) {
            const auto b = make_batch<float>(*ctx.dataset, Split::Train, rng, batch_size, false);
            check_batch_split(b);
            rec["code_loss"] = pretrain_step(model.encoder, model.diffae, b, adam, tc.grad_clip);
        } else {
            const auto b = make_batch<float>(*ctx.dataset, Split::Train, rng, batch_size, halves);
            check_batch_split(b);
            const auto r = stage == Stage::Main
                               ? main_step(model.encoder, model.diffae, b, ext, cfg.loss, adam, tc.t_tr, tc.grad_clip)
                               : finetune_step(model.encoder, model.diffae, b, ext, cfg.loss, adam, tc.t_tr,
                                               tc.stop_grad_xt, tc.grad_clip);
            rec["loss"] = r.to_json();
        }
        ++step;
        if (step % tc.checkpoint_interval == 0 || step == total) {
            save(step);
            if (stage != Stage::Pretrain) {
                rec["validation"] = validate_model(model, ext, *ctx.dataset, tc.val_pairs, cfg.inference).to_json();
            }
            say(ctx, stage_name(stage) + ": step " + std::to_string(step) + "/" + std::to_string(total));
        }
        append_line(log, rec);
    }
    if (!fs::exists(ckpt)) save(step);

    json lineage = read_lineage(paths.root);
    lineage[stage_name(stage)] = {{"checkpoint", ckpt.string()}, {"resumed_from", parent}};
    write_run_manifest(ctx, paths.root, lineage);
    return ckpt;
}

fs::path run_reenactment(const TrainContext& ctx)
{
    const auto& ab = ctx.config.train.ablation;
    fs::path last;
    if (!ab.no_pretrain) last = run_stage(ctx, Stage::Pretrain);
    last = run_stage(ctx, Stage::Main);
    if (!ab.no_finetune) last = run_stage(ctx, Stage::Finetune);
    return last;
}

} // namespace reenact
