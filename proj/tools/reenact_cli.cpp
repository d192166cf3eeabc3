#include "reenact/evaluation.hpp"
#include "reenact/io.hpp"
#include "reenact/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>

using namespace reenact;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kConfigError = 2, kDataError = 3, kNumericError = 4 };

constexpr const char* kOutputEnv = "REENACT_OUTPUT_ROOT";
constexpr const char* kCodeVersion = "reenact-1";

struct Common
{
    std::string config_path;
    std::string output;

    Config config() const
    {
        Config c = config_path.empty() ? Config{} : load_config(config_path);
        validate(c);
        return c;
    }
    fs::path root() const
    {
        if (!output.empty()) return output;
        if (const char* env = std::getenv(kOutputEnv); env && *env) return env;
        return "runs";
    }
};

void log(const std::string& msg) { std::cerr << msg << std::endl; }

/// The dataset described by the config; refuses a generated dataset written with other settings.
FaceDataset dataset(const Config& cfg, const fs::path& root)
{
    FaceDataset ds(cfg.data, cfg.seed);
    const fs::path manifest = root / "data" / "manifest.json";
    if (fs::exists(manifest) && read_file(manifest) != ds.manifest_json()) {
        throw DataError(manifest.string() + " does not match the configured dataset (rerun gen-data)");
    }
    return ds;
}

void write_manifest(const fs::path& dir, const Config& cfg, const FaceDataset& ds, const json& lineage)
{
    fs::create_directories(dir);
    const json m = {{"config", json::parse(serialize_config(cfg))},
                    {"dataset_manifest_hash", fingerprint(ds.manifest_json())},
                    {"code_version", kCodeVersion},
                    {"seed", cfg.seed},
                    {"lineage", lineage}};
    write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

OracleExtractors<float> load_oracles(const fs::path& p)
{
    if (!fs::exists(p)) throw std::logic_error("oracle checkpoint missing: " + p.string() + " (run: train --stage oracles)");
    return OracleExtractors<float>::load(Archive::load(p));
}

Ablation parse_ablation(const std::vector<std::string>& flags)
{
    Ablation a;
    for (const auto& f : flags) {
        if (f == "no-pretrain") a.no_pretrain = true;
        else if (f == "no-batch-split") a.no_batch_split = true;
        else if (f == "no-finetune") a.no_finetune = true;
        else throw ConfigError("unknown ablation '" + f + "' (expected no-pretrain, no-batch-split or no-finetune)");
    }
    return a;
}

fs::path default_checkpoint(const fs::path& root, const Config& cfg)
{
    const auto& ab = cfg.train.ablation;
    return root / ab.tag() / ((ab.no_finetune ? std::string("main") : std::string("finetune")) + ".ckpt");
}

// ---- gen-data

int cmd_gen_data(const Common& c)
{
    const Config cfg = c.config();
    const FaceDataset ds(cfg.data, cfg.seed);
    const fs::path dir = c.root() / "data";
    fs::create_directories(dir);
    ds.write(dir);
    std::cout << "dataset " << dir.string() << "\n"
              << "identities train " << ds.identities(Split::Train).size() << " val "
              << ds.identities(Split::Val).size() << " test " << ds.identities(Split::Test).size() << "\n"
              << "manifest " << fingerprint(ds.manifest_json()) << "\n";
    return kOk;
}

// ---- train

int cmd_train(const Common& c, const std::string& stage, const std::vector<std::string>& ablate)
{
    Config cfg = c.config();
    cfg.train.ablation = parse_ablation(ablate);
    const fs::path root = c.root();
    const FaceDataset ds = dataset(cfg, root);
    TrainContext ctx;
    ctx.config = cfg;
    ctx.dataset = &ds;
    ctx.output = root;
    ctx.diffae_checkpoint = root / "diffae.ckpt";
    ctx.oracle_checkpoint = root / "oracles.ckpt";
    ctx.progress = log;

    fs::path out;
    if (stage == "diffae") {
        out = run_diffae_stage(ctx);
    } else if (stage == "oracles") {
        out = run_oracle_stage(ctx);
    } else if (stage == "all") {
        run_diffae_stage(ctx);
        if (!fs::exists(ctx.oracle_checkpoint)) run_oracle_stage(ctx);
        out = run_reenactment(ctx);
    } else {
        out = run_stage(ctx, parse_stage(stage));
    }
    std::cout << out.string() << "\n";
    return kOk;
}

// ---- reenact

struct ReenactArgs
{
    std::string checkpoint, oracles, source, driving, driving_video, driving_params, out;
    bool cross_subject = false;
    int t_xt = 0, t = 0;
};

std::vector<fs::path> sorted_pngs(const fs::path& dir)
{
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no PNG frames in " + dir.string());
    return files;
}

TensorF read_image(const fs::path& p, int size)
{
    const TensorF x = read_png(p);
    if (x.shape().c != 3 || x.shape().h != size || x.shape().w != size) {
        throw DataError(p.string() + ": expected an RGB " + std::to_string(size) + "x" + std::to_string(size) +
                        " image, got " + x.shape().str());
    }
    return x;
}

/// Landmarks (normalised) and gaze read off an image by the landmark and gaze regressors.
LandmarkSet estimate_landmarks(const OracleExtractors<float>::Predictions& p, int row, int size)
{
    auto l = LandmarkSet::from_flat(p.landmarks.row(row).transpose() / size);
    attach_gaze(l, p.gaze(row, 0), p.gaze(row, 1));
    return l;
}

int cmd_reenact(const Common& c, const ReenactArgs& r)
{
    const Config cfg = c.config();
    const fs::path root = c.root();
    const int size = cfg.data.image_size;
    const int sources_given = int(!r.driving.empty()) + int(!r.driving_video.empty()) + int(!r.driving_params.empty());
    if (sources_given != 1) throw ConfigError("give exactly one of --driving, --driving-video, --driving-params");

    const fs::path ckpt = r.checkpoint.empty() ? default_checkpoint(root, cfg) : fs::path(r.checkpoint);
    const ReenactModel m = load_stage_model(ckpt);
    const auto ext = load_oracles(r.oracles.empty() ? root / "oracles.ckpt" : fs::path(r.oracles));
    const FaceGenerator gen(cfg.data);
    const InferenceConfig inf{r.t_xt > 0 ? r.t_xt : cfg.inference.t_xt, r.t > 0 ? r.t : cfg.inference.t};

    const TensorF source = read_image(r.source, size);
    const auto ps = ext.predict(source);
    const auto source_coeffs = project_coefficients(gen.basis(), estimate_landmarks(ps, 0, size));

    std::vector<LandmarkSet> lms;
    TensorF driving_images;
    const auto from_images = [&](const std::vector<fs::path>& files) {
        for (const auto& f : files) driving_images = concat_batch(driving_images, read_image(f, size));
        const auto pd = ext.predict(driving_images);
        for (int i = 0; i < driving_images.shape().n; ++i) {
            LandmarkSet l = estimate_landmarks(pd, i, size);
            if (r.cross_subject) {
                const auto cd = project_coefficients(gen.basis(), l);
                l = mix_cross_subject(gen.basis(), source_coeffs.identity, cd.pose, cd.expression);
                attach_gaze(l, pd.gaze(i, 0), pd.gaze(i, 1));
            }
            lms.push_back(l);
        }
    };
    if (!r.driving.empty()) from_images({r.driving});
    if (!r.driving_video.empty()) from_images(sorted_pngs(r.driving_video));
    if (!r.driving_params.empty()) {
        json j;
        try {
            j = json::parse(read_file(r.driving_params));
        } catch (const json::exception& e) {
            throw DataError(r.driving_params + ": " + e.what());
        }
        if (!j.is_array() || j.empty()) throw DataError(r.driving_params + ": expected a non-empty array of frames");
        for (const auto& f : j) {
            FaceParams p;
            p.identity = Eigen::VectorXd::Zero(cfg.data.identity_dims);
            p.expression = Eigen::VectorXd::Zero(cfg.data.expression_dims);
            try {
                const auto pose = f.value("pose", std::vector<double>{0, 0, 0});
                const auto expr = f.value("expression", std::vector<double>(std::size_t(cfg.data.expression_dims), 0.0));
                const auto gaze = f.value("gaze", std::vector<double>{0, 0});
                if (pose.size() != 3 || gaze.size() != 2 || int(expr.size()) != cfg.data.expression_dims) {
                    throw DataError(r.driving_params + ": pose needs 3, gaze 2 and expression " +
                                    std::to_string(cfg.data.expression_dims) + " values");
                }
                p.pose = Eigen::Vector3d(pose[0], pose[1], pose[2]);
                p.expression = Eigen::Map<const Eigen::VectorXd>(expr.data(), Eigen::Index(expr.size()));
                p.gaze = Eigen::Vector2d(gaze[0], gaze[1]);
            } catch (const json::exception& e) {
                throw DataError(r.driving_params + ": " + e.what());
            }
            const auto cd = gen.coefficients(p);
            auto l = mix_cross_subject(gen.basis(), source_coeffs.identity, cd.pose, cd.expression);
            attach_gaze(l, p.gaze[0], p.gaze[1]);
            lms.push_back(l);
        }
    }

    // x_T of the source is computed once and reused for every driving frame.
    const auto& sched = m.diffae.schedule();
    const auto den = m.diffae.tensor_denoiser();
    const TensorF x_T =
        ddim_encode(source, encode_semantic(m.diffae, source), StepPlan::even(sched.total_steps(), inf.t_xt), den, sched);
    const fs::path out = r.out.empty() ? root / "reenact" : fs::path(r.out);
    fs::create_directories(out);
    std::vector<TensorF> tiles;
    const int frames = int(lms.size());
    for (int i = 0; i < frames; ++i) {
        const TensorF cond = condition_maps<float>({lms[std::size_t(i)]}, size);
        const TensorF z_r = encode_reenact(m.encoder, source, cond);
        TensorF frame = clamp_image(ddim_sample(x_T, z_r, StepPlan::even(sched.total_steps(), inf.t), den, sched));
        quantize_8bit(frame);
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04d.png", i);
        write_png(out / name, frame);
        tiles.push_back(source);
        if (driving_images.shape().n > i) {
            tiles.push_back(driving_images.slice_batch(i, 1));
        } else {
            TensorF shown = cond;
            shown.array() = 2.f * shown.array() - 1.f;
            tiles.push_back(shown);
        }
        tiles.push_back(frame);
    }
    write_png(out / "grid.png", tile_grid(tiles, 3));
    const FaceDataset ds(cfg.data, cfg.seed);
    write_manifest(out, cfg, ds,
                   {{"checkpoint", ckpt.string()}, {"t_xt", inf.t_xt}, {"t", inf.t}, {"frames", frames},
                    {"cross_subject", r.cross_subject || !r.driving_params.empty()}});
    std::cout << frames << " frames written to " << out.string() << "\n";
    return kOk;
}

// ---- eval

struct EvalArgs
{
    std::string checkpoint, oracles, split = "test", out, baseline;
    int pairs = -1, cross_pairs = 0;
    bool videos = false;
};

Split parse_split(const std::string& s)
{
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw ConfigError("unknown split '" + s + "'");
}

int cmd_eval(const Common& c, const EvalArgs& a)
{
    const Config cfg = c.config();
    const fs::path root = c.root();
    const FaceDataset ds = dataset(cfg, root);
    const auto ext = load_oracles(a.oracles.empty() ? root / "oracles.ckpt" : fs::path(a.oracles));
    EvalRequest req;
    req.split = parse_split(a.split);
    req.self_pairs = a.pairs >= 0 ? a.pairs : cfg.eval.pairs;
    req.cross_pairs = a.cross_pairs;
    req.videos = a.videos;

    ReenactModel m;
    Generator g;
    std::string label;
    if (a.baseline == "source") {
        g = source_generator();
        label = "source";
    } else if (a.baseline.empty()) {
        const fs::path ckpt = a.checkpoint.empty() ? default_checkpoint(root, cfg) : fs::path(a.checkpoint);
        m = load_stage_model(ckpt);
        g = model_generator(m, cfg.inference);
        label = ckpt.string();
    } else {
        throw ConfigError("unknown baseline '" + a.baseline + "' (expected source)");
    }
    const EvalTable t = run_eval(g, ext, ds, req);
    const fs::path out = a.out.empty() ? root / "eval" : fs::path(a.out);
    fs::create_directories(out);
    write_eval_table(t, out / "eval.tsv", out / "eval.jsonl");

    const auto list = ds.self_pairs(req.split, std::min(req.self_pairs, cfg.eval.grid_items));
    if (!list.empty()) {
        std::vector<FaceSample> src, tgt;
        std::vector<LandmarkSet> lms;
        for (const auto& p : list) {
            src.push_back(ds.sample(p.source));
            tgt.push_back(ds.sample(p.target));
            lms.push_back(tgt.back().landmarks);
        }
        const TensorF s = stack_images(src);
        write_triplet_grid(s, stack_images(tgt), g(s, condition_maps<float>(lms, cfg.data.image_size)),
                           cfg.eval.grid_items, out / "grid.png");
    }
    write_manifest(out, cfg, ds, {{"checkpoint", label}, {"split", a.split}, {"self_pairs", req.self_pairs},
                                  {"cross_pairs", req.cross_pairs}, {"videos", req.videos}});
    for (const std::string kind : {"self", "cross", "video"}) {
        const auto r = t.mean(kind);
        if (r.index == 0) continue;
        std::cout << kind << " n=" << r.index << " psnr " << r.psnr << " ssim " << r.ssim << " l1 " << r.l1
                  << " csim " << r.csim << " nme " << r.nme << " apd " << r.apd << " aed " << r.aed << "\n";
    }
    for (const auto& v : t.videos) {
        std::cout << "video " << v.index << " tl-id " << v.temporal.local << " tg-id " << v.temporal.global << "\n";
    }
    return kOk;
}

// ---- ablate

int cmd_ablate(const Common& c, const std::string& checkpoint, const std::string& oracles, const std::string& out_dir,
               int pairs)
{
    const Config cfg = c.config();
    const fs::path root = c.root();
    const FaceDataset ds = dataset(cfg, root);
    const auto ext = load_oracles(oracles.empty() ? root / "oracles.ckpt" : fs::path(oracles));
    const fs::path ckpt = checkpoint.empty() ? default_checkpoint(root, cfg) : fs::path(checkpoint);
    const ReenactModel m = load_stage_model(ckpt);
    const int n = pairs > 0 ? pairs : cfg.eval.pairs;
    const auto rows = ablate_steps(m, ext, ds, n, cfg.eval.t_list, cfg.eval.t_xt_list, cfg.inference.t,
                                   mix_seed(cfg.seed, 77));
    const fs::path out = out_dir.empty() ? root / "ablate" : fs::path(out_dir);
    fs::create_directories(out);
    write_step_ablation(rows, out / "steps.tsv");
    write_manifest(out, cfg, ds, {{"checkpoint", ckpt.string()}, {"pairs", n}});
    std::cout << "t\tt_xt\tpsnr\tssim\tcsim\n";
    for (const auto& r : rows) {
        std::cout << r.t << "\t" << (r.t_xt == 0 ? std::string("random") : std::to_string(r.t_xt)) << "\t" << r.psnr
                  << "\t" << r.ssim << "\t" << r.csim << "\n";
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Diffusion-based one-shot face reenactment on synthetic faces"};
    app.require_subcommand(1);
    Common common;
    app.add_option("-c,--config", common.config_path, "JSON config (defaults when omitted)")->check(CLI::ExistingFile);
    app.add_option("-o,--output", common.output,
                   std::string("Output root (default: $") + kOutputEnv + " or ./runs)");

    auto* gen = app.add_subcommand("gen-data", "Render the synthetic dataset and write its manifest");

    auto* train = app.add_subcommand("train", "Run one training stage");
    std::string stage;
    std::vector<std::string> ablate;
    train->add_option("--stage", stage, "diffae, oracles, pretrain, main, finetune or all")
        ->required()
        ->check(CLI::IsMember({"diffae", "oracles", "pretrain", "main", "finetune", "all"}));
    train->add_option("--ablate", ablate, "no-pretrain, no-batch-split, no-finetune (repeatable)");

    auto* ren = app.add_subcommand("reenact", "Reenact a source image with driving images, a video or parameters");
    ReenactArgs ra;
    ren->add_option("--checkpoint", ra.checkpoint, "Stage checkpoint (default: final stage of the full run)");
    ren->add_option("--oracles", ra.oracles, "Extractor checkpoint (default: <output>/oracles.ckpt)");
    ren->add_option("--source", ra.source, "Source PNG")->required()->check(CLI::ExistingFile);
    ren->add_option("--driving", ra.driving, "Driving PNG")->check(CLI::ExistingFile);
    ren->add_option("--driving-video", ra.driving_video, "Directory of driving PNG frames")->check(CLI::ExistingDirectory);
    ren->add_option("--driving-params", ra.driving_params,
                    "JSON array of {pose: [yaw, pitch, roll] deg, expression: [...], gaze: [alpha, beta] rad}")
        ->check(CLI::ExistingFile);
    ren->add_flag("--cross-subject", ra.cross_subject, "Keep the source identity shape when driving with images");
    ren->add_option("--t-xt", ra.t_xt, "Encoding steps (default from config)");
    ren->add_option("--t", ra.t, "Decoding steps (default from config)");
    ren->add_option("--out", ra.out, "Output directory (default: <output>/reenact)");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on held-out pairs");
    EvalArgs ea;
    ev->add_option("--checkpoint", ea.checkpoint, "Stage checkpoint (default: final stage of the full run)");
    ev->add_option("--oracles", ea.oracles, "Extractor checkpoint (default: <output>/oracles.ckpt)");
    ev->add_option("--split", ea.split, "val or test")->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_option("--pairs", ea.pairs, "Self-reenactment pairs (default from config)");
    ev->add_option("--cross-pairs", ea.cross_pairs, "Cross-subject pairs");
    ev->add_flag("--videos", ea.videos, "Also reenact the split's videos and report temporal identity");
    ev->add_option("--baseline", ea.baseline, "Score a baseline instead of a model: source");
    ev->add_option("--out", ea.out, "Output directory (default: <output>/eval)");

    auto* ab = app.add_subcommand("ablate", "Sampling-step ablation of a checkpoint");
    std::string ab_ckpt, ab_oracles, ab_out;
    int ab_pairs = 0;
    ab->add_option("--checkpoint", ab_ckpt, "Stage checkpoint (default: final stage of the full run)");
    ab->add_option("--oracles", ab_oracles, "Extractor checkpoint (default: <output>/oracles.ckpt)");
    ab->add_option("--pairs", ab_pairs, "Self-reenactment pairs (default from config)");
    ab->add_option("--out", ab_out, "Output directory (default: <output>/ablate)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*gen) return cmd_gen_data(common);
        if (*train) return cmd_train(common, stage, ablate);
        if (*ren) return cmd_reenact(common, ra);
        if (*ev) return cmd_eval(common, ea);
        if (*ab) return cmd_ablate(common, ab_ckpt, ab_oracles, ab_out, ab_pairs);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::logic_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumericError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInternal;
    }
    return kInternal;
}
