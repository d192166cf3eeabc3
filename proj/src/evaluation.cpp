#include "reenact/evaluation.hpp"

#include "reenact/io.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace reenact {

namespace fs = std::filesystem;
using json = nlohmann::json;

const std::vector<std::string>& eval_columns()
{
    static const std::vector<std::string> cols{"kind", "index", "psnr", "ssim",         "l1",
                                               "csim", "perceptual_proxy", "nme", "apd", "aed"};
    return cols;
}

EvalRecord EvalTable::mean(const std::string& kind) const
{
    EvalRecord m;
    m.kind = kind;
    int n = 0;
    for (const auto& r : records) {
        if (r.kind != kind) continue;
        m.psnr += r.psnr;
        m.ssim += r.ssim;
        m.l1 += r.l1;
        m.csim += r.csim;
        m.perceptual_proxy += r.perceptual_proxy;
        m.nme += r.nme;
        m.apd += r.apd;
        m.aed += r.aed;
        ++n;
    }
    if (n > 0) {
        for (double* v : {&m.psnr, &m.ssim, &m.l1, &m.csim, &m.perceptual_proxy, &m.nme, &m.apd, &m.aed}) *v /= n;
    }
    m.index = n;
    return m;
}

Generator model_generator(const ReenactModel& m, const InferenceConfig& inf)
{
    return [&m, inf](const TensorF& s, const TensorF& c) { return reenact(m, s, c, inf.t_xt, inf.t); };
}

Generator source_generator()
{
    return [](const TensorF& s, const TensorF&) { return s; };
}

LandmarkSet cross_subject_landmarks(const FaceGenerator& gen, const FaceSample& source, const FaceSample& target)
{
    const auto cs = project_coefficients(gen.basis(), source.landmarks);
    const auto ct = project_coefficients(gen.basis(), target.landmarks);
    auto l = mix_cross_subject(gen.basis(), cs.identity, ct.pose, ct.expression);
    attach_gaze(l, target.params.gaze[0], target.params.gaze[1]);
    return l;
}

namespace {

double perceptual_distance(const OracleExtractors<float>& ext, const TensorF& a, const TensorF& b)
{
    NoGradGuard guard;
    const auto fa = ext.perceptual(VarF::constant(a));
    const auto fb = ext.perceptual(VarF::constant(b));
    double d = 0;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        d += std::sqrt((fa[l].value().array() - fb[l].value().array()).template cast<double>().square().mean());
    }
    return d;
}

} // namespace

std::vector<EvalRecord> score_batch(const std::string& kind, int first_index, const TensorF& generated,
                                    const TensorF& reference, const std::vector<LandmarkSet>& target_landmarks,
                                    const std::vector<FaceParams>& target_params, const OracleExtractors<float>& ext)
{
    require_same_shape(generated.shape(), reference.shape(), "score_batch");
    const int n = generated.shape().n, size = generated.shape().h;
    if (int(target_landmarks.size()) != n || int(target_params.size()) != n) {
        throw std::invalid_argument("score_batch: one target per generated image required");
    }
    const auto pg = ext.predict(generated);
    const auto pr = ext.predict(reference);
    std::vector<EvalRecord> out;
    for (int i = 0; i < n; ++i) {
        const TensorF g = generated.slice_batch(i, 1), r = reference.slice_batch(i, 1);
        EvalRecord e;
        e.kind = kind;
        e.index = first_index + i;
        e.psnr = psnr(g, r);
        e.ssim = ssim(g, r);
        e.l1 = l1_distance(g, r);
        e.csim = cosine(pg.identity.row(i), pr.identity.row(i));
        e.perceptual_proxy = perceptual_distance(ext, g, r);
        e.nme = nme(LandmarkSet::from_flat(pg.landmarks.row(i).transpose() / size), target_landmarks[std::size_t(i)]);
        e.apd = apd(pg.pose.row(i).transpose(), target_params[std::size_t(i)].pose);
        e.aed = aed(pg.expression.row(i).transpose(), target_params[std::size_t(i)].expression);
        out.push_back(e);
    }
    return out;
}

EvalTable run_eval(const Generator& g, const OracleExtractors<float>& ext, const FaceDataset& ds, const EvalRequest& req)
{
    EvalTable table;
    const int size = ds.config().image_size;
    const auto run_pairs = [&](const std::vector<FacePair>& pairs, bool cross) {
        for (std::size_t first = 0; first < pairs.size(); first += std::size_t(req.batch)) {
            const std::size_t last = std::min(pairs.size(), first + std::size_t(req.batch));
            std::vector<FaceSample> src, tgt;
            std::vector<LandmarkSet> lms;
            std::vector<FaceParams> params;
            for (std::size_t i = first; i < last; ++i) {
                src.push_back(ds.sample(pairs[i].source));
                tgt.push_back(ds.sample(pairs[i].target));
                lms.push_back(cross ? cross_subject_landmarks(ds.generator(), src.back(), tgt.back())
                                    : tgt.back().landmarks);
                params.push_back(tgt.back().params);
            }
            const TensorF sources = stack_images(src);
            const TensorF out = g(sources, condition_maps<float>(lms, size));
            const auto recs = score_batch(cross ? "cross" : "self", int(first), out, cross ? sources : stack_images(tgt),
                                          lms, params, ext);
            table.records.insert(table.records.end(), recs.begin(), recs.end());
        }
    };
    if (req.self_pairs > 0) run_pairs(ds.self_pairs(req.split, req.self_pairs), false);
    if (req.cross_pairs > 0) run_pairs(ds.cross_pairs(req.split, req.cross_pairs), true);

    if (req.videos) {
        const auto vids = ds.videos(req.split);
        for (std::size_t v = 0; v < vids.size(); ++v) {
            const auto frames = ds.video(vids[v]);
            std::vector<FaceSample> targets(frames.begin() + 1, frames.end());
            std::vector<LandmarkSet> lms;
            std::vector<FaceParams> params;
            for (const auto& f : targets) {
                lms.push_back(f.landmarks);
                params.push_back(f.params);
            }
            const TensorF real = stack_images(targets);
            TensorF sources;
            for (std::size_t k = 0; k < targets.size(); ++k) sources = concat_batch(sources, frames[0].image);
            const TensorF out = g(sources, condition_maps<float>(lms, size));
            const auto recs = score_batch("video", int(v * targets.size()), out, real, lms, params, ext);
            table.records.insert(table.records.end(), recs.begin(), recs.end());

            const auto er = ext.predict(real).identity, eg = ext.predict(out).identity;
            std::vector<Eigen::VectorXd> vr, vg;
            for (Eigen::Index k = 0; k < er.rows(); ++k) {
                vr.push_back(er.row(k).transpose());
                vg.push_back(eg.row(k).transpose());
            }
            table.videos.push_back({int(v), temporal_id(vr, vg)});
        }
    }
    return table;
}

void write_eval_table(const EvalTable& t, const fs::path& tsv, const fs::path& jsonl)
{
    std::ostringstream o, j;
    o << std::setprecision(10);
    const auto& cols = eval_columns();
    for (std::size_t c = 0; c < cols.size(); ++c) o << cols[c] << (c + 1 < cols.size() ? "\t" : "\n");
    const auto row = [&](const EvalRecord& r, const std::string& index) {
        o << r.kind << "\t" << index << "\t" << r.psnr << "\t" << r.ssim << "\t" << r.l1 << "\t" << r.csim << "\t"
          << r.perceptual_proxy << "\t" << r.nme << "\t" << r.apd << "\t" << r.aed << "\n";
    };
    for (const auto& r : t.records) {
        row(r, std::to_string(r.index));
        j << json{{"kind", r.kind},   {"index", r.index}, {"psnr", r.psnr},
                  {"ssim", r.ssim},   {"l1", r.l1},       {"csim", r.csim},
                  {"perceptual_proxy", r.perceptual_proxy},
                  {"nme", r.nme},     {"apd", r.apd},     {"aed", r.aed}}
                 .dump()
          << "\n";
    }
    for (const std::string kind : {"self", "cross", "video"}) {
        const auto m = t.mean(kind);
        if (m.index > 0) row(m, "mean");
    }
    for (const auto& v : t.videos) {
        j << json{{"kind", "temporal"}, {"index", v.index}, {"tl_id", v.temporal.local}, {"tg_id", v.temporal.global}}
                 .dump()
          << "\n";
    }
    write_file_atomic(tsv, o.str());
    write_file_atomic(jsonl, j.str());
}

std::vector<StepAblationRow> ablate_steps(const ReenactModel& m, const OracleExtractors<float>& ext,
                                          const FaceDataset& ds, int pairs, const std::vector<int>& t_list,
                                          const std::vector<int>& t_xt_list, int random_t, std::uint64_t seed)
{
    const auto list = ds.self_pairs(Split::Test, pairs);
    std::vector<FaceSample> src, tgt;
    std::vector<LandmarkSet> lms;
    for (const auto& p : list) {
        src.push_back(ds.sample(p.source));
        tgt.push_back(ds.sample(p.target));
        lms.push_back(tgt.back().landmarks);
    }
    const TensorF sources = stack_images(src), targets = stack_images(tgt);
    const TensorF cond = condition_maps<float>(lms, ds.config().image_size);
    const auto& sched = m.diffae.schedule();
    const auto den = m.diffae.tensor_denoiser();

    const auto score = [&](int t, int t_xt, const TensorF& out, double secs) {
        StepAblationRow r;
        r.t = t;
        r.t_xt = t_xt;
        const auto pg = ext.predict(out), pr = ext.predict(targets);
        const int n = out.shape().n;
        for (int i = 0; i < n; ++i) {
            const TensorF g = out.slice_batch(i, 1), x = targets.slice_batch(i, 1);
            r.psnr += psnr(g, x) / n;
            r.ssim += ssim(g, x) / n;
            r.csim += cosine(pg.identity.row(i), pr.identity.row(i)) / n;
            r.perceptual_proxy += perceptual_distance(ext, g, x) / n;
        }
        r.seconds = secs / n;
        return r;
    };
    using clock = std::chrono::steady_clock;
    std::vector<StepAblationRow> rows;
    for (int t : t_list) {
        for (int t_xt : t_xt_list) {
            const auto t0 = clock::now();
            const TensorF out = reenact(m, sources, cond, t_xt, t);
            rows.push_back(score(t, t_xt, out, std::chrono::duration<double>(clock::now() - t0).count()));
        }
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    TensorF noise(sources.shape());
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = float(n01(rng));
    const auto t0 = clock::now();
    const TensorF z_r = encode_reenact(m.encoder, sources, cond);
    const TensorF out = clamp_image(ddim_sample(noise, z_r, StepPlan::even(sched.total_steps(), random_t), den, sched));
    rows.push_back(score(random_t, 0, out, std::chrono::duration<double>(clock::now() - t0).count()));
    return rows;
}

void write_step_ablation(const std::vector<StepAblationRow>& rows, const fs::path& tsv)
{
    std::ostringstream o;
    o << std::setprecision(8) << "t\tt_xt\tpsnr\tssim\tcsim\tperceptual_proxy\tseconds_per_pair\n";
    for (const auto& r : rows) {
        o << r.t << "\t" << (r.t_xt == 0 ? std::string("random") : std::to_string(r.t_xt)) << "\t" << r.psnr << "\t"
          << r.ssim << "\t" << r.csim << "\t" << r.perceptual_proxy << "\t" << r.seconds << "\n";
    }
    write_file_atomic(tsv, o.str());
}

void write_triplet_grid(const TensorF& sources, const TensorF& targets, const TensorF& generated, int items,
                        const fs::path& path)
{
    std::vector<TensorF> tiles;
    const int n = std::min(items, sources.shape().n);
    for (int i = 0; i < n; ++i) {
        tiles.push_back(sources.slice_batch(i, 1));
        tiles.push_back(targets.slice_batch(i, 1));
        tiles.push_back(generated.slice_batch(i, 1));
    }
    if (tiles.empty()) return;
    write_png(path, tile_grid(tiles, 3));
}

} // namespace reenact
