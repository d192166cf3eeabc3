#pragma once

#include "reenact/config.hpp"
#include "reenact/facegen.hpp"
#include "reenact/io.hpp"
#include "reenact/layers.hpp"
#include "reenact/metrics.hpp"
#include "reenact/optim.hpp"

#include <json.hpp>

#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace reenact {

inline constexpr int kAppearanceDims = 16;

/// Oracle targets laid out as one row per sample, in natural units.
struct OracleTargets
{
    Eigen::MatrixXd pose;       // (n, 3) degrees
    Eigen::MatrixXd expression; // (n, m_e)
    Eigen::MatrixXd gaze;       // (n, 2) radians
    Eigen::MatrixXd landmarks;  // (n, 2N) pixels, interleaved
    Eigen::MatrixXd appearance; // (n, 16)
};

inline Eigen::VectorXd appearance_vector(const Appearance& a)
{
    Eigen::VectorXd v(kAppearanceDims);
    v << a.skin, a.hair, a.iris, a.background_top, a.background_bottom, a.light;
    return v;
}

inline OracleTargets oracle_targets(const std::vector<FaceSample>& s, int image_size)
{
    const int n = int(s.size());
    OracleTargets t;
    t.pose.resize(n, 3);
    t.expression.resize(n, s.empty() ? 0 : s[0].params.expression.size());
    t.gaze.resize(n, 2);
    t.landmarks.resize(n, s.empty() ? 0 : s[0].landmarks.points.size());
    t.appearance.resize(n, kAppearanceDims);
    for (int i = 0; i < n; ++i) {
        t.pose.row(i) = s[i].params.pose.transpose();
        t.expression.row(i) = s[i].params.expression.transpose();
        t.gaze.row(i) = s[i].params.gaze.transpose();
        t.landmarks.row(i) = (s[i].landmarks.flat() * image_size).transpose();
        t.appearance.row(i) = appearance_vector(s[i].params.appearance).transpose();
    }
    return t;
}

/// Per-head outputs in natural units, (n, d, 1, 1) each.
template <typename Scalar>
struct OracleOutputs
{
    Var<Scalar> pose, expression, gaze, landmarks, identity, style;
};

/**
 * Stand-in extractors: one convolutional trunk with heads for head pose, expression,
 * gaze, 2D landmarks, an identity embedding (metric learned) and a style embedding
 * (appearance regression), plus a frozen random-weight perceptual stack.
 */
template <typename Scalar>
class OracleExtractors
{
public:
    OracleExtractors() = default;
    OracleExtractors(const OracleConfig& cfg, int image_size, int expression_dims, int landmark_count,
                     std::uint64_t seed)
        : cfg_(cfg), image_size_(image_size), expression_dims_(expression_dims), landmark_count_(landmark_count)
    {
        if (cfg.channels.empty() || cfg.perceptual_channels.empty()) throw ConfigError("oracle channel lists empty");
        std::mt19937_64 rng(seed);
        const auto& ch = cfg.channels;
        stem_ = Conv2d<Scalar>(3, ch[0], 3, 1, rng);
        int size = image_size;
        for (std::size_t i = 1; i < ch.size(); ++i) {
            downs_.emplace_back(ch[i - 1], ch[i], 3, 2, rng);
            size /= 2;
        }
        if (size < 1) throw ConfigError("oracle trunk too deep for the image size");
        fc_ = Linear<Scalar>(ch.back() * size * size, kHidden, rng);
        pose_ = Linear<Scalar>(kHidden, 3, rng, Scalar(0.1));
        expression_ = Linear<Scalar>(kHidden, expression_dims, rng, Scalar(0.1));
        gaze_ = Linear<Scalar>(kHidden, 2, rng, Scalar(0.1));
        landmarks_ = Linear<Scalar>(kHidden, 2 * landmark_count, rng, Scalar(0.1));
        identity_ = Linear<Scalar>(kHidden, cfg.embed_dim, rng);
        style_ = Linear<Scalar>(kHidden, kAppearanceDims, rng, Scalar(0.1));

        int cin = 3;
        for (std::size_t i = 0; i < cfg.perceptual_channels.size(); ++i) {
            perceptual_.emplace_back(cin, cfg.perceptual_channels[i], 3, i == 0 ? 1 : 2, rng);
            cin = cfg.perceptual_channels[i];
        }
        set_trainable(perceptual_parameters(), false);
    }

    const OracleConfig& config() const { return cfg_; }
    int image_size() const { return image_size_; }

    OracleOutputs<Scalar> operator()(const Var<Scalar>& x) const
    {
        Var<Scalar> h = stem_(x);
        for (const auto& d : downs_) h = d(silu(group_norm(h, kGroups)));
        h = silu(fc_(flatten(silu(group_norm(h, kGroups)))));
        OracleOutputs<Scalar> o;
        o.pose = scale(pose_(h), Scalar(kPoseUnit));
        o.expression = expression_(h);
        o.gaze = scale(gaze_(h), Scalar(kGazeUnit));
        o.landmarks = add_scalar(scale(landmarks_(h), Scalar(image_size_ / 4.0)), Scalar(image_size_ / 2.0));
        o.identity = identity_(h);
        o.style = add_scalar(scale(style_(h), Scalar(0.5)), Scalar(0.5));
        return o;
    }

    /// Post-activation features of each perceptual layer.
    std::vector<Var<Scalar>> perceptual(const Var<Scalar>& x) const
    {
        std::vector<Var<Scalar>> f;
        Var<Scalar> h = x;
        for (const auto& c : perceptual_) {
            h = relu(c(h));
            f.push_back(h);
        }
        return f;
    }

    /// Head outputs for a batch without recording a graph.
    struct Predictions
    {
        Eigen::MatrixXd pose, expression, gaze, landmarks, identity, style;
    };
    Predictions predict(const Tensor<Scalar>& x) const
    {
        NoGradGuard guard;
        const auto o = (*this)(Var<Scalar>::constant(x));
        return {rows(o.pose.value()),      rows(o.expression.value()), rows(o.gaze.value()),
                rows(o.landmarks.value()), rows(o.identity.value()),   rows(o.style.value())};
    }

    ParameterList<Scalar> trunk_parameters()
    {
        ParameterList<Scalar> l;
        stem_.collect(l, "oracle.stem");
        for (std::size_t i = 0; i < downs_.size(); ++i) downs_[i].collect(l, "oracle.down" + std::to_string(i));
        fc_.collect(l, "oracle.fc");
        pose_.collect(l, "oracle.pose");
        expression_.collect(l, "oracle.expression");
        gaze_.collect(l, "oracle.gaze");
        landmarks_.collect(l, "oracle.landmarks");
        identity_.collect(l, "oracle.identity");
        style_.collect(l, "oracle.style");
        return l;
    }
    ParameterList<Scalar> perceptual_parameters()
    {
        ParameterList<Scalar> l;
        for (std::size_t i = 0; i < perceptual_.size(); ++i) perceptual_[i].collect(l, "perceptual." + std::to_string(i));
        return l;
    }
    ParameterList<Scalar> parameters()
    {
        auto l = trunk_parameters();
        auto p = perceptual_parameters();
        l.insert(l.end(), p.begin(), p.end());
        return l;
    }
    void freeze() { set_trainable(parameters(), false); }

    void save(Archive& a, const std::string& prefix = "oracles/")
    {
        nlohmann::json j = {{"steps", cfg_.steps},
                            {"batch_size", cfg_.batch_size},
                            {"lr", cfg_.lr},
                            {"embed_dim", cfg_.embed_dim},
                            {"channels", cfg_.channels},
                            {"perceptual_channels", cfg_.perceptual_channels},
                            {"max_pose_error", cfg_.max_pose_error},
                            {"min_identity_gap", cfg_.min_identity_gap},
                            {"max_nme", cfg_.max_nme},
                            {"image_size", image_size_},
                            {"expression_dims", expression_dims_},
                            {"landmark_count", landmark_count_}};
        a.put_string(prefix + "config", j.dump());
        save_parameters(a, parameters(), prefix);
    }

    static OracleExtractors load(const Archive& a, const std::string& prefix = "oracles/")
    {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(a.get_string(prefix + "config"));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("oracle checkpoint config: ") + e.what());
        }
        OracleConfig c;
        c.steps = j.at("steps");
        c.batch_size = j.at("batch_size");
        c.lr = j.at("lr");
        c.embed_dim = j.at("embed_dim");
        c.channels = j.at("channels").get<std::vector<int>>();
        c.perceptual_channels = j.at("perceptual_channels").get<std::vector<int>>();
        c.max_pose_error = j.at("max_pose_error");
        c.min_identity_gap = j.at("min_identity_gap");
        c.max_nme = j.at("max_nme");
        OracleExtractors o(c, j.at("image_size"), j.at("expression_dims"), j.at("landmark_count"), 0);
        load_parameters(a, o.parameters(), prefix);
        o.freeze();
        return o;
    }

private:
    static constexpr int kHidden = 256;
    static constexpr int kGroups = 8;
    static constexpr double kPoseUnit = 30.0;
    static constexpr double kGazeUnit = 0.45;

    static Eigen::MatrixXd rows(const Tensor<Scalar>& t)
    {
        Eigen::MatrixXd m(t.shape().n, t.shape().sample_size());
        for (int n = 0; n < t.shape().n; ++n) m.row(n) = t.sample(n).template cast<double>().matrix().transpose();
        return m;
    }

    OracleConfig cfg_;
    int image_size_ = 32;
    int expression_dims_ = 4;
    int landmark_count_ = kLandmarkCount;
    Conv2d<Scalar> stem_;
    std::vector<Conv2d<Scalar>> downs_;
    Linear<Scalar> fc_, pose_, expression_, gaze_, landmarks_, identity_, style_;
    std::vector<Conv2d<Scalar>> perceptual_;
};

/// (n, d) rows as a (n, d, 1, 1) tensor.
template <typename Scalar>
Tensor<Scalar> rows_tensor(const Eigen::MatrixXd& m)
{
    Tensor<Scalar> t(vector_shape(int(m.rows()), int(m.cols())));
    for (Eigen::Index n = 0; n < m.rows(); ++n) t.sample(int(n)) = m.row(n).transpose().array().template cast<Scalar>();
    return t;
}

/// Validation measurements of trained oracles against ground truth.
struct OracleReport
{
    Eigen::Vector3d pose_mae = Eigen::Vector3d::Zero(); // degrees per angle
    double expression_mae = 0;
    double gaze_mae = 0;      // radians
    double nme = 0;           // percent
    double same_cosine = 0;   // mean identity cosine over same-identity pairs
    double cross_cosine = 0;  // mean over different-identity pairs
    double appearance_mae = 0;

    double identity_gap() const { return same_cosine - cross_cosine; }
    bool passed(const OracleConfig& c) const
    {
        return pose_mae.maxCoeff() < c.max_pose_error && nme < c.max_nme && identity_gap() >= c.min_identity_gap;
    }
    std::string str() const
    {
        std::ostringstream o;
        o << "pose MAE (deg) " << pose_mae.transpose() << ", expression MAE " << expression_mae << ", gaze MAE (rad) "
          << gaze_mae << ", NME " << nme << "%, identity cosine same " << same_cosine << " cross " << cross_cosine
          << ", appearance MAE " << appearance_mae;
        return o.str();
    }
};

template <typename Scalar>
OracleReport evaluate_oracles(const OracleExtractors<Scalar>& o, const FaceDataset& ds, Split split, int pairs)
{
    const auto list = ds.self_pairs(split, pairs);
    std::vector<FaceSample> a, b;
    for (const auto& p : list) {
        a.push_back(ds.sample(p.source));
        b.push_back(ds.sample(p.target));
    }
    const int size = ds.config().image_size;
    const auto pa = o.predict(stack_images(a).template cast<Scalar>());
    const auto pb = o.predict(stack_images(b).template cast<Scalar>());
    const auto ta = oracle_targets(a, size);

    OracleReport r;
    const int n = int(list.size());
    r.pose_mae = (pa.pose - ta.pose).cwiseAbs().colwise().mean().transpose();
    r.expression_mae = (pa.expression - ta.expression).cwiseAbs().mean();
    r.gaze_mae = (pa.gaze - ta.gaze).cwiseAbs().mean();
    r.appearance_mae = (pa.style - ta.appearance).cwiseAbs().mean();
    int cross = 0;
    for (int i = 0; i < n; ++i) {
        r.nme += nme(LandmarkSet::from_flat(pa.landmarks.row(i).transpose() / size), a[std::size_t(i)].landmarks) / n;
        r.same_cosine += cosine(pa.identity.row(i), pb.identity.row(i)) / n;
        for (int j = 0; j < n; ++j) {
            if (list[std::size_t(j)].target.identity == list[std::size_t(i)].source.identity) continue;
            r.cross_cosine += cosine(pa.identity.row(i), pb.identity.row(j));
            ++cross;
        }
    }
    r.cross_cosine /= std::max(1, cross);
    return r;
}

/**
 * Multi-task training: mean squared error on unit-normalised regression targets plus
 * a cosine triplet loss on the identity embedding (positives share the identity,
 * negatives are the next pair's positive). Throws with the report if ceilings are missed.
 */
template <typename Scalar>
OracleExtractors<Scalar> train_oracles(const FaceDataset& ds, const OracleConfig& cfg, std::uint64_t seed,
                                       const std::function<void(int, double)>& log = {}, OracleReport* report = nullptr)
{
    const int size = ds.config().image_size;
    OracleExtractors<Scalar> o(cfg, size, ds.config().expression_dims, kLandmarkCount, seed);
    AdamW<Scalar> adam(o.trunk_parameters(), AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, 1e-4});
    const int half = std::max(2, cfg.batch_size / 2);
    const double margin = 0.5;

    for (int step = 0; step < cfg.steps; ++step) {
        std::mt19937_64 rng(seed * 7919ull + std::uint64_t(step));
        std::vector<FaceSample> anchors, positives;
        for (int i = 0; i < half; ++i) {
            const auto p = ds.random_self_pair(Split::Train, rng);
            anchors.push_back(ds.sample(p.source));
            positives.push_back(ds.sample(p.target));
        }
        std::vector<FaceSample> all = anchors;
        all.insert(all.end(), positives.begin(), positives.end());
        const auto t = oracle_targets(all, size);
        const Var<Scalar> x = Var<Scalar>::constant(stack_images(all).template cast<Scalar>());

        const double lr = cfg.lr * 0.5 * (1 + std::cos(M_PI * step / std::max(1, cfg.steps)));
        adam.set_lr(lr);
        adam.zero_grad();
        const auto out = o(x);
        const auto reg = [](const Var<Scalar>& pred, const Eigen::MatrixXd& target, double unit) {
            return mean(square(scale(pred - Var<Scalar>::constant(rows_tensor<Scalar>(target)), Scalar(1 / unit))));
        };
        Var<Scalar> loss = reg(out.pose, t.pose, 30.0) + reg(out.expression, t.expression, 1.5) +
                           reg(out.gaze, t.gaze, 0.45) + reg(out.landmarks, t.landmarks, size / 4.0) +
                           reg(out.style, t.appearance, 0.5);
        const auto ea = slice_batch(out.identity, 0, half), ep = slice_batch(out.identity, half, half);
        const auto en = concat_batch(slice_batch(ep, 1, half - 1), slice_batch(ep, 0, 1));
        const auto trip = relu(add_scalar(cosine_similarity(ea, en) - cosine_similarity(ea, ep), Scalar(margin)));
        loss = loss + mean(trip);
        if (!std::isfinite(double(loss.item()))) {
            throw NumericError("train_oracles: non-finite loss at step " + std::to_string(step));
        }
        loss.backward();
        adam.clip_grad_norm(5.0);
        adam.step();
        if (log) log(step, double(loss.item()));
    }
    o.freeze();
    const auto r = evaluate_oracles(o, ds, Split::Val, 64);
    if (report) *report = r;
    if (!r.passed(cfg)) throw NumericError("oracle validation ceilings not reached: " + r.str());
    return o;
}

} // namespace reenact
