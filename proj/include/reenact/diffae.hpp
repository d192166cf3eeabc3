#pragma once

#include "reenact/config.hpp"
#include "reenact/diffusion.hpp"
#include "reenact/io.hpp"
#include "reenact/layers.hpp"
#include "reenact/optim.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace reenact {

/// Sinusoidal embedding of integer steps, (n, dim, 1, 1).
template <typename Scalar>
Tensor<Scalar> timestep_embedding(const std::vector<int>& steps, int dim)
{
    Tensor<Scalar> e(vector_shape(int(steps.size()), dim));
    const int half = dim / 2;
    for (std::size_t n = 0; n < steps.size(); ++n) {
        for (int k = 0; k < half; ++k) {
            const double f = std::exp(-std::log(10000.0) * k / half);
            e.at(int(n), k, 0, 0) = Scalar(std::sin(steps[n] * f));
            e.at(int(n), half + k, 0, 0) = Scalar(std::cos(steps[n] * f));
        }
    }
    return e;
}

/// Residual block whose second normalisation is modulated by the conditioning vector.
template <typename Scalar>
struct ResBlock
{
    int groups = 8;
    Conv2d<Scalar> conv1, conv2, skip;
    Linear<Scalar> mod;
    bool has_skip = false;

    ResBlock() = default;
    ResBlock(int cin, int cout, int cond_dim, int groups_, std::mt19937_64& rng)
        : groups(groups_), conv1(cin, cout, 3, 1, rng), conv2(cout, cout, 3, 1, rng, Scalar(0.1)),
          mod(cond_dim, 2 * cout, rng, Scalar(0.1)), has_skip(cin != cout)
    {
        if (has_skip) skip = Conv2d<Scalar>(cin, cout, 1, 1, rng);
    }

    Var<Scalar> operator()(const Var<Scalar>& x, const Var<Scalar>& cond) const
    {
        const int c = conv2.weight.value().shape().n;
        Var<Scalar> h = conv1(silu(group_norm(x, groups)));
        const Var<Scalar> ss = mod(cond);
        h = modulate(group_norm(h, groups), slice_channels(ss, 0, c), slice_channels(ss, c, c));
        h = conv2(silu(h));
        return (has_skip ? skip(x) : x) + h;
    }

    void collect(ParameterList<Scalar>& out, const std::string& prefix)
    {
        conv1.collect(out, prefix + ".conv1");
        conv2.collect(out, prefix + ".conv2");
        mod.collect(out, prefix + ".mod");
        if (has_skip) skip.collect(out, prefix + ".skip");
    }
};

/// Image -> semantic code: strided convolutions down to 4x4, then a linear projection.
template <typename Scalar>
struct SemanticEncoder
{
    int groups = 8;
    Conv2d<Scalar> stem;
    std::vector<Conv2d<Scalar>> downs;
    Linear<Scalar> head;

    SemanticEncoder() = default;
    SemanticEncoder(const DiffAEConfig& cfg, std::mt19937_64& rng) : groups(cfg.groups)
    {
        const auto& ch = cfg.encoder_channels;
        stem = Conv2d<Scalar>(cfg.image_channels, ch[0], 3, 1, rng);
        int size = cfg.image_size;
        for (std::size_t i = 1; i < ch.size(); ++i) {
            downs.emplace_back(ch[i - 1], ch[i], 3, 2, rng);
            size /= 2;
        }
        head = Linear<Scalar>(ch.back() * size * size, cfg.code_dim, rng);
    }

    Var<Scalar> operator()(const Var<Scalar>& x) const
    {
        Var<Scalar> h = stem(x);
        for (const auto& d : downs) h = d(silu(group_norm(h, groups)));
        return head(flatten(silu(group_norm(h, groups))));
    }

    void collect(ParameterList<Scalar>& out, const std::string& prefix)
    {
        stem.collect(out, prefix + ".stem");
        for (std::size_t i = 0; i < downs.size(); ++i) downs[i].collect(out, prefix + ".down" + std::to_string(i));
        head.collect(out, prefix + ".head");
    }
};

/**
 * U-shaped noise predictor eps(x_t, t, z). One residual block per level on the way
 * down, a middle block, and one block per level on the way up fed with the skip.
 * The conditioning vector is SiLU(W_z z) + MLP(sinusoid(t)).
 */
template <typename Scalar>
struct Denoiser
{
    int time_dim = 64;
    int groups = 8;
    Linear<Scalar> time1, time2, code_proj;
    Conv2d<Scalar> stem, out;
    std::vector<ResBlock<Scalar>> down_blocks, up_blocks;
    std::vector<Conv2d<Scalar>> downsamplers;
    ResBlock<Scalar> mid;

    Denoiser() = default;
    Denoiser(const DiffAEConfig& cfg, std::mt19937_64& rng) : time_dim(cfg.time_dim), groups(cfg.groups)
    {
        const auto& ch = cfg.channels;
        const int cond = 2 * cfg.time_dim;
        time1 = Linear<Scalar>(cfg.time_dim, cond, rng);
        time2 = Linear<Scalar>(cond, cond, rng);
        code_proj = Linear<Scalar>(cfg.code_dim, cond, rng);
        stem = Conv2d<Scalar>(cfg.image_channels, ch[0], 3, 1, rng);
        for (std::size_t i = 0; i < ch.size(); ++i) {
            down_blocks.emplace_back(ch[i], ch[i], cond, groups, rng);
            if (i + 1 < ch.size()) downsamplers.emplace_back(ch[i], ch[i + 1], 3, 2, rng);
        }
        mid = ResBlock<Scalar>(ch.back(), ch.back(), cond, groups, rng);
        for (std::size_t i = ch.size(); i-- > 0;) {
            const int from = (i + 1 < ch.size()) ? ch[i + 1] : ch[i];
            up_blocks.emplace_back(from + ch[i], ch[i], cond, groups, rng);
        }
        out = Conv2d<Scalar>(ch[0], cfg.image_channels, 3, 1, rng, Scalar(0.1));
    }

    Var<Scalar> conditioning(const std::vector<int>& steps, const Var<Scalar>& z) const
    {
        const auto temb = Var<Scalar>::constant(timestep_embedding<Scalar>(steps, time_dim));
        return time2(silu(time1(temb))) + silu(code_proj(z));
    }

    Var<Scalar> operator()(const Var<Scalar>& x, const std::vector<int>& steps, const Var<Scalar>& z) const
    {
        if (int(steps.size()) != x.shape().n || z.shape().n != x.shape().n) {
            throw ShapeError("Denoiser: batch mismatch between image, steps and code");
        }
        const Var<Scalar> cond = conditioning(steps, z);
        Var<Scalar> h = stem(x);
        std::vector<Var<Scalar>> skips;
        for (std::size_t i = 0; i < down_blocks.size(); ++i) {
            h = down_blocks[i](h, cond);
            skips.push_back(h);
            if (i < downsamplers.size()) h = downsamplers[i](h);
        }
        h = mid(h, cond);
        for (std::size_t j = 0; j < up_blocks.size(); ++j) {
            const std::size_t level = down_blocks.size() - 1 - j;
            if (j > 0) h = upsample2(h);
            h = up_blocks[j](concat_channels(h, skips[level]), cond);
        }
        return out(silu(group_norm(h, groups)));
    }

    /// Single shared step for the whole batch.
    Var<Scalar> operator()(const Var<Scalar>& x, int t, const Var<Scalar>& z) const
    {
        return (*this)(x, std::vector<int>(std::size_t(x.shape().n), t), z);
    }

    void collect(ParameterList<Scalar>& list, const std::string& prefix)
    {
        time1.collect(list, prefix + ".time1");
        time2.collect(list, prefix + ".time2");
        code_proj.collect(list, prefix + ".code");
        stem.collect(list, prefix + ".stem");
        for (std::size_t i = 0; i < down_blocks.size(); ++i) down_blocks[i].collect(list, prefix + ".down" + std::to_string(i));
        for (std::size_t i = 0; i < downsamplers.size(); ++i) downsamplers[i].collect(list, prefix + ".pool" + std::to_string(i));
        mid.collect(list, prefix + ".mid");
        for (std::size_t i = 0; i < up_blocks.size(); ++i) up_blocks[i].collect(list, prefix + ".up" + std::to_string(i));
        out.collect(list, prefix + ".out");
    }
};

/// Semantic encoder, conditional denoiser and schedule.
template <typename Scalar>
class DiffAEModel
{
public:
    DiffAEModel() = default;
    DiffAEModel(const DiffAEConfig& cfg, std::uint64_t seed) : cfg_(cfg)
    {
        validate(cfg_);
        schedule_ = make_schedule(cfg.t_max, cfg.beta_min, cfg.beta_max);
        std::mt19937_64 rng(seed);
        encoder_ = SemanticEncoder<Scalar>(cfg, rng);
        denoiser_ = Denoiser<Scalar>(cfg, rng);
    }

    const DiffAEConfig& config() const { return cfg_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    int code_dim() const { return cfg_.code_dim; }
    SemanticEncoder<Scalar>& encoder() { return encoder_; }
    const SemanticEncoder<Scalar>& encoder() const { return encoder_; }
    Denoiser<Scalar>& denoiser() { return denoiser_; }
    const Denoiser<Scalar>& denoiser() const { return denoiser_; }

    ParameterList<Scalar> encoder_parameters()
    {
        ParameterList<Scalar> l;
        encoder_.collect(l, "encoder");
        return l;
    }
    ParameterList<Scalar> denoiser_parameters()
    {
        ParameterList<Scalar> l;
        denoiser_.collect(l, "denoiser");
        return l;
    }
    ParameterList<Scalar> parameters()
    {
        auto l = encoder_parameters();
        auto d = denoiser_parameters();
        l.insert(l.end(), d.begin(), d.end());
        return l;
    }

    /// Tensor-level denoiser for sampling without graph recording.
    auto tensor_denoiser() const
    {
        return [this](const Tensor<Scalar>& x, int t, const Tensor<Scalar>& z) {
            NoGradGuard guard;
            return denoiser_(Var<Scalar>::constant(x), t, Var<Scalar>::constant(z)).value();
        };
    }

    /// Graph-recording denoiser for backpropagation through sampling.
    auto var_denoiser() const
    {
        return [this](const Var<Scalar>& x, int t, const Var<Scalar>& z) { return denoiser_(x, t, z); };
    }

    void save(Archive& a, const std::string& prefix = "diffae/")
    {
        a.put_int(prefix + "format", 1);
        a.put_string(prefix + "config", to_json_string(cfg_));
        a.put_int(prefix + "code_dim", cfg_.code_dim);
        a.put(prefix + "schedule/betas", Eigen::MatrixXd(schedule_.betas().matrix()));
        save_parameters(a, parameters(), prefix);
    }

    static DiffAEModel load(const Archive& a, const std::string& prefix = "diffae/")
    {
        if (a.get_int(prefix + "format") != 1) throw DataError("unsupported DiffAE checkpoint format");
        DiffAEModel m(diffae_config_from_json_string(a.get_string(prefix + "config")), 0);
        m.schedule_ = NoiseSchedule(a.get_matrix(prefix + "schedule/betas").col(0).array());
        load_parameters(a, m.parameters(), prefix);
        return m;
    }

private:
    DiffAEConfig cfg_;
    NoiseSchedule schedule_;
    SemanticEncoder<Scalar> encoder_;
    Denoiser<Scalar> denoiser_;
};

/// Deterministic semantic codes (n, d, 1, 1) for a batch of images.
template <typename Scalar>
Tensor<Scalar> encode_semantic(const DiffAEModel<Scalar>& model, const Tensor<Scalar>& x0)
{
    const auto& c = model.config();
    if (x0.shape().c != c.image_channels || x0.shape().h != c.image_size || x0.shape().w != c.image_size) {
        throw ShapeError("encode_semantic: image " + x0.shape().str());
    }
    NoGradGuard guard;
    return model.encoder()(Var<Scalar>::constant(x0)).value();
}

/// Per-sample forward noising with individual steps.
template <typename Scalar>
Tensor<Scalar> q_sample_batch(const Tensor<Scalar>& x0, const std::vector<int>& steps, const Tensor<Scalar>& eps,
                              const NoiseSchedule& sched)
{
    require_same_shape(x0.shape(), eps.shape(), "q_sample_batch");
    if (int(steps.size()) != x0.shape().n) throw ShapeError("q_sample_batch: one step per sample required");
    Tensor<Scalar> out(x0.shape());
    for (int n = 0; n < x0.shape().n; ++n) {
        if (steps[n] < 1 || steps[n] > sched.total_steps()) throw std::out_of_range("q_sample_batch: step");
        const double a = sched.alpha(steps[n]);
        out.sample(n) = Scalar(std::sqrt(a)) * x0.sample(n) + Scalar(std::sqrt(1 - a)) * eps.sample(n);
    }
    return out;
}

/// Mean absolute (or squared) error between predicted and true noise.
template <typename Scalar>
Var<Scalar> noise_loss(const Var<Scalar>& pred, const Tensor<Scalar>& eps, bool squared)
{
    const auto diff = pred - Var<Scalar>::constant(eps);
    return mean(squared ? square(diff) : abs(diff));
}

/// Noise-prediction objective: mean |eps_theta(x_t, t, E(x0)) - eps| (or squared when configured).
template <typename Scalar>
Var<Scalar> diffae_loss(const DiffAEModel<Scalar>& model, const Tensor<Scalar>& x0, const std::vector<int>& steps,
                        const Tensor<Scalar>& eps)
{
    const auto x_t = Var<Scalar>::constant(q_sample_batch(x0, steps, eps, model.schedule()));
    const auto z = model.encoder()(Var<Scalar>::constant(x0));
    return noise_loss(model.denoiser()(x_t, steps, z), eps, model.config().mse);
}

/**
 * Trains encoder and denoiser jointly with uniformly drawn steps. `batch(rng, n)`
 * returns n images; `log(step, loss)` is called every step. Non-finite loss throws.
 */
template <typename Scalar>
void train_diffae(DiffAEModel<Scalar>& model, const DiffAETrainOptions& opt,
                  const std::function<Tensor<Scalar>(std::mt19937_64&, int)>& batch,
                  const std::function<void(int, double)>& log = {}, AdamW<Scalar>* resume = nullptr, int first_step = 0)
{
    AdamW<Scalar> own(model.parameters(), AdamWConfig{opt.lr, 0.9, 0.999, 1e-8, opt.weight_decay});
    AdamW<Scalar>& adam = resume ? *resume : own;
    for (int step = first_step; step < opt.steps; ++step) {
        std::mt19937_64 step_rng(opt.seed * 1000003ull + std::uint64_t(step));
        const Tensor<Scalar> x0 = batch(step_rng, opt.batch_size);
        std::uniform_int_distribution<int> tdist(1, model.schedule().total_steps());
        std::normal_distribution<double> n01;
        std::vector<int> steps(std::size_t(x0.shape().n));
        for (auto& t : steps) t = tdist(step_rng);
        Tensor<Scalar> eps(x0.shape());
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = Scalar(n01(step_rng));

        adam.set_lr(opt.lr * std::min(1.0, double(step + 1) / std::max(1, opt.warmup)));
        adam.zero_grad();
        const auto loss = diffae_loss(model, x0, steps, eps);
        if (!std::isfinite(double(loss.item()))) {
            throw NumericError("train_diffae: non-finite loss at step " + std::to_string(step));
        }
        loss.backward();
        adam.clip_grad_norm(opt.grad_clip);
        adam.step();
        if (log) log(step, double(loss.item()));
    }
}

} // namespace reenact
