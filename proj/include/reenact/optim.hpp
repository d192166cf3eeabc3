#pragma once

#include "reenact/autograd.hpp"
#include "reenact/io.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace reenact {

struct AdamWConfig
{
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/**
 * Adam with decoupled weight decay:
 *   p <- p (1 - lr wd)
 *   m <- b1 m + (1 - b1) g,   v <- b2 v + (1 - b2) g^2
 *   p <- p - lr m_hat / (sqrt(v_hat) + eps),  m_hat = m / (1 - b1^t), v_hat = v / (1 - b2^t)
 * Parameters without a gradient in a step are left untouched.
 */
template <typename Scalar>
class AdamW
{
public:
    AdamW(ParameterList<Scalar> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg)
    {
        for (const auto& p : params_) {
            m_.push_back(Tensor<Scalar>::zeros(p.param->value().shape()));
            v_.push_back(Tensor<Scalar>::zeros(p.param->value().shape()));
        }
    }

    void step()
    {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        const Scalar b1 = Scalar(cfg_.beta1), b2 = Scalar(cfg_.beta2);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Parameter<Scalar>& p = *params_[i].param;
            if (!p.trainable() || !p.has_grad()) continue;
            const auto& g = p.grad().array();
            auto& m = m_[i].array();
            auto& v = v_[i].array();
            m = b1 * m + (Scalar(1) - b1) * g;
            v = b2 * v + (Scalar(1) - b2) * g.square();
            auto& w = p.value().array();
            w *= Scalar(1.0 - cfg_.lr * cfg_.weight_decay);
            w -= Scalar(cfg_.lr) * (m / Scalar(c1)) / ((v / Scalar(c2)).sqrt() + Scalar(cfg_.eps));
        }
    }

    void zero_grad() { reenact::zero_grad(params_); }

    /// Global L2 norm over all gradients; rescales them when it exceeds max_norm (0 disables).
    double clip_grad_norm(double max_norm)
    {
        double sq = 0;
        for (const auto& p : params_) {
            if (p.param->has_grad()) sq += p.param->grad().array().template cast<double>().square().sum();
        }
        const double norm = std::sqrt(sq);
        if (max_norm > 0 && norm > max_norm) {
            const Scalar s = Scalar(max_norm / norm);
            for (const auto& p : params_) {
                if (p.param->has_grad()) p.param->grad().array() *= s;
            }
        }
        return norm;
    }

    long long steps() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    const ParameterList<Scalar>& params() const { return params_; }

    void save(Archive& a, const std::string& prefix) const
    {
        a.put_int(prefix + "step", t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            a.put(prefix + "m/" + params_[i].name, m_[i]);
            a.put(prefix + "v/" + params_[i].name, v_[i]);
        }
    }

    void load(const Archive& a, const std::string& prefix)
    {
        t_ = a.get_int(prefix + "step");
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i] = read(a, prefix + "m/" + params_[i].name, m_[i].shape());
            v_[i] = read(a, prefix + "v/" + params_[i].name, v_[i].shape());
        }
    }

private:
    static Tensor<Scalar> read(const Archive& a, const std::string& name, const Shape& expect)
    {
        Tensor<Scalar> t;
        if constexpr (std::is_same_v<Scalar, float>) {
            t = a.get_tensor_f(name);
        } else {
            t = a.get_tensor_d(name);
        }
        if (!(t.shape() == expect)) throw DataError("optimizer state " + name + " has shape " + t.shape().str());
        return t;
    }

    ParameterList<Scalar> params_;
    AdamWConfig cfg_;
    std::vector<Tensor<Scalar>> m_, v_;
    long long t_ = 0;
};

/// Stores parameter values under their names.
template <typename Scalar>
void save_parameters(Archive& a, const ParameterList<Scalar>& params, const std::string& prefix = "")
{
    for (const auto& p : params) a.put(prefix + p.name, p.param->value());
}

template <typename Scalar>
void load_parameters(const Archive& a, const ParameterList<Scalar>& params, const std::string& prefix = "")
{
    for (const auto& p : params) {
        Tensor<Scalar> t;
        if constexpr (std::is_same_v<Scalar, float>) {
            t = a.get_tensor_f(prefix + p.name);
        } else {
            t = a.get_tensor_d(prefix + p.name);
        }
        if (!(t.shape() == p.param->value().shape())) {
            throw DataError("parameter " + prefix + p.name + ": checkpoint shape " + t.shape().str() + " vs model " +
                            p.param->value().shape().str());
        }
        p.param->value() = std::move(t);
    }
}

/// FNV-1a over parameter bytes; used to assert that frozen modules stay unchanged.
template <typename Scalar>
std::uint64_t parameter_checksum(const ParameterList<Scalar>& params)
{
    std::uint64_t h = 14695981039346656037ull;
    for (const auto& p : params) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p.param->value().data());
        const std::size_t n = std::size_t(p.param->value().size()) * sizeof(Scalar);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    }
    return h;
}

} // namespace reenact
