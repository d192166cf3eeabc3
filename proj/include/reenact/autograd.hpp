#pragma once

#include "reenact/tensor.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

namespace reenact {

namespace detail {
inline bool& grad_mode_flag()
{
    thread_local bool enabled = true;
    return enabled;
}
} // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording for the lifetime of the guard (inference, frozen passes).
class NoGradGuard
{
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename Scalar>
struct Node
{
    using Array = typename Tensor<Scalar>::Array;

    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor<Scalar>& grad_buffer()
    {
        if (grad.empty()) grad = Tensor<Scalar>::zeros(value.shape());
        return grad;
    }

    template <typename Expr>
    void accumulate(const Expr& g)
    {
        grad_buffer().array() += g;
    }
};

/**
 * Handle to a node of the reverse-mode graph. Copies share the node.
 *
 * Graph edges are only recorded while grad mode is enabled and at least one input
 * requires a gradient, so the same model code serves training and inference.
 */
template <typename Scalar>
class Var
{
public:
    using NodeT = Node<Scalar>;
    using Array = typename Tensor<Scalar>::Array;

    Var() = default;
    explicit Var(std::shared_ptr<NodeT> node) : node_(std::move(node)) {}

    static Var constant(Tensor<Scalar> value)
    {
        auto node = std::make_shared<NodeT>();
        node->value = std::move(value);
        return Var(std::move(node));
    }

    /// Leaf that collects a gradient (used by tests and input-gradient checks).
    static Var leaf(Tensor<Scalar> value)
    {
        auto node = std::make_shared<NodeT>();
        node->value = std::move(value);
        node->requires_grad = true;
        return Var(std::move(node));
    }

    const Tensor<Scalar>& value() const { return node_->value; }
    const Tensor<Scalar>& grad() const { return node_->grad_buffer(); }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }
    const std::shared_ptr<NodeT>& node() const { return node_; }
    bool valid() const { return node_ != nullptr; }

    Scalar item() const
    {
        assert(node_->value.size() == 1);
        return node_->value[0];
    }

    /// Runs reverse accumulation from this node, seeding d(self)/d(self) = 1.
    void backward() const
    {
        if (!node_->requires_grad) return;
        std::vector<NodeT*> order;
        std::unordered_set<NodeT*> seen;
        std::vector<std::pair<NodeT*, size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                NodeT* p = n->parents[next++].get();
                if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        node_->grad_buffer().array() += Scalar(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            NodeT* n = *it;
            if (n->backward && !n->grad.empty()) n->backward(*n);
        }
    }

private:
    std::shared_ptr<NodeT> node_;
};

/// Builds a result node; the backward closure is kept only if some parent needs it.
template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, std::vector<Var<Scalar>> parents,
                        std::function<void(Node<Scalar>&)> backward)
{
    auto node = std::make_shared<Node<Scalar>>();
    node->value = std::move(value);
    if (grad_enabled()) {
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (any) {
            node->requires_grad = true;
            for (auto& p : parents) node->parents.push_back(p.node());
            node->backward = std::move(backward);
        }
    }
    return Var<Scalar>(std::move(node));
}

/// Trainable tensor with a persistent leaf node. Copying produces an independent parameter.
template <typename Scalar>
class Parameter
{
public:
    Parameter() : node_(std::make_shared<Node<Scalar>>()) {}
    explicit Parameter(Tensor<Scalar> init) : Parameter()
    {
        node_->value = std::move(init);
        node_->requires_grad = true;
    }
    Parameter(const Parameter& other) : Parameter()
    {
        node_->value = other.node_->value;
        node_->requires_grad = other.node_->requires_grad;
    }
    Parameter& operator=(const Parameter& other)
    {
        if (this != &other) {
            node_ = std::make_shared<Node<Scalar>>();
            node_->value = other.node_->value;
            node_->requires_grad = other.node_->requires_grad;
        }
        return *this;
    }
    Parameter(Parameter&&) noexcept = default;
    Parameter& operator=(Parameter&&) noexcept = default;

    Var<Scalar> var() const { return Var<Scalar>(node_); }
    Tensor<Scalar>& value() { return node_->value; }
    const Tensor<Scalar>& value() const { return node_->value; }
    Tensor<Scalar>& grad() { return node_->grad_buffer(); }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad = Tensor<Scalar>(); }
    bool trainable() const { return node_->requires_grad; }
    void set_trainable(bool on) { node_->requires_grad = on; }

private:
    std::shared_ptr<Node<Scalar>> node_;
};

template <typename Scalar>
struct NamedParameter
{
    std::string name;
    Parameter<Scalar>* param;
};

template <typename Scalar>
using ParameterList = std::vector<NamedParameter<Scalar>>;

template <typename Scalar>
void set_trainable(const ParameterList<Scalar>& params, bool on)
{
    for (const auto& p : params) p.param->set_trainable(on);
}

template <typename Scalar>
void zero_grad(const ParameterList<Scalar>& params)
{
    for (const auto& p : params) p.param->zero_grad();
}

using VarF = Var<float>;
using VarD = Var<double>;

// ---------------------------------------------------------------------------
// Elementwise and shape operations.

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b)
{
    require_same_shape(a.shape(), b.shape(), "add");
    auto na = a.node(), nb = b.node();
    return make_result<Scalar>(a.value() + b.value(), {a, b}, [na, nb](Node<Scalar>& self) {
        if (na->requires_grad) na->accumulate(self.grad.array());
        if (nb->requires_grad) nb->accumulate(self.grad.array());
    });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b)
{
    require_same_shape(a.shape(), b.shape(), "sub");
    auto na = a.node(), nb = b.node();
    return make_result<Scalar>(a.value() - b.value(), {a, b}, [na, nb](Node<Scalar>& self) {
        if (na->requires_grad) na->accumulate(self.grad.array());
        if (nb->requires_grad) nb->accumulate(-self.grad.array());
    });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b)
{
    require_same_shape(a.shape(), b.shape(), "mul");
    auto na = a.node(), nb = b.node();
    Tensor<Scalar> out(a.shape(), a.value().array() * b.value().array());
    return make_result<Scalar>(std::move(out), {a, b}, [na, nb](Node<Scalar>& self) {
        if (na->requires_grad) na->accumulate(self.grad.array() * nb->value.array());
        if (nb->requires_grad) nb->accumulate(self.grad.array() * na->value.array());
    });
}

/// sa * a + sb * b with scalar coefficients.
template <typename Scalar>
Var<Scalar> axpby(Scalar sa, const Var<Scalar>& a, Scalar sb, const Var<Scalar>& b)
{
    require_same_shape(a.shape(), b.shape(), "axpby");
    auto na = a.node(), nb = b.node();
    Tensor<Scalar> out(a.shape(), sa * a.value().array() + sb * b.value().array());
    return make_result<Scalar>(std::move(out), {a, b}, [na, nb, sa, sb](Node<Scalar>& self) {
        if (na->requires_grad) na->accumulate(sa * self.grad.array());
        if (nb->requires_grad) nb->accumulate(sb * self.grad.array());
    });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s)
{
    auto na = a.node();
    return make_result<Scalar>(s * a.value(), {a}, [na, s](Node<Scalar>& self) {
        na->accumulate(s * self.grad.array());
    });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s)
{
    auto na = a.node();
    Tensor<Scalar> out(a.shape(), a.value().array() + s);
    return make_result<Scalar>(std::move(out), {a}, [na](Node<Scalar>& self) { na->accumulate(self.grad.array()); });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Scalar s, const Var<Scalar>& a) { return scale(a, s); }

template <typename Scalar>
Var<Scalar> silu(const Var<Scalar>& a)
{
    auto na = a.node();
    const auto& x = a.value().array();
    typename Tensor<Scalar>::Array sig = (Scalar(1) + (-x).exp()).inverse();
    Tensor<Scalar> out(a.shape(), x * sig);
    return make_result<Scalar>(std::move(out), {a}, [na, sig](Node<Scalar>& self) {
        const auto& xv = na->value.array();
        na->accumulate(self.grad.array() * sig * (Scalar(1) + xv * (Scalar(1) - sig)));
    });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a)
{
    auto na = a.node();
    Tensor<Scalar> out(a.shape(), a.value().array().max(Scalar(0)));
    return make_result<Scalar>(std::move(out), {a}, [na](Node<Scalar>& self) {
        na->accumulate((na->value.array() > Scalar(0)).select(self.grad.array(), Scalar(0)));
    });
}

template <typename Scalar>
Var<Scalar> abs(const Var<Scalar>& a)
{
    auto na = a.node();
    Tensor<Scalar> out(a.shape(), a.value().array().abs());
    return make_result<Scalar>(std::move(out), {a}, [na](Node<Scalar>& self) {
        const auto& x = na->value.array();
        na->accumulate(self.grad.array() * ((x > Scalar(0)).template cast<Scalar>() - (x < Scalar(0)).template cast<Scalar>()));
    });
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& a)
{
    auto na = a.node();
    Tensor<Scalar> out(a.shape(), a.value().array().square());
    return make_result<Scalar>(std::move(out), {a}, [na](Node<Scalar>& self) {
        na->accumulate(Scalar(2) * self.grad.array() * na->value.array());
    });
}

/// Elementwise square root; the derivative at exactly zero is taken as zero.
template <typename Scalar>
Var<Scalar> sqrt(const Var<Scalar>& a)
{
    auto na = a.node();
    typename Tensor<Scalar>::Array root = a.value().array().max(Scalar(0)).sqrt();
    Tensor<Scalar> out(a.shape(), root);
    return make_result<Scalar>(std::move(out), {a}, [na, root](Node<Scalar>& self) {
        na->accumulate((root > Scalar(0)).select(self.grad.array() / (Scalar(2) * root), Scalar(0)));
    });
}

template <typename Scalar>
Var<Scalar> clamp(const Var<Scalar>& a, Scalar lo, Scalar hi)
{
    auto na = a.node();
    Tensor<Scalar> out(a.shape(), a.value().array().max(lo).min(hi));
    return make_result<Scalar>(std::move(out), {a}, [na, lo, hi](Node<Scalar>& self) {
        const auto& x = na->value.array();
        na->accumulate(((x >= lo) && (x <= hi)).select(self.grad.array(), Scalar(0)));
    });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape)
{
    auto na = a.node();
    return make_result<Scalar>(a.value().reshaped(shape), {a}, [na](Node<Scalar>& self) {
        na->accumulate(self.grad.array());
    });
}

/// Flattens each sample to a feature vector (n, c*h*w, 1, 1).
template <typename Scalar>
Var<Scalar> flatten(const Var<Scalar>& a)
{
    return reshape(a, vector_shape(a.shape().n, int(a.shape().sample_size())));
}

template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b)
{
    const Shape sa = a.shape(), sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
        throw ShapeError("concat_channels: " + sa.str() + " vs " + sb.str());
    }
    Shape so{sa.n, sa.c + sb.c, sa.h, sa.w};
    Tensor<Scalar> out(so);
    const auto ka = sa.sample_size(), kb = sb.sample_size();
    for (int n = 0; n < sa.n; ++n) {
        out.sample(n).head(ka) = a.value().sample(n);
        out.sample(n).tail(kb) = b.value().sample(n);
    }
    auto na = a.node(), nb = b.node();
    return make_result<Scalar>(std::move(out), {a, b}, [na, nb, ka, kb](Node<Scalar>& self) {
        const int N = self.value.shape().n;
        if (na->requires_grad) {
            auto& g = na->grad_buffer();
            for (int n = 0; n < N; ++n) g.sample(n) += self.grad.sample(n).head(ka);
        }
        if (nb->requires_grad) {
            auto& g = nb->grad_buffer();
            for (int n = 0; n < N; ++n) g.sample(n) += self.grad.sample(n).tail(kb);
        }
    });
}

/// Channels [begin, begin + count) of every sample.
template <typename Scalar>
Var<Scalar> slice_channels(const Var<Scalar>& a, int begin, int count)
{
    const Shape s = a.shape();
    if (begin < 0 || begin + count > s.c) throw ShapeError("slice_channels: out of range");
    Shape so{s.n, count, s.h, s.w};
    Tensor<Scalar> out(so);
    const Eigen::Index off = Eigen::Index(begin) * s.pixels(), len = so.sample_size();
    for (int n = 0; n < s.n; ++n) out.sample(n) = a.value().sample(n).segment(off, len);
    auto na = a.node();
    return make_result<Scalar>(std::move(out), {a}, [na, off, len](Node<Scalar>& self) {
        auto& g = na->grad_buffer();
        for (int n = 0; n < self.value.shape().n; ++n) g.sample(n).segment(off, len) += self.grad.sample(n);
    });
}

template <typename Scalar>
Var<Scalar> slice_batch(const Var<Scalar>& a, int first, int count)
{
    auto na = a.node();
    const Eigen::Index off = first * a.shape().sample_size();
    return make_result<Scalar>(a.value().slice_batch(first, count), {a}, [na, off](Node<Scalar>& self) {
        na->grad_buffer().array().segment(off, self.grad.size()) += self.grad.array();
    });
}

template <typename Scalar>
Var<Scalar> concat_batch(const Var<Scalar>& a, const Var<Scalar>& b)
{
    auto na = a.node(), nb = b.node();
    const Eigen::Index ka = a.value().size();
    return make_result<Scalar>(concat_batch(a.value(), b.value()), {a, b}, [na, nb, ka](Node<Scalar>& self) {
        if (na->requires_grad) na->accumulate(self.grad.array().head(ka));
        if (nb->requires_grad) nb->accumulate(self.grad.array().tail(self.grad.size() - ka));
    });
}

// ---------------------------------------------------------------------------
// Reductions.

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a)
{
    auto na = a.node();
    const Scalar inv = Scalar(1) / Scalar(a.value().size());
    Tensor<Scalar> out(Shape{}, Tensor<Scalar>::Array::Constant(1, a.value().array().sum() * inv));
    return make_result<Scalar>(std::move(out), {a}, [na, inv](Node<Scalar>& self) {
        na->grad_buffer().array() += self.grad[0] * inv;
    });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a)
{
    auto na = a.node();
    Tensor<Scalar> out(Shape{}, Tensor<Scalar>::Array::Constant(1, a.value().array().sum()));
    return make_result<Scalar>(std::move(out), {a}, [na](Node<Scalar>& self) {
        na->grad_buffer().array() += self.grad[0];
    });
}

/// Mean over each sample's elements: (n, ...) -> (n, 1, 1, 1).
template <typename Scalar>
Var<Scalar> sample_mean(const Var<Scalar>& a)
{
    const Shape s = a.shape();
    Tensor<Scalar> out(vector_shape(s.n, 1));
    const Scalar inv = Scalar(1) / Scalar(s.sample_size());
    for (int n = 0; n < s.n; ++n) out[n] = a.value().sample(n).sum() * inv;
    auto na = a.node();
    return make_result<Scalar>(std::move(out), {a}, [na, inv](Node<Scalar>& self) {
        auto& g = na->grad_buffer();
        for (int n = 0; n < self.value.shape().n; ++n) g.sample(n) += self.grad[n] * inv;
    });
}

/// Per-sample cosine similarity of feature vectors: (n, d) x (n, d) -> (n, 1).
template <typename Scalar>
Var<Scalar> cosine_similarity(const Var<Scalar>& a, const Var<Scalar>& b)
{
    require_same_shape(a.shape(), b.shape(), "cosine_similarity");
    const int N = a.shape().n;
    Tensor<Scalar> out(vector_shape(N, 1));
    typename Tensor<Scalar>::Array na_(N), nb_(N);
    for (int n = 0; n < N; ++n) {
        const Scalar aa = a.value().sample(n).matrix().squaredNorm(), bb = b.value().sample(n).matrix().squaredNorm();
        na_[n] = std::sqrt(aa);
        nb_[n] = std::sqrt(bb);
        if (na_[n] == Scalar(0) || nb_[n] == Scalar(0)) {
            throw std::domain_error("cosine_similarity: zero-norm embedding");
        }
        out[n] = a.value().sample(n).matrix().dot(b.value().sample(n).matrix()) / std::sqrt(aa * bb);
    }
    auto pa = a.node(), pb = b.node();
    Tensor<Scalar> cos = out;
    return make_result<Scalar>(std::move(out), {a, b}, [pa, pb, na_, nb_, cos](Node<Scalar>& self) {
        for (int n = 0; n < cos.shape().n; ++n) {
            const auto av = pa->value.sample(n);
            const auto bv = pb->value.sample(n);
            const Scalar g = self.grad[n];
            if (pa->requires_grad)
                pa->grad_buffer().sample(n) += g * (bv / (na_[n] * nb_[n]) - cos[n] * av / (na_[n] * na_[n]));
            if (pb->requires_grad)
                pb->grad_buffer().sample(n) += g * (av / (na_[n] * nb_[n]) - cos[n] * bv / (nb_[n] * nb_[n]));
        }
    });
}

} // namespace reenact
