#pragma once

#include <Eigen/Core>

#include <array>
#include <cassert>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace reenact {

/// Dense NCHW shape. Vectors are stored as (n, d, 1, 1).
struct Shape
{
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    Eigen::Index size() const { return Eigen::Index(n) * c * h * w; }
    Eigen::Index sample_size() const { return Eigen::Index(c) * h * w; }
    int pixels() const { return h * w; }

    bool operator==(const Shape&) const = default;

    std::string str() const
    {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

inline Shape vector_shape(int n, int d) { return Shape{n, d, 1, 1}; }

class ShapeError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite loss or gradient; the CLI maps it to the numeric failure category.
class NumericError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what)
{
    if (!(a == b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
    }
}

/**
 * Batch of images or feature maps in NCHW order, backed by a flat Eigen array.
 *
 * A single sample viewed through plane() is a column-major (H*W x C) matrix, which
 * is the layout the convolution GEMMs consume directly.
 */
template <typename Scalar>
class Tensor
{
public:
    using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using PlaneMap = Eigen::Map<Matrix>;
    using ConstPlaneMap = Eigen::Map<const Matrix>;

    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(shape), data_(Array::Zero(shape.size())) {}
    Tensor(Shape shape, Array data) : shape_(shape), data_(std::move(data))
    {
        if (data_.size() != shape_.size()) {
            throw ShapeError("Tensor: data size does not match shape " + shape_.str());
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(shape); }
    static Tensor constant(Shape shape, Scalar value) { return Tensor(shape, Array::Constant(shape.size(), value)); }

    const Shape& shape() const { return shape_; }
    Eigen::Index size() const { return data_.size(); }
    bool empty() const { return data_.size() == 0; }

    Array& array() { return data_; }
    const Array& array() const { return data_; }
    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }

    Scalar& operator[](Eigen::Index i) { return data_[i]; }
    Scalar operator[](Eigen::Index i) const { return data_[i]; }

    Scalar& at(int n, int c, int y, int x)
    {
        return data_[((Eigen::Index(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
    }
    Scalar at(int n, int c, int y, int x) const
    {
        return data_[((Eigen::Index(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
    }

    /// Sample n as an (H*W x C) column-major matrix.
    PlaneMap plane(int n) { return PlaneMap(data() + n * shape_.sample_size(), shape_.pixels(), shape_.c); }
    ConstPlaneMap plane(int n) const
    {
        return ConstPlaneMap(data() + n * shape_.sample_size(), shape_.pixels(), shape_.c);
    }

    /// (C*H*W x N) view, i.e. one column per sample. For vectors this is (D x N).
    PlaneMap columns() { return PlaneMap(data(), shape_.sample_size(), shape_.n); }
    ConstPlaneMap columns() const { return ConstPlaneMap(data(), shape_.sample_size(), shape_.n); }

    Eigen::Map<Array> sample(int n) { return Eigen::Map<Array>(data() + n * shape_.sample_size(), shape_.sample_size()); }
    Eigen::Map<const Array> sample(int n) const
    {
        return Eigen::Map<const Array>(data() + n * shape_.sample_size(), shape_.sample_size());
    }

    Tensor reshaped(Shape shape) const
    {
        if (shape.size() != shape_.size()) {
            throw ShapeError("Tensor::reshaped: " + shape_.str() + " -> " + shape.str());
        }
        return Tensor(shape, data_);
    }

    /// Copies samples [first, first + count).
    Tensor slice_batch(int first, int count) const
    {
        assert(first >= 0 && first + count <= shape_.n);
        Shape s = shape_;
        s.n = count;
        return Tensor(s, data_.segment(first * shape_.sample_size(), count * shape_.sample_size()));
    }

    template <typename Other>
    Tensor<Other> cast() const
    {
        return Tensor<Other>(shape_, data_.template cast<Other>());
    }

    Tensor& operator+=(const Tensor& o)
    {
        require_same_shape(shape_, o.shape_, "Tensor::+=");
        data_ += o.data_;
        return *this;
    }

private:
    Shape shape_{0, 0, 0, 0};
    Array data_;
};

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b)
{
    require_same_shape(a.shape(), b.shape(), "Tensor::+");
    return Tensor<Scalar>(a.shape(), a.array() + b.array());
}

template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b)
{
    require_same_shape(a.shape(), b.shape(), "Tensor::-");
    return Tensor<Scalar>(a.shape(), a.array() - b.array());
}

template <typename Scalar>
Tensor<Scalar> operator*(Scalar s, const Tensor<Scalar>& a)
{
    return Tensor<Scalar>(a.shape(), s * a.array());
}

template <typename Scalar>
Tensor<Scalar> concat_batch(const Tensor<Scalar>& a, const Tensor<Scalar>& b)
{
    if (a.empty()) return b;
    Shape s = a.shape();
    Shape sb = b.shape();
    sb.n = s.n;
    require_same_shape(s, sb, "concat_batch");
    s.n = a.shape().n + b.shape().n;
    typename Tensor<Scalar>::Array data(s.size());
    data << a.array(), b.array();
    return Tensor<Scalar>(s, std::move(data));
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

} // namespace reenact
