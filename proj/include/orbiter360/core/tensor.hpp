// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "orbiter360/core/error.hpp"
#include "orbiter360/core/rng.hpp"

namespace orbiter360 {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index numel(const Shape& s) {
    Index n = 1;
    for (Index d : s) n *= d;
    return n;
}

inline std::string shapeStr(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense n-dimensional array with contiguous row-major storage backed by an
/// Eigen array. Values have copy semantics; views into the flat storage are
/// exposed as Eigen maps so expressions fuse without temporaries.
template <typename Scalar> class Tensor {
  public:
    using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
    using MatrixView = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ConstMatrixView =
        Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ArrayView = Eigen::Map<Storage>;
    using ConstArrayView = Eigen::Map<const Storage>;

    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Storage::Zero(orbiter360::numel(shape_))) {}
    Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
        ORBITER360_CHECK(data_.size() == orbiter360::numel(shape_), "tensor data does not match shape");
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor constant(Shape shape, Scalar x) {
        Tensor t(std::move(shape));
        t.data_.setConstant(x);
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, double mean = 0.0) {
        Tensor t(std::move(shape));
        for (Index i = 0; i < t.numel(); ++i) t.data_[i] = static_cast<Scalar>(rng.normal(mean, stddev));
        return t;
    }

    static Tensor fromList(Shape shape, std::initializer_list<Scalar> vals) {
        Tensor t(std::move(shape));
        ORBITER360_CHECK(static_cast<Index>(vals.size()) == t.numel(), "initializer size mismatch");
        Index i = 0;
        for (Scalar v : vals) t.data_[i++] = v;
        return t;
    }

    const Shape& shape() const { return shape_; }
    Index rank() const { return static_cast<Index>(shape_.size()); }
    Index dim(Index i) const { return shape_[static_cast<std::size_t>(i)]; }
    Index numel() const { return data_.size(); }
    bool empty() const { return data_.size() == 0; }

    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }
    Scalar& operator[](Index i) { return data_[i]; }
    Scalar operator[](Index i) const { return data_[i]; }

    template <typename... Ix> Scalar& at(Ix... ix) { return data_[flatIndex(ix...)]; }
    template <typename... Ix> Scalar at(Ix... ix) const { return data_[flatIndex(ix...)]; }

    ArrayView array() { return ArrayView(data_.data(), data_.size()); }
    ConstArrayView array() const { return ConstArrayView(data_.data(), data_.size()); }

    /// Matrix view over the flat storage. rows*cols must equal numel().
    MatrixView mat(Index rows, Index cols) {
        ORBITER360_CHECK(rows * cols == numel(), "matrix view size mismatch");
        return MatrixView(data_.data(), rows, cols);
    }
    ConstMatrixView mat(Index rows, Index cols) const {
        ORBITER360_CHECK(rows * cols == numel(), "matrix view size mismatch");
        return ConstMatrixView(data_.data(), rows, cols);
    }

    /// View the last dimension as columns and everything before as rows.
    MatrixView rows2d() { return mat(numel() / lastDim(), lastDim()); }
    ConstMatrixView rows2d() const { return mat(numel() / lastDim(), lastDim()); }

    Index lastDim() const { return shape_.empty() ? 1 : shape_.back(); }

    /// Same storage, new shape. numel must be preserved.
    Tensor reshaped(Shape shape) const& {
        ORBITER360_CHECK(orbiter360::numel(shape) == numel(), "reshape changes element count");
        return Tensor(std::move(shape), data_);
    }
    Tensor reshaped(Shape shape) && {
        ORBITER360_CHECK(orbiter360::numel(shape) == numel(), "reshape changes element count");
        return Tensor(std::move(shape), std::move(data_));
    }

    void setZero() { data_.setZero(); }
    void fill(Scalar x) { data_.setConstant(x); }

    bool sameShape(const Tensor& o) const { return shape_ == o.shape_; }

    /// Contiguous block along axis 0: elements [start, start+len) of dim 0.
    Tensor slice0(Index start, Index len) const {
        ORBITER360_CHECK(rank() >= 1 && start >= 0 && start + len <= dim(0), "slice0 out of range");
        Index inner = numel() / dim(0);
        Shape s = shape_;
        s[0] = len;
        Tensor out(std::move(s));
        out.data_ = data_.segment(start * inner, len * inner);
        return out;
    }

    /// Write a block back along axis 0.
    void setSlice0(Index start, const Tensor& block) {
        ORBITER360_CHECK(rank() >= 1 && block.rank() == rank(), "setSlice0 rank mismatch");
        Index inner = numel() / dim(0);
        ORBITER360_CHECK(block.numel() == block.dim(0) * inner, "setSlice0 inner extent mismatch");
        ORBITER360_CHECK(start >= 0 && start + block.dim(0) <= dim(0), "setSlice0 out of range");
        data_.segment(start * inner, block.numel()) = block.data_;
    }

    template <typename U> Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (Index i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

  private:
    template <typename... Ix> Index flatIndex(Ix... ix) const {
        constexpr std::size_t n = sizeof...(Ix);
        ORBITER360_CHECK(n == shape_.size(), "index rank mismatch");
        Index idx[n] = {static_cast<Index>(ix)...};
        Index flat = 0;
        for (std::size_t d = 0; d < n; ++d) flat = flat * shape_[d] + idx[d];
        return flat;
    }

    Shape shape_;
    Storage data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

} // namespace orbiter360
