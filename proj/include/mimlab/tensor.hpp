#pragma once

#include <Eigen/Dense>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mimlab/error.hpp"

namespace mimlab {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

/// Dense row-major n-dimensional array.
///
/// The last axis is the "column" axis: every tensor can be viewed as a
/// rows() x cols() matrix where cols() is the last extent and rows() the
/// product of the leading ones. Rank-0 and rank-1 tensors view as a single
/// row.
template <typename Scalar>
class Tensor {
 public:
  using Matrix = RowMatrix<Scalar>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector<Scalar>::Zero(shape_size(shape_))) {
    check_extents();
  }

  Tensor(Shape shape, Vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_size(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_string(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), Scalar(1)); }

  static Tensor scalar(Scalar value) { return full({}, value); }

  static Tensor from(Shape shape, std::initializer_list<Scalar> values) {
    Vector<Scalar> data(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar v : values) data[i++] = v;
    return Tensor(std::move(shape), std::move(data));
  }

  static Tensor from_matrix(const Matrix& m) {
    Tensor t({m.rows(), m.cols()});
    t.matrix() = m;
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0 && shape_.empty(); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

  Index cols() const { return shape_.empty() ? 1 : shape_.back(); }
  Index rows() const { return cols() == 0 ? 0 : size() / cols(); }

  Vector<Scalar>& data() { return data_; }
  const Vector<Scalar>& data() const { return data_; }

  MatrixMap matrix() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data_.data(), rows(), cols()); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& at(Index r, Index c) { return data_[r * cols() + c]; }
  Scalar at(Index r, Index c) const { return data_[r * cols() + c]; }

  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  bool all_finite() const { return data_.allFinite(); }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw ShapeError("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
    return Tensor(std::move(shape), data_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (Index e : shape_)
      if (e < 0) throw ShapeError("negative extent in shape " + shape_string(shape_));
  }

  Shape shape_;
  Vector<Scalar> data_;
};

}  // namespace mimlab
