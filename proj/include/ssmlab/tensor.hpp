#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssmlab {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

/// Dense row-major tensor over a flat Eigen array. All numerics in the
/// project run on TensorT<double>; the template keeps complex storage
/// available for the spectral paths.
template <typename Scalar>
class TensorT {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  TensorT() = default;

  explicit TensorT(Shape shape) : shape_(std::move(shape)) {
    data_ = Storage::Zero(shape_numel(shape_));
  }

  TensorT(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_to_string(shape_));
    }
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

  static TensorT full(Shape shape, Scalar v) {
    TensorT t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static TensorT scalar(Scalar v) { return TensorT({1}, Storage::Constant(1, v)); }

  static TensorT from(std::initializer_list<Scalar> values, Shape shape) {
    Storage d(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar v : values) d[i++] = v;
    return TensorT(std::move(shape), std::move(d));
  }

  static TensorT vector(std::initializer_list<Scalar> values) {
    return from(values, {static_cast<Index>(values.size())});
  }

  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Index size() const { return data_.size(); }
  const Shape& shape() const { return shape_; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& at(Index i) { return data_[i]; }
  Scalar at(Index i) const { return data_[i]; }
  Scalar& at(Index i, Index j) { return data_[i * shape_[1] + j]; }
  Scalar at(Index i, Index j) const { return data_[i * shape_[1] + j]; }
  Scalar& at(Index i, Index j, Index k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
  Scalar at(Index i, Index j, Index k) const { return data_[(i * shape_[1] + j) * shape_[2] + k]; }

  using MatrixMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap =
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  /// 2D matrix view of the flat data (row-major). rows*cols must equal size().
  MatrixMap as_matrix(Index rows, Index cols) {
    if (rows * cols != size())
      throw std::invalid_argument("as_matrix(" + std::to_string(rows) + "," + std::to_string(cols) +
                                  ") on tensor of shape " + shape_to_string(shape_));
    return MatrixMap(data(), rows, cols);
  }
  ConstMatrixMap as_matrix(Index rows, Index cols) const {
    if (rows * cols != size())
      throw std::invalid_argument("as_matrix(" + std::to_string(rows) + "," + std::to_string(cols) +
                                  ") on tensor of shape " + shape_to_string(shape_));
    return ConstMatrixMap(data(), rows, cols);
  }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (Index i = 0; i < data_.size(); ++i)
      if (!std::isfinite(std::abs(data_[i]))) return false;
    return true;
  }

 private:
  Shape shape_;
  Storage data_;
};

using Tensor = TensorT<double>;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                                " vs " + shape_to_string(b.shape()));
  }
}

inline void require_rank(const Tensor& t, Index rank, const char* op) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_to_string(t.shape()));
  }
}

inline void require_finite(const Tensor& t, const char* context) {
  if (!t.all_finite()) {
    throw std::runtime_error(std::string(context) + ": non-finite values");
  }
}

}  // namespace ssmlab
