#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "bisimlab/common.hpp"

namespace bisimlab::ad {

using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, [](Index a, Index b) { return a * b; });
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? ", " : "") + std::to_string(shape[i]);
  return s + "]";
}

/// Dense row-major n-dimensional array. A rank-0 tensor holds one value.
template <typename Scalar>
struct Tensor {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Shape shape;
  Vec data;
  bool requires_grad = false;

  Tensor() = default;

  explicit Tensor(Shape s, Scalar fill = Scalar(0)) : shape(std::move(s)) {
    check_shape();
    data = Vec::Constant(numel(shape), fill);
  }

  Tensor(Shape s, Vec values) : shape(std::move(s)), data(std::move(values)) {
    check_shape();
    if (data.size() != numel(shape))
      throw InvalidInput("Tensor: " + std::to_string(data.size()) + " values for shape " + shape_str(shape));
  }

  static Tensor scalar(Scalar v) { return Tensor(Shape{}, Vec::Constant(1, v)); }

  Index rank() const { return static_cast<Index>(shape.size()); }
  Index size() const { return data.size(); }
  Index dim(Index axis) const { return shape[static_cast<std::size_t>(axis < 0 ? axis + rank() : axis)]; }

  Scalar& operator[](Index i) { return data(i); }
  Scalar operator[](Index i) const { return data(i); }

  Scalar item() const {
    if (data.size() != 1) throw InvalidInput("Tensor::item on shape " + shape_str(shape));
    return data(0);
  }

  /// View as a rows x cols row-major matrix; rows * cols must equal size().
  Eigen::Map<RowMat> matrix(Index rows, Index cols) { return {data.data(), rows, cols}; }
  Eigen::Map<const RowMat> matrix(Index rows, Index cols) const { return {data.data(), rows, cols}; }

  /// Leading dimensions collapsed into rows, last dimension as columns.
  Eigen::Map<const RowMat> as_rows() const {
    const Index cols = rank() == 0 ? 1 : shape.back();
    return matrix(cols == 0 ? 0 : size() / cols, cols);
  }

  Tensor reshaped(Shape s) const {
    if (numel(s) != size())
      throw InvalidInput("reshape: cannot view " + shape_str(shape) + " as " + shape_str(s));
    return Tensor(std::move(s), data);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape, data.template cast<Other>().eval());
    out.requires_grad = requires_grad;
    return out;
  }

 private:
  void check_shape() const {
    for (Index d : shape)
      if (d <= 0) throw InvalidInput("Tensor: non-positive dimension in " + shape_str(shape));
  }
};

}  // namespace bisimlab::ad
