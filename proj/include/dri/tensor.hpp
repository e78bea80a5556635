#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dri {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
// Storage is aligned so that vectorized reductions take the same summation
// order wherever a tensor lives; otherwise re-evaluating a graph is not
// bit-identical.
using MatrixMap = Eigen::Map<RowMatrix, Eigen::AlignedMax>;
using ConstMatrixMap = Eigen::Map<const RowMatrix, Eigen::AlignedMax>;
using AlignedVector = std::vector<double, Eigen::aligned_allocator<double>>;

// Dense row-major matrix of doubles. Every tensor in the engine is rank 2:
// scalars are 1x1, per-unit vectors are n x 1, and batches are n x features.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor column(std::vector<double> values);
  static Tensor row(std::vector<double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  bool same_shape(const Tensor& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // Value of a 1x1 tensor.
  double item() const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  AlignedVector& storage() { return values_; }
  const AlignedVector& storage() const { return values_; }

  MatrixMap mat() { return MatrixMap(values_.data(), rows_, cols_); }
  ConstMatrixMap mat() const { return ConstMatrixMap(values_.data(), rows_, cols_); }

  bool all_finite() const;
  void fill(double v);

  Tensor transposed() const;
  Tensor column_copy(std::size_t c) const;
  Tensor select_rows(std::span<const std::size_t> indices) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  AlignedVector values_;
};

}  // namespace dri
