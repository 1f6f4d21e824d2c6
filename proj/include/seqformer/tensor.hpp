// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace seqformer {

using Rng = std::mt19937_64;

/// Dense row-major matrix of doubles. Sequences are stored features-down,
/// positions-across: a D x N tensor holds one token per column.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);
  static Tensor column(std::span<const double> values);
  static Tensor randn(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double> col(std::size_t c) const;
  void set_col(std::size_t c, std::span<const double> values);

  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct ColumnStats {
  std::vector<double> means;
  std::vector<double> vars;
};

// Sums over the contracted index run in ascending order so results are
// reproducible bit-for-bit.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor hadamard(const Tensor& a, const Tensor& b);
/// Adds an R x 1 column to every column of an R x C tensor.
Tensor add_column(const Tensor& a, const Tensor& bias);

/// Softmax down each column, stabilised by subtracting the column max.
Tensor column_softmax(const Tensor& logits);
/// Population mean and variance of every column.
ColumnStats column_mean_var(const Tensor& x);

Tensor concat_cols(const Tensor& left, const Tensor& right);
Tensor concat_rows(const Tensor& top, const Tensor& bottom);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
/// Sums the columns of an R x N tensor into an R x 1 tensor.
Tensor sum_columns(const Tensor& a);
Tensor permute_cols(const Tensor& a, std::span<const std::size_t> perm);

double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& a);
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace seqformer
