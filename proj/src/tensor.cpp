// SPDX-License-Identifier: Apache-2.0
#include "seqformer/tensor.hpp"

#include <cmath>
#include <limits>

#include "seqformer/error.hpp"

namespace seqformer {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::shape: return "shape error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::config: return "config error";
    case ErrorKind::contract: return "contract error";
    case ErrorKind::state: return "state error";
    case ErrorKind::index: return "index error";
    case ErrorKind::range: return "range error";
    case ErrorKind::format: return "format error";
    case ErrorKind::corruption: return "corruption error";
    case ErrorKind::input: return "input error";
    case ErrorKind::oracle: return "oracle error";
    case ErrorKind::io: return "io error";
  }
  return "error";
}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    fail(ErrorKind::shape, "tensor data length " + std::to_string(data_.size()) +
                               " does not match " + std::to_string(rows) + "x" +
                               std::to_string(cols));
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) fail(ErrorKind::shape, "ragged rows in Tensor::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::column(std::span<const double> values) {
  return Tensor(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::randn(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(rows, cols);
  for (double& v : t.data_) v = dist(rng);
  return t;
}

std::vector<double> Tensor::col(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Tensor::set_col(std::size_t c, std::span<const double> values) {
  if (values.size() != rows_ || c >= cols_) fail(ErrorKind::shape, "set_col out of shape");
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
}

std::string Tensor::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorKind::shape, std::string(op) + ": shape mismatch " + a.shape_string() +
                               " vs " + b.shape_string());
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorKind::shape, "matmul: inner dimensions disagree, " + a.shape_string() +
                               " times " + b.shape_string());
  }
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  Tensor out(p, r);
  // i-k-j order: each out(i, j) accumulates k = 0..q-1 in sequence.
  for (std::size_t i = 0; i < p; ++i) {
    double* orow = out.row(i).data();
    const double* arow = a.row(i).data();
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = arow[k];
      const double* brow = b.row(k).data();
      for (std::size_t j = 0; j < r; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  Tensor out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

namespace {

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Tensor out(a.rows(), a.cols());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  return zip(a, b, "hadamard", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = a;
  for (double& v : out.data()) v *= factor;
  return out;
}

Tensor add_column(const Tensor& a, const Tensor& bias) {
  if (bias.cols() != 1 || bias.rows() != a.rows()) {
    fail(ErrorKind::shape, "add_column: bias " + bias.shape_string() + " does not fit " +
                               a.shape_string());
  }
  Tensor out = a;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (double& v : out.row(r)) v += bias(r, 0);
  return out;
}

Tensor column_softmax(const Tensor& logits) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  // Row sweeps keep memory access contiguous; every column still sums its
  // entries in increasing row order.
  std::vector<double> mx(cols, -std::numeric_limits<double>::infinity());
  std::vector<char> has_nan(cols, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = logits.row(r).data();
    for (std::size_t c = 0; c < cols; ++c) {
      if (std::isnan(in[c])) has_nan[c] = 1;
      mx[c] = std::max(mx[c], in[c]);
    }
  }
  for (std::size_t c = 0; c < cols; ++c) {
    if (has_nan[c]) fail(ErrorKind::numeric, "column_softmax: NaN logit in column " + std::to_string(c));
    if (!std::isfinite(mx[c])) fail(ErrorKind::numeric, "column_softmax: non-finite column " + std::to_string(c));
  }
  Tensor out(rows, cols);
  std::vector<double> total(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = logits.row(r).data();
    double* o = out.row(r).data();
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx[c]);
      total[c] += o[c];
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out.row(r).data();
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total[c];
  }
  return out;
}

ColumnStats column_mean_var(const Tensor& x) {
  const std::size_t d = x.rows(), n = x.cols();
  ColumnStats stats{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  if (d == 0) fail(ErrorKind::shape, "column_mean_var: tensor has no rows");
  for (std::size_t c = 0; c < n; ++c) {
    double sum = 0.0;
    for (std::size_t r = 0; r < d; ++r) sum += x(r, c);
    const double mean = sum / static_cast<double>(d);
    double sq = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      const double dev = x(r, c) - mean;
      sq += dev * dev;
    }
    stats.means[c] = mean;
    stats.vars[c] = sq / static_cast<double>(d);
  }
  return stats;
}

Tensor concat_cols(const Tensor& left, const Tensor& right) {
  if (left.rows() != right.rows()) {
    fail(ErrorKind::shape, "concat_cols: row counts differ, " + left.shape_string() + " and " +
                               right.shape_string());
  }
  Tensor out(left.rows(), left.cols() + right.cols());
  for (std::size_t r = 0; r < left.rows(); ++r) {
    auto o = out.row(r);
    std::copy(left.row(r).begin(), left.row(r).end(), o.begin());
    std::copy(right.row(r).begin(), right.row(r).end(), o.begin() + left.cols());
  }
  return out;
}

Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
  if (top.cols() != bottom.cols()) {
    fail(ErrorKind::shape, "concat_rows: column counts differ, " + top.shape_string() + " and " +
                               bottom.shape_string());
  }
  std::vector<double> data(top.data().begin(), top.data().end());
  data.insert(data.end(), bottom.data().begin(), bottom.data().end());
  return Tensor(top.rows() + bottom.rows(), top.cols(), std::move(data));
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) {
    fail(ErrorKind::shape, "slice_cols: [" + std::to_string(begin) + ", " +
                               std::to_string(begin + count) + ") outside " + a.shape_string());
  }
  Tensor out(a.rows(), count);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = a(r, begin + c);
  return out;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) {
    fail(ErrorKind::shape, "slice_rows: [" + std::to_string(begin) + ", " +
                               std::to_string(begin + count) + ") outside " + a.shape_string());
  }
  auto first = a.data().begin() + static_cast<std::ptrdiff_t>(begin * a.cols());
  return Tensor(count, a.cols(),
                std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * a.cols())));
}

Tensor sum_columns(const Tensor& a) {
  Tensor out(a.rows(), 1);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double s = 0.0;
    for (double v : a.row(r)) s += v;
    out(r, 0) = s;
  }
  return out;
}

Tensor permute_cols(const Tensor& a, std::span<const std::size_t> perm) {
  if (perm.size() != a.cols()) fail(ErrorKind::shape, "permute_cols: permutation length mismatch");
  Tensor out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = a(r, perm[c]);
  return out;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

bool all_finite(const Tensor& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace seqformer
