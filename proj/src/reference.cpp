// SPDX-License-Identifier: Apache-2.0
#include "seqformer/reference.hpp"

#include <cmath>
#include <vector>

#include "seqformer/error.hpp"

namespace seqformer {

namespace {

template <typename Real>
using Mat = std::vector<std::vector<Real>>;  // [row][col]

template <typename Real>
Mat<Real> zeros(std::size_t rows, std::size_t cols) {
  return Mat<Real>(rows, std::vector<Real>(cols, Real(0)));
}

template <typename Real>
Mat<Real> lift(const Tensor& t) {
  Mat<Real> m = zeros<Real>(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = static_cast<Real>(t(r, c));
  return m;
}

template <typename Real>
Mat<Real> mul(const Tensor& w, const Mat<Real>& x) {
  const std::size_t n = x.empty() ? 0 : x[0].size();
  Mat<Real> out = zeros<Real>(w.rows(), n);
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) {
      Real s = 0;
      for (std::size_t k = 0; k < w.cols(); ++k) s += static_cast<Real>(w(r, k)) * x[k][c];
      out[r][c] = s;
    }
  return out;
}

template <typename Real>
Mat<Real> norm(const Mat<Real>& x, const NormParams& p) {
  const std::size_t d = x.size(), n = x[0].size();
  Mat<Real> out = zeros<Real>(d, n);
  for (std::size_t c = 0; c < n; ++c) {
    Real mean = 0;
    for (std::size_t r = 0; r < d; ++r) mean += x[r][c];
    mean /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t r = 0; r < d; ++r) var += (x[r][c] - mean) * (x[r][c] - mean);
    var /= static_cast<Real>(d);
    const Real sd = std::sqrt(var + static_cast<Real>(p.epsilon));
    for (std::size_t r = 0; r < d; ++r)
      out[r][c] = static_cast<Real>(p.gamma(r, 0)) * (x[r][c] - mean) / sd + static_cast<Real>(p.beta(r, 0));
  }
  return out;
}

template <typename Real>
Real act(Activation a, Real v) {
  if (a == Activation::relu) return v > 0 ? v : Real(0);
  return Real(0.5) * v * (Real(1) + std::erf(v / std::sqrt(Real(2))));
}

template <typename Real>
Mat<Real> block(const Mat<Real>& x, const BlockParams& b, MaskMode mask) {
  const std::size_t d = x.size(), n = x[0].size();
  Mat<Real> y = x;
  const Mat<Real> xn = norm(x, b.norm1);
  for (const HeadParams& h : b.mhsa.heads) {
    const Mat<Real> q = mul(h.u_q, xn);
    const Mat<Real> k = mul(h.u_k, xn);
    const Mat<Real> vx = mul(h.v, xn);
    const Real s = b.mhsa.scale ? Real(1) / std::sqrt(static_cast<Real>(h.u_q.rows())) : Real(1);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t last = mask == MaskMode::causal ? j + 1 : n;
      std::vector<Real> w(last);
      Real top = -INFINITY;
      for (std::size_t i = 0; i < last; ++i) {
        Real dot = 0;
        for (std::size_t kk = 0; kk < q.size(); ++kk) dot += k[kk][i] * q[kk][j];
        w[i] = dot * s;
        if (w[i] > top) top = w[i];
      }
      Real z = 0;
      for (Real& v : w) z += (v = std::exp(v - top));
      for (std::size_t r = 0; r < d; ++r) {
        Real acc = 0;
        for (std::size_t i = 0; i < last; ++i) acc += vx[r][i] * w[i] / z;
        y[r][j] += acc;
      }
    }
  }
  Mat<Real> hid = mul(b.mlp.w1, norm(y, b.norm2));
  for (std::size_t r = 0; r < hid.size(); ++r)
    for (std::size_t c = 0; c < n; ++c) hid[r][c] = act(b.mlp.activation, hid[r][c] + static_cast<Real>(b.mlp.b1(r, 0)));
  const Mat<Real> out = mul(b.mlp.w2, hid);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < n; ++c) y[r][c] += out[r][c] + static_cast<Real>(b.mlp.b2(r, 0));
  return y;
}

template <typename Real>
Mat<Real> run(Mat<Real> content, const ModelParams& p, const ModelConfig& c) {
  const std::size_t n = content[0].size();
  if (n > c.n_max) fail(ErrorKind::range, "sequence longer than n_max");
  Mat<Real> x;
  if (c.position == PositionMode::none) {
    x = std::move(content);
  } else if (c.combine == PositionCombine::additive) {
    x = std::move(content);
    for (std::size_t r = 0; r < x.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) x[r][j] += static_cast<Real>(p.positions.table(r, j));
  } else {
    x = std::move(content);
    for (std::size_t r = 0; r < p.positions.table.rows(); ++r) {
      std::vector<Real> row(n);
      for (std::size_t j = 0; j < n; ++j) row[j] = static_cast<Real>(p.positions.table(r, j));
      x.push_back(std::move(row));
    }
  }
  for (const BlockParams& b : p.blocks) x = block(x, b, c.mask);
  return x;
}

template <typename Real>
Real nll(const std::vector<Real>& logits, std::size_t target) {
  Real top = logits[0];
  for (Real v : logits) top = v > top ? v : top;
  Real z = 0;
  for (Real v : logits) z += std::exp(v - top);
  return std::log(z) + top - logits[target];
}

}  // namespace

template <typename Real>
Real reference_lm_loss(const ModelParams& p, const ModelConfig& c, std::span<const std::size_t> ids) {
  const LmExample ex = lm_example(ids, c);
  const std::size_t rows = p.tokens.table.rows();
  const std::size_t prefix = c.bos ? 1 : 0;
  Mat<Real> content = zeros<Real>(rows, prefix + ex.inputs.size());
  for (std::size_t r = 0; r < rows; ++r) {
    if (c.bos) content[r][0] = static_cast<Real>(p.start(r, 0));
    for (std::size_t j = 0; j < ex.inputs.size(); ++j)
      content[r][prefix + j] = static_cast<Real>(p.tokens.table(r, ex.inputs[j]));
  }
  const Mat<Real> x = run(std::move(content), p, c);
  Real total = 0;
  for (std::size_t j = 0; j < ex.targets.size(); ++j) {
    std::vector<Real> logits(c.vocab_size, Real(0));
    for (std::size_t w = 0; w < c.vocab_size; ++w)
      for (std::size_t r = 0; r < x.size(); ++r) logits[w] += static_cast<Real>(p.lm_head(r, w)) * x[r][j];
    total += nll(logits, ex.targets[j]);
  }
  return total / static_cast<Real>(ex.targets.size());
}

template <typename Real>
Real reference_cls_loss(const ModelParams& p, const ModelConfig& c, const Image& image, std::size_t label) {
  const Mat<Real> patches = mul(p.patches.weight, lift<Real>(patch_matrix(image, c.patch_h, c.patch_w)));
  const bool token = c.head == HeadKind::cls_token;
  Mat<Real> content = patches;
  if (token) {
    for (std::size_t r = 0; r < content.size(); ++r)
      content[r].insert(content[r].begin(), static_cast<Real>(p.start(r, 0)));
  }
  const Mat<Real> x = run(std::move(content), p, c);
  std::vector<Real> h(x.size(), Real(0));
  for (std::size_t r = 0; r < x.size(); ++r) {
    if (token) h[r] = x[r][0];
    else
      for (Real v : x[r]) h[r] += v;
  }
  std::vector<Real> logits(c.classes, Real(0));
  for (std::size_t k = 0; k < c.classes; ++k)
    for (std::size_t r = 0; r < h.size(); ++r) logits[k] += static_cast<Real>(p.classifier(k, r)) * h[r];
  return nll(logits, label);
}

template double reference_lm_loss<double>(const ModelParams&, const ModelConfig&, std::span<const std::size_t>);
template long double reference_lm_loss<long double>(const ModelParams&, const ModelConfig&,
                                                    std::span<const std::size_t>);
template double reference_cls_loss<double>(const ModelParams&, const ModelConfig&, const Image&, std::size_t);
template long double reference_cls_loss<long double>(const ModelParams&, const ModelConfig&, const Image&,
                                                     std::size_t);

}  // namespace seqformer
