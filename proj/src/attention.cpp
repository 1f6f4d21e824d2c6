// SPDX-License-Identifier: Apache-2.0
#include "seqformer/attention.hpp"

#include <cmath>

#include "seqformer/error.hpp"

namespace seqformer {

void validate(const MHSAParams& params) {
  if (params.heads.empty()) fail(ErrorKind::config, "multi-head attention needs at least one head");
  const std::size_t k = params.key_dim();
  const std::size_t d = params.model_dim();
  if (k == 0) fail(ErrorKind::config, "key dimension K must be positive");
  for (std::size_t h = 0; h < params.heads.size(); ++h) {
    const HeadParams& p = params.heads[h];
    if (p.u_q.rows() != k || p.u_k.rows() != k || p.u_q.cols() != d || p.u_k.cols() != d ||
        p.v.rows() != d || p.v.cols() != d) {
      fail(ErrorKind::config, "head " + std::to_string(h) + " shapes disagree: U_q " +
                                  p.u_q.shape_string() + ", U_k " + p.u_k.shape_string() + ", V " +
                                  p.v.shape_string());
    }
  }
}

HeadParams shared_projection_head(const Tensor& u, const Tensor& v) { return HeadParams{u, u, v}; }

Tensor attention_logits(const Tensor& x, const Tensor& u_q, const Tensor& u_k, MaskMode mask,
                        bool scale) {
  if (u_q.rows() == 0 || u_k.rows() == 0) fail(ErrorKind::config, "key dimension K must be positive");
  if (u_q.rows() != u_k.rows()) {
    fail(ErrorKind::shape, "U_q " + u_q.shape_string() + " and U_k " + u_k.shape_string() +
                               " disagree on K");
  }
  const Tensor q = matmul(u_q, x);
  const Tensor k = matmul(u_k, x);
  Tensor logits = matmul(transpose(k), q);
  if (scale) logits = seqformer::scale(logits, 1.0 / std::sqrt(static_cast<double>(u_q.rows())));
  if (mask == MaskMode::causal) {
    for (std::size_t r = 0; r < logits.rows(); ++r)
      for (std::size_t c = 0; c < r; ++c) logits(r, c) = ad::kMaskedLogit;
  }
  return logits;
}

Tensor attention_weights(const Tensor& x, const Tensor& u_q, const Tensor& u_k, MaskMode mask,
                         bool scale) {
  if (x.cols() == 0) fail(ErrorKind::shape, "attention over an empty sequence");
  return column_softmax(attention_logits(x, u_q, u_k, mask, scale));
}

Tensor apply_attention(const Tensor& x, const Tensor& a) {
  if (a.rows() != x.cols() || a.cols() != x.cols()) {
    fail(ErrorKind::shape, "attention matrix " + a.shape_string() + " does not fit input " +
                               x.shape_string());
  }
  return matmul(x, a);
}

Tensor mhsa_forward(const Tensor& x, const MHSAParams& params, MaskMode mask) {
  validate(params);
  if (x.rows() != params.model_dim()) {
    fail(ErrorKind::shape, "input " + x.shape_string() + " does not match model dim " +
                               std::to_string(params.model_dim()));
  }
  Tensor y(x.rows(), x.cols());
  for (const HeadParams& head : params.heads) {
    const Tensor a = attention_weights(x, head.u_q, head.u_k, mask, params.scale);
    y = add(y, matmul(head.v, apply_attention(x, a)));
  }
  return y;
}

std::vector<Tensor> attention_maps(const Tensor& x, const MHSAParams& params, MaskMode mask) {
  validate(params);
  std::vector<Tensor> maps;
  maps.reserve(params.heads.size());
  for (const HeadParams& head : params.heads)
    maps.push_back(attention_weights(x, head.u_q, head.u_k, mask, params.scale));
  return maps;
}

MHSAParams qkv_equivalence_form(std::span<const QkvHead> heads, bool scale) {
  MHSAParams out;
  out.scale = scale;
  for (const QkvHead& h : heads) {
    if (h.u_v.rows() != h.u_o.cols() || h.u_v.cols() != h.u_o.rows()) {
      fail(ErrorKind::shape, "U_o " + h.u_o.shape_string() + " cannot follow U_v " + h.u_v.shape_string());
    }
    out.heads.push_back(HeadParams{h.u_q, h.u_k, matmul(h.u_o, h.u_v)});
  }
  validate(out);
  return out;
}

Tensor qkv_forward(const Tensor& x, std::span<const QkvHead> heads, MaskMode mask, bool scale) {
  if (heads.empty()) fail(ErrorKind::config, "multi-head attention needs at least one head");
  Tensor y(x.rows(), x.cols());
  for (const QkvHead& h : heads) {
    const Tensor a = attention_weights(x, h.u_q, h.u_k, mask, scale);
    const Tensor values = matmul(h.u_v, x);
    y = add(y, matmul(h.u_o, matmul(values, a)));
  }
  return y;
}

std::size_t mhsa_cost(std::size_t d, std::size_t k, std::size_t h, std::size_t n) {
  // projections 2KDN, logits KN^2, X A: DN^2, V (XA): D^2 N
  return h * (2 * k * d * n + k * n * n + d * n * n + d * d * n);
}

namespace ad {

Var attention_weights(Var x, Var u_q, Var u_k, MaskMode mask, bool scale) {
  const std::size_t k = u_q.rows();
  if (k == 0) fail(ErrorKind::config, "key dimension K must be positive");
  Var q = matmul(u_q, x);
  Var keys = matmul(u_k, x);
  Var logits = matmul(transpose(keys), q);
  if (scale) logits = ad::scale(logits, 1.0 / std::sqrt(static_cast<double>(k)));
  if (mask == MaskMode::causal) logits = causal_mask(logits);
  return column_softmax(logits);
}

Var mhsa_forward(Var x, std::span<const HeadVars> heads, MaskMode mask, bool scale) {
  if (heads.empty()) fail(ErrorKind::config, "multi-head attention needs at least one head");
  Var y{};
  for (std::size_t h = 0; h < heads.size(); ++h) {
    Var a = attention_weights(x, heads[h].u_q, heads[h].u_k, mask, scale);
    Var head_out = matmul(heads[h].v, matmul(x, a));
    y = h == 0 ? head_out : add(y, head_out);
  }
  return y;
}

}  // namespace ad

}  // namespace seqformer
