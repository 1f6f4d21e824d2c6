// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "seqformer/autodiff.hpp"
#include "seqformer/tensor.hpp"

namespace seqformer {

enum class MaskMode { none, causal };

/// One attention head: queries and keys project D -> K, values mix D -> D.
struct HeadParams {
  Tensor u_q;  // K x D
  Tensor u_k;  // K x D
  Tensor v;    // D x D
};

struct MHSAParams {
  std::vector<HeadParams> heads;
  bool scale = true;  // divide logits by sqrt(K)

  std::size_t key_dim() const { return heads.empty() ? 0 : heads.front().u_q.rows(); }
  std::size_t model_dim() const { return heads.empty() ? 0 : heads.front().v.rows(); }
};

/// Conventional per-head parameterisation with explicit value and output
/// projections.
struct QkvHead {
  Tensor u_q;  // K x D
  Tensor u_k;  // K x D
  Tensor u_v;  // K x D
  Tensor u_o;  // D x K
};

/// Throws a config error unless every head agrees on K and D.
void validate(const MHSAParams& params);

/// Head whose queries and keys share one projection (symmetric similarity).
HeadParams shared_projection_head(const Tensor& u, const Tensor& v);

/// Raw logits L[n', n] = k_{n'} . q_n (optionally / sqrt(K)), masked
/// entries set to ad::kMaskedLogit.
Tensor attention_logits(const Tensor& x, const Tensor& u_q, const Tensor& u_k, MaskMode mask,
                        bool scale = true);

/// A[n', n] = softmax over n' of k_{n'} . q_n. Columns sum to one; with a
/// causal mask A[n', n] == 0 for n' > n.
Tensor attention_weights(const Tensor& x, const Tensor& u_q, const Tensor& u_k, MaskMode mask,
                         bool scale = true);

/// Y = X A: every output column is an A-weighted average of input columns.
Tensor apply_attention(const Tensor& x, const Tensor& a);

/// Y = sum_h V_h X A_h.
Tensor mhsa_forward(const Tensor& x, const MHSAParams& params, MaskMode mask);

/// Per-head attention matrices A_h in head order.
std::vector<Tensor> attention_maps(const Tensor& x, const MHSAParams& params, MaskMode mask);

/// Folds value and output projections into V_h = U_o U_v.
MHSAParams qkv_equivalence_form(std::span<const QkvHead> heads, bool scale = true);

/// Values-then-output-projection evaluation: sum_h U_o (U_v X) A_h.
Tensor qkv_forward(const Tensor& x, std::span<const QkvHead> heads, MaskMode mask, bool scale = true);

/// Number of multiply-adds in one mhsa_forward call, dominated by H D N^2.
std::size_t mhsa_cost(std::size_t d, std::size_t k, std::size_t h, std::size_t n);

namespace ad {

struct HeadVars {
  Var u_q, u_k, v;
};

Var attention_weights(Var x, Var u_q, Var u_k, MaskMode mask, bool scale);
Var mhsa_forward(Var x, std::span<const HeadVars> heads, MaskMode mask, bool scale);

}  // namespace ad

}  // namespace seqformer
