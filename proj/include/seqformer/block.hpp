// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string_view>

#include "seqformer/attention.hpp"
#include "seqformer/autodiff.hpp"
#include "seqformer/tensor.hpp"

namespace seqformer {

enum class Activation { gelu, relu };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

struct NormParams {
  Tensor gamma;  // D x 1
  Tensor beta;   // D x 1
  double epsilon = 1e-5;
};

struct MLPParams {
  Tensor w1;  // hidden x D
  Tensor b1;  // hidden x 1
  Tensor w2;  // D x hidden
  Tensor b2;  // D x 1
  Activation activation = Activation::gelu;
};

/// Pre-norm block: Y = X + MHSA(norm1(X)); out = Y + MLP(norm2(Y)).
struct BlockParams {
  NormParams norm1;
  MHSAParams mhsa;
  NormParams norm2;
  MLPParams mlp;
};

struct BlockShape {
  std::size_t d = 0;
  std::size_t k = 0;
  std::size_t heads = 0;
  std::size_t hidden = 0;
  Activation activation = Activation::gelu;
  double epsilon = 1e-5;
  bool scale = true;
};

NormParams make_norm(std::size_t d, double epsilon);
/// Weights ~ N(0, 1/fan_in), biases zero, gamma = 1, beta = 0.
BlockParams init_block(const BlockShape& shape, Rng& rng);
/// Block whose attention values and MLP weights are all zero.
BlockParams zero_residual_block(const BlockShape& shape, Rng& rng);

double activate(Activation a, double x);

/// Per-token standardisation followed by the learned scale and shift.
Tensor token_norm(const Tensor& x, const NormParams& p);
/// Column-wise W2 act(W1 x + b1) + b2.
Tensor mlp_forward(const Tensor& x, const MLPParams& p);
Tensor block_forward(const Tensor& x, const BlockParams& p, MaskMode mask);

namespace ad {

struct NormVars {
  Var gamma, beta;
  double epsilon;
};

struct MLPVars {
  Var w1, b1, w2, b2;
  Activation activation;
};

struct BlockVars {
  NormVars norm1;
  std::vector<HeadVars> heads;
  bool scale;
  NormVars norm2;
  MLPVars mlp;
};

/// Registers every tensor of `p` on the tape under `prefix`.
BlockVars register_block(Tape& tape, const std::string& prefix, const BlockParams& p);
Var mlp_forward(Var x, const MLPVars& p);
Var block_forward(Var x, const BlockVars& p, MaskMode mask);

}  // namespace ad

}  // namespace seqformer
