// SPDX-License-Identifier: Apache-2.0
#include "seqformer/block.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "seqformer/error.hpp"

namespace seqformer {

std::string_view to_string(Activation a) { return a == Activation::gelu ? "gelu" : "relu"; }

Activation parse_activation(std::string_view name) {
  if (name == "gelu") return Activation::gelu;
  if (name == "relu") return Activation::relu;
  fail(ErrorKind::config, "unknown activation '" + std::string(name) + "'");
}

double activate(Activation a, double x) {
  if (a == Activation::relu) return x > 0.0 ? x : 0.0;
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

NormParams make_norm(std::size_t d, double epsilon) {
  if (!(epsilon > 0.0)) fail(ErrorKind::config, "token norm epsilon must be positive");
  return NormParams{Tensor(d, 1, 1.0), Tensor(d, 1, 0.0), epsilon};
}

BlockParams init_block(const BlockShape& s, Rng& rng) {
  if (s.d == 0 || s.k == 0 || s.heads == 0 || s.hidden == 0) {
    fail(ErrorKind::config, "block dimensions must be positive");
  }
  BlockParams p;
  p.norm1 = make_norm(s.d, s.epsilon);
  p.norm2 = make_norm(s.d, s.epsilon);
  p.mhsa.scale = s.scale;
  const double d_std = 1.0 / std::sqrt(static_cast<double>(s.d));
  for (std::size_t h = 0; h < s.heads; ++h) {
    HeadParams head;
    head.u_q = Tensor::randn(s.k, s.d, d_std, rng);
    head.u_k = Tensor::randn(s.k, s.d, d_std, rng);
    head.v = Tensor::randn(s.d, s.d, d_std, rng);
    p.mhsa.heads.push_back(std::move(head));
  }
  p.mlp.w1 = Tensor::randn(s.hidden, s.d, d_std, rng);
  p.mlp.b1 = Tensor(s.hidden, 1);
  p.mlp.w2 = Tensor::randn(s.d, s.hidden, 1.0 / std::sqrt(static_cast<double>(s.hidden)), rng);
  p.mlp.b2 = Tensor(s.d, 1);
  p.mlp.activation = s.activation;
  return p;
}

BlockParams zero_residual_block(const BlockShape& s, Rng& rng) {
  BlockParams p = init_block(s, rng);
  for (HeadParams& h : p.mhsa.heads) h.v = Tensor(s.d, s.d);
  p.mlp.w2 = Tensor(s.d, s.hidden);
  return p;
}

Tensor token_norm(const Tensor& x, const NormParams& p) {
  const std::size_t d = x.rows(), n = x.cols();
  if (d == 0) fail(ErrorKind::shape, "token_norm needs at least one feature");
  if (p.gamma.rows() != d || p.beta.rows() != d || p.gamma.cols() != 1 || p.beta.cols() != 1) {
    fail(ErrorKind::shape, "token_norm: gamma/beta must be " + std::to_string(d) + "x1");
  }
  const ColumnStats stats = column_mean_var(x);
  Tensor out(d, n);
  for (std::size_t c = 0; c < n; ++c) {
    const double inv_std = 1.0 / std::sqrt(stats.vars[c] + p.epsilon);
    for (std::size_t r = 0; r < d; ++r) {
      const double xhat = (x(r, c) - stats.means[c]) * inv_std;
      out(r, c) = p.gamma(r, 0) * xhat + p.beta(r, 0);
    }
  }
  return out;
}

Tensor mlp_forward(const Tensor& x, const MLPParams& p) {
  if (p.w1.cols() != x.rows() || p.b1.rows() != p.w1.rows() || p.w2.cols() != p.w1.rows() ||
      p.b2.rows() != p.w2.rows()) {
    fail(ErrorKind::shape, "MLP shapes do not chain: W1 " + p.w1.shape_string() + ", W2 " +
                               p.w2.shape_string() + ", input " + x.shape_string());
  }
  Tensor hidden = add_column(matmul(p.w1, x), p.b1);
  for (double& v : hidden.data()) v = activate(p.activation, v);
  return add_column(matmul(p.w2, hidden), p.b2);
}

Tensor block_forward(const Tensor& x, const BlockParams& p, MaskMode mask) {
  const Tensor y = add(x, mhsa_forward(token_norm(x, p.norm1), p.mhsa, mask));
  return add(y, mlp_forward(token_norm(y, p.norm2), p.mlp));
}

namespace ad {

namespace {

NormVars register_norm(Tape& tape, const std::string& prefix, const NormParams& p) {
  return NormVars{tape.parameter(prefix + ".gamma", p.gamma), tape.parameter(prefix + ".beta", p.beta),
                  p.epsilon};
}

Var apply_norm(Var x, const NormVars& n) { return token_norm(x, n.gamma, n.beta, n.epsilon); }

}  // namespace

BlockVars register_block(Tape& tape, const std::string& prefix, const BlockParams& p) {
  BlockVars v;
  v.norm1 = register_norm(tape, prefix + ".norm1", p.norm1);
  for (std::size_t h = 0; h < p.mhsa.heads.size(); ++h) {
    const std::string hp = prefix + ".head" + std::to_string(h);
    const HeadParams& head = p.mhsa.heads[h];
    v.heads.push_back(HeadVars{tape.parameter(hp + ".u_q", head.u_q), tape.parameter(hp + ".u_k", head.u_k),
                               tape.parameter(hp + ".v", head.v)});
  }
  v.scale = p.mhsa.scale;
  v.norm2 = register_norm(tape, prefix + ".norm2", p.norm2);
  v.mlp = MLPVars{tape.parameter(prefix + ".mlp.w1", p.mlp.w1), tape.parameter(prefix + ".mlp.b1", p.mlp.b1),
                  tape.parameter(prefix + ".mlp.w2", p.mlp.w2), tape.parameter(prefix + ".mlp.b2", p.mlp.b2),
                  p.mlp.activation};
  return v;
}

Var mlp_forward(Var x, const MLPVars& p) {
  Var hidden = add_column(matmul(p.w1, x), p.b1);
  hidden = p.activation == Activation::gelu ? gelu(hidden) : relu(hidden);
  return add_column(matmul(p.w2, hidden), p.b2);
}

Var block_forward(Var x, const BlockVars& p, MaskMode mask) {
  Var y = add(x, mhsa_forward(apply_norm(x, p.norm1), p.heads, mask, p.scale));
  return add(y, mlp_forward(apply_norm(y, p.norm2), p.mlp));
}

}  // namespace ad

}  // namespace seqformer
