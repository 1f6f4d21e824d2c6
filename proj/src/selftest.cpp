// SPDX-License-Identifier: Apache-2.0
#include "seqformer/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "seqformer/attention.hpp"
#include "seqformer/checkpoint.hpp"
#include "seqformer/model.hpp"
#include "seqformer/reference.hpp"

namespace seqformer {

namespace {

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

SelftestResult verdict(std::string name, double measured, double bound) {
  return {std::move(name), measured <= bound, measured, bound};
}

ModelConfig tiny_lm(std::size_t vocab) {
  ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.layers = 2;
  c.vocab_size = vocab;
  c.n_max = 16;
  return c;
}

SelftestResult column_stochastic(Rng& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = pick(rng, 1, 8), n = pick(rng, 1, 12), k = pick(rng, 1, 4);
    const Tensor x = Tensor::randn(d, n, 1.0, rng);
    const Tensor uq = Tensor::randn(k, d, 2.0, rng), uk = Tensor::randn(k, d, 2.0, rng);
    for (MaskMode mask : {MaskMode::none, MaskMode::causal}) {
      const Tensor a = attention_weights(x, uq, uk, mask);
      for (std::size_t c = 0; c < n; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < n; ++r) s += a(r, c);
        worst = std::max(worst, std::abs(s - 1.0));
      }
    }
  }
  return verdict("attention columns sum to one", worst, 1e-12);
}

SelftestResult causal_structure(Rng& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = pick(rng, 1, 6), n = pick(rng, 2, 10);
    const Tensor a = attention_weights(Tensor::randn(d, n, 1.0, rng), Tensor::randn(2, d, 1.0, rng),
                                       Tensor::randn(2, d, 1.0, rng), MaskMode::causal);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < r; ++c) worst = std::max(worst, std::abs(a(r, c)));
  }
  return verdict("causal attention is upper triangular", worst, 0.0);
}

SelftestResult permutation_equivariance(Rng& rng) {
  ModelConfig c = tiny_lm(5);
  c.mask = MaskMode::none;
  c.position = PositionMode::none;
  c.bos = false;
  const ModelParams p = init_model(c, rng);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = pick(rng, 2, 10);
    const Tensor x = Tensor::randn(c.d_model, n, 1.0, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    worst = std::max(worst, max_abs_diff(forward(permute_cols(x, perm), p, c), permute_cols(forward(x, p, c), perm)));
  }
  return verdict("unmasked position-free model is permutation equivariant", worst, 1e-9);
}

SelftestResult incremental_prefix(Rng& rng) {
  const ModelConfig c = tiny_lm(7);
  const ModelParams p = init_model(c, rng);
  const Tensor x = Tensor::randn(c.d_model, 12, 1.0, rng);
  const Tensor full = forward(x, p, c);
  double worst = 0.0;
  for (std::size_t n = 1; n < 12; ++n)
    worst = std::max(worst, max_abs_diff(forward(slice_cols(x, 0, n), p, c), slice_cols(full, 0, n)));
  return verdict("causal prefix outputs are unchanged by later tokens", worst, 1e-9);
}

SelftestResult cached_decoding(Rng& rng) {
  const ModelConfig c = tiny_lm(7);
  const ModelParams p = init_model(c, rng);
  std::vector<std::size_t> ids(10);
  for (auto& id : ids) id = pick(rng, 0, c.vocab_size - 1);
  const Tensor full = lm_logits(lm_input(ids, p, c), p, c);
  KVCache cache = incremental_init(c, p);
  double worst = max_abs_diff(Tensor::column(incremental_begin(cache)), slice_cols(full, 0, 1));
  for (std::size_t n = 0; n < ids.size(); ++n) {
    const Tensor step = Tensor::column(incremental_step(cache, ids[n]));
    worst = std::max(worst, max_abs_diff(step, slice_cols(full, n + 1, 1)));
  }
  const std::vector<std::size_t> prompt{ids[0], ids[1]};
  const Sampler sampler{SamplerKind::temperature, 0.8};
  if (generate(p, c, prompt, 12, sampler, 99, true) != generate(p, c, prompt, 12, sampler, 99, false)) {
    worst = INFINITY;
  }
  return verdict("cached decoding matches full recomputation", worst, 1e-9);
}

SelftestResult single_pass_loss(Rng& rng) {
  const ModelConfig c = tiny_lm(6);
  const ModelParams p = init_model(c, rng);
  std::vector<std::size_t> ids(12);
  for (auto& id : ids) id = pick(rng, 0, c.vocab_size - 1);
  const std::vector<double> steps = lm_step_losses(ids, p, c);
  double worst = 0.0;
  // Prediction j scores ids[j] from the columns before it, whichever way they are fed.
  const LmExample ex = lm_example(ids, c);
  for (std::size_t j = 0; j < ex.targets.size(); ++j) {
    const Tensor prefix = lm_input(std::span(ex.inputs).first(j), p, c);
    const Tensor logits = lm_logits(prefix, p, c);
    const std::vector<double> last = logits.col(logits.cols() - 1);
    const double top = *std::max_element(last.begin(), last.end());
    double z = 0.0;
    for (double v : last) z += std::exp(v - top);
    worst = std::max(worst, std::abs(std::log(z) + top - last[ex.targets[j]] - steps[j]));
  }
  return verdict("single-pass losses match per-prefix evaluation", worst, 1e-9);
}

SelftestResult gradient_check(Rng& rng) {
  ModelConfig c = tiny_lm(11);
  ModelParams p = init_model(c, rng);
  std::vector<std::size_t> ids(5);
  for (auto& id : ids) id = pick(rng, 0, c.vocab_size - 1);
  std::vector<ad::ParamRef> refs;
  for (const ParamSlot& s : parameter_slots(p, c)) refs.push_back({s.name, s.value});
  const auto report = ad::finite_diff_check(
      [&](ad::Tape& tape) { return ad::lm_loss(tape, ad::register_model(tape, p, c), c, ids); }, refs, 1e-5, 1e-6,
      [&] { return reference_lm_loss<long double>(p, c, ids); });
  return verdict("analytic gradients match central differences", report.max_rel_error(), 1e-6);
}

SelftestResult qkv_equivalence(Rng& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = pick(rng, 2, 8), k = pick(rng, 1, d), h = pick(rng, 1, 3), n = pick(rng, 1, 8);
    std::vector<QkvHead> heads;
    for (std::size_t i = 0; i < h; ++i)
      heads.push_back({Tensor::randn(k, d, 1.0, rng), Tensor::randn(k, d, 1.0, rng), Tensor::randn(k, d, 1.0, rng),
                       Tensor::randn(d, k, 1.0, rng)});
    const Tensor x = Tensor::randn(d, n, 1.0, rng);
    worst = std::max(worst, max_abs_diff(mhsa_forward(x, qkv_equivalence_form(heads), MaskMode::none),
                                         qkv_forward(x, heads, MaskMode::none)));
  }
  return verdict("low-rank values match value-then-output projection", worst, 1e-12);
}

SelftestResult concat_equivalence(Rng& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t dc = pick(rng, 1, 5), dp = pick(rng, 1, 5), dout = pick(rng, 1, 6), pd = pick(rng, 1, 6);
    const Tensor v = Tensor::randn(dout, dc + dp, 1.0, rng);
    const Tensor w = Tensor::randn(dc, pd, 1.0, rng);
    const Tensor e = Tensor::randn(dp, 1, 1.0, rng);
    const Tensor patch = Tensor::randn(pd, 1, 1.0, rng);
    const ConcatEquivalence eq = concat_additive_equivalence(v, w, e);
    const Tensor lhs = matmul(v, concat_rows(matmul(w, patch), e));
    worst = std::max(worst, max_abs_diff(lhs, add(matmul(eq.w_prime, patch), eq.e_prime)));
  }
  return verdict("concatenated positions reduce to additive ones", worst, 1e-12);
}

void norm_statistics(Rng& rng, std::vector<SelftestResult>& out) {
  double mean_err = 0.0, var_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = pick(rng, 2, 16), n = pick(rng, 1, 8);
    const Tensor y = token_norm(Tensor::randn(d, n, 3.0, rng), make_norm(d, 1e-15));
    const ColumnStats s = column_mean_var(y);
    for (std::size_t c = 0; c < n; ++c) {
      mean_err = std::max(mean_err, std::abs(s.means[c]));
      var_err = std::max(var_err, std::abs(s.vars[c] - 1.0));
    }
  }
  out.push_back(verdict("token norm output has zero mean", mean_err, 1e-12));
  out.push_back(verdict("token norm output has unit variance", var_err, 1e-9));
}

SelftestResult identity_block(Rng& rng) {
  ModelConfig c = tiny_lm(4);
  ModelParams p = init_model(c, rng);
  zero_residual_branches(p);
  const Tensor x = Tensor::randn(c.d_model, 6, 1.0, rng);
  bool same = true;
  for (const BlockParams& b : p.blocks) same = same && block_forward(x, b, c.mask) == x;
  return verdict("zeroed residual branches give the identity", same ? 0.0 : 1.0, 0.0);
}

SelftestResult checkpoint_round_trip(Rng& rng) {
  const ModelConfig c = tiny_lm(9);
  const ModelParams p = init_model(c, rng);
  const std::string bytes = serialize_checkpoint(c, p);
  const Checkpoint back = deserialize_checkpoint(bytes);
  bool same = serialize_checkpoint(back.config, back.params) == bytes;
  const auto a = parameter_slots(p, c);
  const auto b = parameter_slots(back.params, back.config);
  for (std::size_t i = 0; same && i < a.size(); ++i) same = *a[i].value == *b[i].value;
  return verdict("checkpoint round trip is bit exact", same ? 0.0 : 1.0, 0.0);
}

}  // namespace

std::vector<SelftestResult> run_selftest(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SelftestResult> out;
  out.push_back(column_stochastic(rng));
  out.push_back(causal_structure(rng));
  out.push_back(permutation_equivariance(rng));
  out.push_back(incremental_prefix(rng));
  out.push_back(cached_decoding(rng));
  out.push_back(single_pass_loss(rng));
  out.push_back(gradient_check(rng));
  out.push_back(qkv_equivalence(rng));
  out.push_back(concat_equivalence(rng));
  norm_statistics(rng, out);
  out.push_back(identity_block(rng));
  out.push_back(checkpoint_round_trip(rng));
  return out;
}

}  // namespace seqformer
