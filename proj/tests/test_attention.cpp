// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracle.hpp"
#include "seqformer/attention.hpp"
#include "support.hpp"

using namespace seqformer;

namespace {

HeadParams random_head(std::size_t d, std::size_t k, Rng& rng) {
  return {Tensor::randn(k, d, 1.0, rng), Tensor::randn(k, d, 1.0, rng), Tensor::randn(d, d, 1.0, rng)};
}

}  // namespace

TEST_CASE("single position attends to itself") {
  Rng rng(1);
  const Tensor a = attention_weights(Tensor::randn(3, 1, 1.0, rng), Tensor::randn(2, 3, 1.0, rng),
                                     Tensor::randn(2, 3, 1.0, rng), MaskMode::none);
  CHECK(a == Tensor(1, 1, 1.0));
}

TEST_CASE("zero query projection gives uniform attention") {
  Rng rng(2);
  const Tensor a = attention_weights(Tensor::randn(3, 5, 1.0, rng), Tensor(2, 3), Tensor::randn(2, 3, 1.0, rng),
                                     MaskMode::none);
  for (double v : a.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("hand-sized instance matches the scalar-loop oracle") {
  const Tensor x = Tensor::from_rows({{1, 0}, {0, 1}});
  const Tensor uq = Tensor::from_rows({{1, 0}});
  const Tensor uk = Tensor::from_rows({{0, 1}});
  const Tensor a = attention_weights(x, uq, uk, MaskMode::none, false);
  const Tensor o = oracle::attention(x, uq, uk, false, false);
  CHECK(max_abs_diff(a, o) < 1e-15);
  // q_1 = 1, q_2 = 0; k_1 = 0, k_2 = 1: column 1 logits (0, 1), column 2 logits (0, 0).
  CHECK(a(0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(1.0))));
  CHECK(a(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("random attention matrices match the oracle, masked and unmasked") {
  Rng rng(3);
  for (int t = 0; t < 30; ++t) {
    const std::size_t d = 1 + rng() % 6, n = 1 + rng() % 7, k = 1 + rng() % 4;
    const Tensor x = Tensor::randn(d, n, 1.0, rng), uq = Tensor::randn(k, d, 1.0, rng),
                 uk = Tensor::randn(k, d, 1.0, rng);
    for (bool causal : {false, true}) {
      const Tensor a = attention_weights(x, uq, uk, causal ? MaskMode::causal : MaskMode::none);
      CHECK(max_abs_diff(a, oracle::attention(x, uq, uk, causal, true)) < 1e-13);
    }
  }
}

TEST_CASE("causal mask with uniform logits renormalises each prefix") {
  const Tensor a = attention_weights(Tensor(2, 3, 1.0), Tensor(1, 2), Tensor(1, 2), MaskMode::causal);
  const Tensor expected = Tensor::from_rows({{1.0, 0.5, 1.0 / 3}, {0.0, 0.5, 1.0 / 3}, {0.0, 0.0, 1.0 / 3}});
  CHECK(max_abs_diff(a, expected) < 1e-16);
}

TEST_CASE("zero key dimension is a config error") {
  CHECK_KIND(attention_weights(Tensor(2, 2), Tensor(0, 2), Tensor(0, 2), MaskMode::none), ErrorKind::config);
}

TEST_CASE("columns sum to one and causal matrices are upper triangular") {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const std::size_t d = 1 + rng() % 8, n = 1 + rng() % 10;
    const Tensor x = Tensor::randn(d, n, 3.0, rng);
    for (MaskMode m : {MaskMode::none, MaskMode::causal}) {
      const Tensor a = attention_weights(x, Tensor::randn(2, d, 1.0, rng), Tensor::randn(2, d, 1.0, rng), m);
      for (std::size_t c = 0; c < n; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < n; ++r) s += a(r, c);
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
      if (m == MaskMode::causal)
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < r; ++c) CHECK(a(r, c) == 0.0);
    }
  }
}

TEST_CASE("apply_attention trivial matrices") {
  Rng rng(5);
  const Tensor x = Tensor::randn(3, 4, 1.0, rng);
  CHECK(apply_attention(x, Tensor::identity(4)) == x);
  const Tensor y = apply_attention(x, Tensor(4, 4, 0.25));
  for (std::size_t r = 0; r < 3; ++r) {
    const double mean = (x(r, 0) + x(r, 1) + x(r, 2) + x(r, 3)) / 4.0;
    for (std::size_t c = 0; c < 4; ++c) CHECK(y(r, c) == doctest::Approx(mean).epsilon(1e-14));
  }
  CHECK_KIND(apply_attention(x, Tensor(3, 3)), ErrorKind::shape);
}

TEST_CASE("Toeplitz attention is a convolution, bitwise") {
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 2 + rng() % 9, d = 1 + rng() % 4;
    std::vector<double> filter(2 * n - 1);
    for (double& f : filter) f = std::normal_distribution<double>(0.0, 1.0)(rng);
    Tensor a(n, n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) a(r, c) = filter[r + n - 1 - c];
    const Tensor x = Tensor::randn(d, n, 1.0, rng);
    CHECK(apply_attention(x, a) == oracle::toeplitz_conv(x, filter));
  }
}

TEST_CASE("mhsa trivial configurations") {
  Rng rng(7);
  const Tensor x = Tensor::randn(3, 4, 1.0, rng);
  MHSAParams one{{HeadParams{Tensor(2, 3), Tensor::randn(2, 3, 1.0, rng), Tensor::identity(3)}}, true};
  const Tensor y = mhsa_forward(x, one, MaskMode::none);
  for (std::size_t r = 0; r < 3; ++r) {
    const double mean = (x(r, 0) + x(r, 1) + x(r, 2) + x(r, 3)) / 4.0;
    for (std::size_t c = 0; c < 4; ++c) CHECK(y(r, c) == doctest::Approx(mean).epsilon(1e-14));
  }

  const HeadParams h1 = random_head(3, 2, rng);
  HeadParams h2 = random_head(3, 2, rng);
  h2.v = Tensor(3, 3);
  const MHSAParams single{{h1}, true};
  const MHSAParams pair{{h1, h2}, true};
  CHECK(mhsa_forward(x, pair, MaskMode::causal) == mhsa_forward(x, single, MaskMode::causal));
}

TEST_CASE("mhsa matches the explicit-sum oracle") {
  Rng rng(8);
  for (int t = 0; t < 10; ++t) {
    const MHSAParams p{{random_head(4, 2, rng), random_head(4, 2, rng)}, true};
    const Tensor x = Tensor::randn(4, 3, 1.0, rng);
    for (bool causal : {false, true})
      CHECK(max_abs_diff(mhsa_forward(x, p, causal ? MaskMode::causal : MaskMode::none), oracle::mhsa(x, p, causal)) <
            1e-12);
  }
}

TEST_CASE("inconsistent head shapes are config errors") {
  Rng rng(9);
  MHSAParams p{{random_head(4, 2, rng), random_head(4, 3, rng)}, true};
  CHECK_KIND(mhsa_forward(Tensor(4, 2), p, MaskMode::none), ErrorKind::config);
  MHSAParams q{{random_head(4, 2, rng), random_head(5, 2, rng)}, true};
  CHECK_KIND(validate(q), ErrorKind::config);
}

TEST_CASE("causal mhsa ignores later positions exactly") {
  Rng rng(10);
  const MHSAParams p{{random_head(4, 2, rng), random_head(4, 2, rng)}, true};
  const Tensor x = Tensor::randn(4, 6, 1.0, rng);
  const Tensor base = mhsa_forward(x, p, MaskMode::causal);
  for (std::size_t j = 0; j < 6; ++j) {
    Tensor bumped = x;
    for (std::size_t r = 0; r < 4; ++r) bumped(r, j) += 0.75;
    const Tensor y = mhsa_forward(bumped, p, MaskMode::causal);
    for (std::size_t i = 0; i < j; ++i) CHECK(y.col(i) == base.col(i));
  }
}

TEST_CASE("unmasked mhsa is permutation equivariant") {
  Rng rng(11);
  const MHSAParams p{{random_head(5, 3, rng), random_head(5, 3, rng)}, true};
  for (int t = 0; t < 20; ++t) {
    const Tensor x = Tensor::randn(5, 7, 1.0, rng);
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    CHECK(max_abs_diff(mhsa_forward(permute_cols(x, perm), p, MaskMode::none),
                       permute_cols(mhsa_forward(x, p, MaskMode::none), perm)) < 1e-9);
  }
}

TEST_CASE("low-rank value construction") {
  Rng rng(12);
  // U_v selects the first K features, U_o writes them back: V is a rank-K projector.
  Tensor uv(2, 4);
  uv(0, 0) = 1.0;
  uv(1, 1) = 1.0;
  const QkvHead proj{Tensor::randn(2, 4, 1.0, rng), Tensor::randn(2, 4, 1.0, rng), uv, transpose(uv)};
  const Tensor v = qkv_equivalence_form(std::span(&proj, 1)).heads[0].v;
  CHECK(matmul(v, v) == v);
  double trace = 0.0;
  for (std::size_t i = 0; i < 4; ++i) trace += v(i, i);
  CHECK(trace == 2.0);

  const Tensor id = Tensor::identity(3);
  const QkvHead full{Tensor::randn(3, 3, 1.0, rng), Tensor::randn(3, 3, 1.0, rng), id, id};
  CHECK(qkv_equivalence_form(std::span(&full, 1)).heads[0].v == id);

  for (int t = 0; t < 10; ++t) {
    std::vector<QkvHead> heads;
    for (int h = 0; h < 2; ++h)
      heads.push_back({Tensor::randn(2, 4, 1.0, rng), Tensor::randn(2, 4, 1.0, rng), Tensor::randn(2, 4, 1.0, rng),
                       Tensor::randn(4, 2, 1.0, rng)});
    const Tensor x = Tensor::randn(4, 5, 1.0, rng);
    CHECK(max_abs_diff(mhsa_forward(x, qkv_equivalence_form(heads), MaskMode::causal),
                       qkv_forward(x, heads, MaskMode::causal)) <= 1e-12);
  }
}

TEST_CASE("scaled logits stay order one as K grows") {
  Rng rng(13);
  const std::size_t d = 64, n = 32;
  for (std::size_t k : {1, 4, 16, 64}) {
    const Tensor x = Tensor::randn(d, n, 1.0, rng);
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    const Tensor logits = attention_logits(x, Tensor::randn(k, d, s, rng), Tensor::randn(k, d, s, rng), MaskMode::none);
    std::vector<double> mags;
    for (double v : logits.data()) mags.push_back(std::abs(v));
    std::nth_element(mags.begin(), mags.begin() + mags.size() / 2, mags.end());
    const double median = mags[mags.size() / 2];
    CHECK_MESSAGE(median >= 0.1, "K=" << k);
    CHECK_MESSAGE(median <= 10.0, "K=" << k);
  }
}

TEST_CASE("shared projection head uses one matrix for queries and keys") {
  Rng rng(14);
  const Tensor u = Tensor::randn(2, 3, 1.0, rng);
  const HeadParams h = shared_projection_head(u, Tensor::identity(3));
  CHECK(h.u_q == u);
  CHECK(h.u_k == u);
  const Tensor logits = attention_logits(Tensor::randn(3, 4, 1.0, rng), h.u_q, h.u_k, MaskMode::none);
  CHECK(max_abs_diff(logits, transpose(logits)) < 1e-15);
}

TEST_CASE("operation count is dominated by the N squared term") {
  const double ratio = static_cast<double>(mhsa_cost(64, 16, 4, 512)) / static_cast<double>(mhsa_cost(64, 16, 4, 256));
  CHECK(ratio > 3.0);
  CHECK(ratio < 4.0);
}
