// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "seqformer/tensor.hpp"

namespace seqformer::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Large negative finite logit used for masked attention entries. exp() of it
/// underflows to exactly zero, and its adjoint stays finite.
inline constexpr double kMaskedLogit = -1e30;

/// Records forward operations in topological order and replays their
/// adjoints in reverse.
class Tape {
 public:
  /// Accumulates `grad` into the gradient slot of node `id`.
  using Accumulate = std::function<void(std::size_t id, const Tensor& grad)>;
  /// Given the output gradient, pushes contributions to the inputs.
  using Adjoint = std::function<void(const Tape& tape, const Tensor& out_grad, const Accumulate& acc)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor value);
  Var parameter(const std::string& name, Tensor value);
  Var record(Tensor value, std::vector<std::size_t> inputs, Adjoint adjoint);

  /// Marks a 1x1 node as the loss. Throws a contract error otherwise.
  void set_loss(Var loss);
  bool has_loss() const noexcept { return loss_id_ != kNoLoss; }
  double loss_value() const;

  /// Runs the reverse sweep from the loss. Returns one gradient per
  /// registered parameter; unused parameters get zeros. Idempotent.
  std::map<std::string, Tensor> backward() const;

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t leaf_count() const noexcept;
  const std::map<std::string, std::size_t>& parameters() const noexcept { return params_; }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    Adjoint adjoint;  // empty for leaves
  };

  static constexpr std::size_t kNoLoss = static_cast<std::size_t>(-1);

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> params_;
  std::size_t loss_id_ = kNoLoss;
};

/// Builds a graph on a fresh tape and returns the scalar loss it produced.
using GraphBuilder = std::function<Var(Tape&)>;

struct Recording {
  double loss = 0.0;
  Tape tape;
};

/// Runs `build` on a new tape and marks its result as the loss. An empty
/// graph or non-scalar result is a contract error.
Recording forward(const GraphBuilder& build);

// Differentiable operations. Shape rules match the plain tensor functions.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double factor);
Var add_column(Var a, Var bias);
Var column_softmax(Var logits);
/// Overwrites logits[r, c] with kMaskedLogit where r > c; zero adjoint there.
Var causal_mask(Var logits);
Var token_norm(Var x, Var gamma, Var beta, double epsilon);
Var gelu(Var a);
Var relu(Var a);
/// Column n of the result is column ids[n] of `table`.
Var gather_columns(Var table, std::span<const std::size_t> ids);
Var concat_cols(Var left, Var right);
Var concat_rows(Var top, Var bottom);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var sum(Var a);
Var sum_columns(Var a);
/// Mean over columns of -log softmax(logits[:, n])[targets[n]].
Var cross_entropy(Var logits, std::span<const std::size_t> targets);

struct ParamGradient {
  std::string name;
  Tensor analytic;
  Tensor numeric;
  double max_rel_error = 0.0;
  std::size_t flagged = 0;  // entries whose relative error exceeds tol
};

struct GradientReport {
  std::vector<ParamGradient> params;
  double tolerance = 0.0;

  bool passed() const;
  double max_rel_error() const;
};

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// A named parameter the checker perturbs in place.
struct ParamRef {
  std::string name;
  Tensor* value;
};

/// Compares tape gradients of `build` against central differences
/// (f(t+h) - f(t-h)) / 2h over every scalar of every parameter.
///
/// `build` must register each ParamRef through Tape::parameter using the
/// current contents of *value. If `numeric_loss` is given it evaluates the
/// loss for the finite differences, typically in extended precision;
/// otherwise the tape forward value is used.
GradientReport finite_diff_check(const GraphBuilder& build, std::span<const ParamRef> params,
                                 double h, double tol,
                                 const std::function<long double()>& numeric_loss = {});

namespace testing {
/// Negative-control hook: when set, the token_norm adjoint drops the
/// mean-correction term so gradient checks must fail.
void set_adjoint_fault(bool enabled);
bool adjoint_fault();
}  // namespace testing

}  // namespace seqformer::ad
