// SPDX-License-Identifier: Apache-2.0
#include "seqformer/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

#include "seqformer/error.hpp"

namespace seqformer::ad {

namespace {

std::atomic<bool> g_adjoint_fault{false};

Tape& tape_of(Var a) {
  if (a.tape == nullptr) fail(ErrorKind::contract, "operation on a detached variable");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) fail(ErrorKind::contract, "operands live on different tapes");
  return tape_of(a);
}

}  // namespace

namespace testing {
void set_adjoint_fault(bool enabled) { g_adjoint_fault.store(enabled); }
bool adjoint_fault() { return g_adjoint_fault.load(); }
}  // namespace testing

const Tensor& Var::value() const {
  if (tape == nullptr) fail(ErrorKind::contract, "value of a detached variable");
  return tape->value(id);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(const std::string& name, Tensor value) {
  if (params_.contains(name)) fail(ErrorKind::contract, "parameter registered twice: " + name);
  Var v = constant(std::move(value));
  params_.emplace(name, v.id);
  return v;
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, Adjoint adjoint) {
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) fail(ErrorKind::contract, "node input refers to a later node");
  }
  nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(adjoint)});
  return Var{this, nodes_.size() - 1};
}

void Tape::set_loss(Var loss) {
  if (loss.tape != this || loss.id >= nodes_.size()) {
    fail(ErrorKind::contract, "loss does not belong to this tape");
  }
  const Tensor& v = nodes_[loss.id].value;
  if (v.rows() != 1 || v.cols() != 1) {
    fail(ErrorKind::contract, "loss must be a scalar, got " + v.shape_string());
  }
  loss_id_ = loss.id;
}

double Tape::loss_value() const {
  if (!has_loss()) fail(ErrorKind::state, "tape has no loss; run forward first");
  return nodes_[loss_id_].value(0, 0);
}

std::size_t Tape::leaf_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return !n.adjoint; }));
}

std::map<std::string, Tensor> Tape::backward() const {
  if (!has_loss()) fail(ErrorKind::state, "backward called before forward");
  std::vector<Tensor> grads(nodes_.size());
  std::vector<bool> live(nodes_.size(), false);
  grads[loss_id_] = Tensor(1, 1, 1.0);
  live[loss_id_] = true;

  const Accumulate acc = [&](std::size_t id, const Tensor& g) {
    if (!live[id]) {
      grads[id] = g;
      live[id] = true;
    } else {
      auto dst = grads[id].data();
      auto src = g.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  };

  for (std::size_t i = loss_id_ + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!live[i] || !node.adjoint) continue;
    node.adjoint(*this, grads[i], acc);
  }

  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : params_) {
    out.emplace(name, live[id] ? grads[id] : Tensor(nodes_[id].value.rows(), nodes_[id].value.cols()));
  }
  return out;
}

Recording forward(const GraphBuilder& build) {
  Recording rec;
  Var loss = build(rec.tape);
  if (rec.tape.size() == 0 || loss.tape != &rec.tape) {
    fail(ErrorKind::contract, "graph builder produced no loss node");
  }
  rec.tape.set_loss(loss);
  rec.loss = rec.tape.loss_value();
  return rec;
}

Var matmul(Var a, Var b) {
  Tape& owner = tape_of(a, b);
  Tensor out = seqformer::matmul(a.value(), b.value());
  return owner.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](const Tape& t, const Tensor& g, const Tape::Accumulate& acc) {
    acc(a, seqformer::matmul(g, seqformer::transpose(t.value(b))));
    acc(b, seqformer::matmul(seqformer::transpose(t.value(a)), g));
  });
}

Var transpose(Var a) {
  Tape& owner = tape_of(a);
  return owner.record(seqformer::transpose(a.value()), {a.id},
                  [a = a.id](const Tape&, const Tensor& g, const Tape::Accumulate& acc) { acc(a, seqformer::transpose(g)); });
}

Var add(Var a, Var b) {
  Tape& owner = tape_of(a, b);
  return owner.record(seqformer::add(a.value(), b.value()), {a.id, b.id},
                  [a = a.id, b = b.id](const Tape&, const Tensor& g, const Tape::Accumulate& acc) {
                    acc(a, g);
                    acc(b, g);
                  });
}

Var sub(Var a, Var b) {
  Tape& owner = tape_of(a, b);
  return owner.record(seqformer::sub(a.value(), b.value()), {a.id, b.id},
                  [a = a.id, b = b.id](const Tape&, const Tensor& g, const Tape::Accumulate& acc) {
                    acc(a, g);
                    acc(b, seqformer::scale(g, -1.0));
                  });
}

Var hadamard(Var a, Var b) {
  Tape& owner = tape_of(a, b);
  return owner.record(seqformer::hadamard(a.value(), b.value()), {a.id, b.id},
                  [a = a.id, b = b.id](const Tape& t, const Tensor& g, const Tape::Accumulate& acc) {
                    acc(a, seqformer::hadamard(g, t.value(b)));
                    acc(b, seqformer::hadamard(g, t.value(a)));
                  });
}

Var scale(Var a, double factor) {
  Tape& owner = tape_of(a);
  return owner.record(seqformer::scale(a.value(), factor), {a.id},
                  [a = a.id, factor](const Tape&, const Tensor& g, const Tape::Accumulate& acc) {
                    acc(a, seqformer::scale(g, factor));
                  });
}

Var add_column(Var a, Var bias) {
  Tape& owner = tape_of(a, bias);
  return owner.record(seqformer::add_column(a.value(), bias.value()), {a.id, bias.id},
                  [a = a.id, b = bias.id](const Tape&, const Tensor& g, const Tape::Accumulate& acc) {
                    acc(a, g);
                    acc(b, seqformer::sum_columns(g));
                  });
}

Var column_softmax(Var logits) {
  Tape& owner = tape_of(logits);
  Tensor out = seqformer::column_softmax(logits.value());
  const std::size_t self = owner.size();
  return owner.record(std::move(out), {logits.id},
                  [in = logits.id, self](const Tape& t, const Tensor& g, const Tape::Accumulate& acc) {
                    const Tensor& a = t.value(self);
                    Tensor dz(a.rows(), a.cols());
                    for (std::size_t c = 0; c < a.cols(); ++c) {
                      double dot = 0.0;
                      for (std::size_t r = 0; r < a.rows(); ++r) dot += g(r, c) * a(r, c);
                      for (std::size_t r = 0; r < a.rows(); ++r) dz(r, c) = a(r, c) * (g(r, c) - dot);
                    }
                    acc(in, dz);
                  });
}

Var causal_mask(Var logits) {
  Tape& owner = tape_of(logits);
  Tensor out = logits.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < std::min(r, out.cols()); ++c) out(r, c) = kMaskedLogit;
  return owner.record(std::move(out), {logits.id}, [in = logits.id](const Tape&, const Tensor& g, const Tape::Accumulate& acc) {
    Tensor d = g;
    for (std::size_t r = 0; r < d.rows(); ++r)
      for (std::size_t c = 0; c < std::min(r, d.cols()); ++c) d(r, c) = 0.0;
    acc(in, d);
  });
}

Var token_norm(Var x, Var gamma, Var beta, double epsilon) {
  Tape& owner = tape_of(x, gamma);
  tape_of(x, beta);
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  const std::size_t d = xv.rows(), n = xv.cols();
  if (gv.rows() != d || gv.cols() != 1 || bv.rows() != d || bv.cols() != 1) {
    fail(ErrorKind::shape, "token_norm: gamma/beta must be " + std::to_string(d) + "x1");
  }
  const ColumnStats stats = column_mean_var(xv);
  Tensor xhat(d, n);
  std::vector<double> inv_std(n);
  for (std::size_t c = 0; c < n; ++c) {
    inv_std[c] = 1.0 / std::sqrt(stats.vars[c] + epsilon);
    for (std::size_t r = 0; r < d; ++r) xhat(r, c) = (xv(r, c) - stats.means[c]) * inv_std[c];
  }
  Tensor out(d, n);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) = gv(r, 0) * xhat(r, c) + bv(r, 0);

  return owner.record(
      std::move(out), {x.id, gamma.id, beta.id},
      [xi = x.id, gi = gamma.id, bi = beta.id, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Tape& t, const Tensor& g, const Tape::Accumulate& acc) {
        const Tensor& gam = t.value(gi);
        const std::size_t rows = xhat.rows(), cols = xhat.cols();
        const bool faulty = testing::adjoint_fault();
        Tensor dgamma(rows, 1), dbeta(rows, 1), dx(rows, cols);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            dgamma(r, 0) += g(r, c) * xhat(r, c);
            dbeta(r, 0) += g(r, c);
          }
        }
        for (std::size_t c = 0; c < cols; ++c) {
          double mean_g = 0.0, mean_gx = 0.0;
          for (std::size_t r = 0; r < rows; ++r) {
            const double gh = g(r, c) * gam(r, 0);
            mean_g += gh;
            mean_gx += gh * xhat(r, c);
          }
          mean_g /= static_cast<double>(rows);
          mean_gx /= static_cast<double>(rows);
          if (faulty) mean_g = 0.0;
          for (std::size_t r = 0; r < rows; ++r) {
            const double gh = g(r, c) * gam(r, 0);
            dx(r, c) = inv_std[c] * (gh - mean_g - xhat(r, c) * mean_gx);
          }
        }
        acc(xi, dx);
        acc(gi, dgamma);
        acc(bi, dbeta);
      });
}

namespace {

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_slope(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

template <class F, class G>
Var pointwise(Var a, F value, G slope) {
  Tape& owner = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) v = value(v);
  return owner.record(std::move(out), {a.id}, [in = a.id, slope](const Tape& t, const Tensor& g, const Tape::Accumulate& acc) {
    const Tensor& x = t.value(in);
    Tensor d = g;
    auto dd = d.data();
    auto xd = x.data();
    for (std::size_t i = 0; i < dd.size(); ++i) dd[i] *= slope(xd[i]);
    acc(in, d);
  });
}

}  // namespace

Var gelu(Var a) { return pointwise(a, gelu_value, gelu_slope); }

Var relu(Var a) {
  return pointwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gather_columns(Var table, std::span<const std::size_t> ids) {
  Tape& owner = tape_of(table);
  const Tensor& tv = table.value();
  Tensor out(tv.rows(), ids.size());
  for (std::size_t n = 0; n < ids.size(); ++n) {
    if (ids[n] >= tv.cols()) {
      fail(ErrorKind::index, "token id " + std::to_string(ids[n]) + " at position " + std::to_string(n) +
                                 " outside table of " + std::to_string(tv.cols()));
    }
    for (std::size_t r = 0; r < tv.rows(); ++r) out(r, n) = tv(r, ids[n]);
  }
  return owner.record(std::move(out), {table.id},
                  [in = table.id, ids = std::vector<std::size_t>(ids.begin(), ids.end())](
                      const Tape& t, const Tensor& g, const Tape::Accumulate& acc) {
                    const Tensor& table_v = t.value(in);
                    Tensor d(table_v.rows(), table_v.cols());
                    for (std::size_t n = 0; n < ids.size(); ++n)
                      for (std::size_t r = 0; r < d.rows(); ++r) d(r, ids[n]) += g(r, n);
                    acc(in, d);
                  });
}

Var concat_cols(Var left, Var right) {
  Tape& owner = tape_of(left, right);
  const std::size_t split = left.cols();
  const std::size_t rest = right.cols();
  return owner.record(seqformer::concat_cols(left.value(), right.value()), {left.id, right.id},
                  [l = left.id, r = right.id, split, rest](const Tape&, const Tensor& g, const Tape::Accumulate& acc) {
                    acc(l, seqformer::slice_cols(g, 0, split));
                    acc(r, seqformer::slice_cols(g, split, rest));
                  });
}

Var concat_rows(Var top, Var bottom) {
  Tape& owner = tape_of(top, bottom);
  const std::size_t split = top.rows();
  const std::size_t rest = bottom.rows();
  return owner.record(seqformer::concat_rows(top.value(), bottom.value()), {top.id, bottom.id},
                  [a = top.id, b = bottom.id, split, rest](const Tape&, const Tensor& g, const Tape::Accumulate& acc) {
                    acc(a, seqformer::slice_rows(g, 0, split));
                    acc(b, seqformer::slice_rows(g, split, rest));
                  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& owner = tape_of(a);
  const std::size_t rows = a.rows(), cols = a.cols();
  return owner.record(seqformer::slice_cols(a.value(), begin, count), {a.id},
                  [in = a.id, rows, cols, begin](const Tape&, const Tensor& g, const Tape::Accumulate& acc) {
                    Tensor d(rows, cols);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < g.cols(); ++c) d(r, begin + c) = g(r, c);
                    acc(in, d);
                  });
}

Var sum(Var a) {
  Tape& owner = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t rows = a.rows(), cols = a.cols();
  return owner.record(Tensor(1, 1, s), {a.id}, [in = a.id, rows, cols](const Tape&, const Tensor& g, const Tape::Accumulate& acc) {
    acc(in, Tensor(rows, cols, g(0, 0)));
  });
}

Var sum_columns(Var a) {
  Tape& owner = tape_of(a);
  const std::size_t cols = a.cols();
  return owner.record(seqformer::sum_columns(a.value()), {a.id}, [in = a.id, cols](const Tape&, const Tensor& g, const Tape::Accumulate& acc) {
    Tensor d(g.rows(), cols);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < cols; ++c) d(r, c) = g(r, 0);
    acc(in, d);
  });
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets) {
  Tape& owner = tape_of(logits);
  const Tensor& lv = logits.value();
  if (targets.size() != lv.cols() || targets.empty()) {
    fail(ErrorKind::shape, "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                               std::to_string(lv.cols()) + " columns");
  }
  Tensor probs = seqformer::column_softmax(lv);
  double total = 0.0;
  for (std::size_t n = 0; n < targets.size(); ++n) {
    if (targets[n] >= lv.rows()) fail(ErrorKind::index, "cross_entropy: target out of range");
    double mx = lv(0, n);
    for (std::size_t r = 1; r < lv.rows(); ++r) mx = std::max(mx, lv(r, n));
    double z = 0.0;
    for (std::size_t r = 0; r < lv.rows(); ++r) z += std::exp(lv(r, n) - mx);
    total += mx + std::log(z) - lv(targets[n], n);
  }
  const double count = static_cast<double>(targets.size());
  return owner.record(Tensor(1, 1, total / count), {logits.id},
                  [in = logits.id, probs = std::move(probs),
                   targets = std::vector<std::size_t>(targets.begin(), targets.end()),
                   count](const Tape&, const Tensor& g, const Tape::Accumulate& acc) {
                    Tensor d = probs;
                    for (std::size_t n = 0; n < targets.size(); ++n) d(targets[n], n) -= 1.0;
                    acc(in, seqformer::scale(d, g(0, 0) / count));
                  });
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

bool GradientReport::passed() const {
  return std::all_of(params.begin(), params.end(), [](const ParamGradient& p) { return p.flagged == 0; });
}

double GradientReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& p : params) m = std::max(m, p.max_rel_error);
  return m;
}

GradientReport finite_diff_check(const GraphBuilder& build, std::span<const ParamRef> params, double h,
                                 double tol, const std::function<long double()>& numeric_loss) {
  if (!(h > 0.0)) fail(ErrorKind::oracle, "finite difference step must be positive");
  if (tol < 0.0) fail(ErrorKind::oracle, "tolerance must be non-negative");

  const auto evaluate = [&]() -> long double {
    return numeric_loss ? numeric_loss() : static_cast<long double>(forward(build).loss);
  };
  const long double first = evaluate();
  const long double second = evaluate();
  if (first != second && !(std::isnan(first) && std::isnan(second))) {
    fail(ErrorKind::oracle, "loss function is not deterministic");
  }

  Recording rec = forward(build);
  const std::map<std::string, Tensor> analytic = rec.tape.backward();

  GradientReport report;
  report.tolerance = tol;
  for (const ParamRef& p : params) {
    auto it = analytic.find(p.name);
    if (it == analytic.end()) fail(ErrorKind::oracle, "parameter not registered on tape: " + p.name);
    ParamGradient entry{p.name, it->second, Tensor(p.value->rows(), p.value->cols()), 0.0, 0};
    auto values = p.value->data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const long double up = evaluate();
      values[i] = saved - h;
      const long double down = evaluate();
      values[i] = saved;
      const auto numeric = static_cast<double>((up - down) / (2.0L * h));
      entry.numeric.data()[i] = numeric;
      const double err = relative_error(entry.analytic.data()[i], numeric);
      entry.max_rel_error = std::max(entry.max_rel_error, err);
      if (!(err <= tol)) ++entry.flagged;
    }
    report.params.push_back(std::move(entry));
  }
  return report;
}

}  // namespace seqformer::ad
