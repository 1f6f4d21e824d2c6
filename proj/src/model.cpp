// SPDX-License-Identifier: Apache-2.0
#include "seqformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "seqformer/error.hpp"

namespace seqformer {

std::string_view to_string(HeadKind h) {
  switch (h) {
    case HeadKind::lm: return "lm";
    case HeadKind::cls_token: return "cls-token";
    case HeadKind::cls_pool: return "cls-pool";
  }
  return "lm";
}

HeadKind parse_head_kind(std::string_view s) {
  if (s == "lm") return HeadKind::lm;
  if (s == "cls-token") return HeadKind::cls_token;
  if (s == "cls-pool") return HeadKind::cls_pool;
  fail(ErrorKind::config, "unknown head kind '" + std::string(s) + "'");
}

std::string_view to_string(MaskMode m) { return m == MaskMode::causal ? "causal" : "none"; }

MaskMode parse_mask_mode(std::string_view s) {
  if (s == "none") return MaskMode::none;
  if (s == "causal") return MaskMode::causal;
  fail(ErrorKind::config, "unknown mask mode '" + std::string(s) + "'");
}

std::size_t ModelConfig::resolved_key_dim() const {
  if (key_dim != 0) return key_dim;
  if (heads == 0 || d_model % heads != 0) {
    fail(ErrorKind::config, "d_model " + std::to_string(d_model) + " is not divisible by heads " +
                                std::to_string(heads) + "; set key_dim explicitly");
  }
  return d_model / heads;
}

std::size_t ModelConfig::resolved_hidden() const { return hidden != 0 ? hidden : 4 * d_model; }

std::size_t ModelConfig::content_dim() const {
  if (position != PositionMode::none && combine == PositionCombine::concat) return d_model - pos_dim;
  return d_model;
}

std::size_t ModelConfig::output_size() const { return head == HeadKind::lm ? vocab_size : classes; }

std::size_t ModelConfig::prefix_columns() const {
  if (head == HeadKind::lm) return bos ? 1 : 0;
  return head == HeadKind::cls_token ? 1 : 0;
}

void ModelConfig::validate() const {
  if (d_model == 0) fail(ErrorKind::config, "d_model must be positive");
  if (layers == 0) fail(ErrorKind::config, "layers must be at least 1");
  if (heads == 0) fail(ErrorKind::config, "heads must be at least 1");
  if (n_max == 0) fail(ErrorKind::config, "n_max must be at least 1");
  if (!(epsilon > 0.0)) fail(ErrorKind::config, "epsilon must be positive");
  if (resolved_key_dim() == 0) fail(ErrorKind::config, "key_dim must be positive");
  if (position != PositionMode::none && combine == PositionCombine::concat) {
    if (pos_dim == 0 || pos_dim >= d_model) {
      fail(ErrorKind::config, "concat positions need 0 < pos_dim < d_model");
    }
  }
  if (position == PositionMode::sinusoidal) {
    const std::size_t rows = combine == PositionCombine::concat ? pos_dim : d_model;
    if (rows % 2 != 0) fail(ErrorKind::config, "sinusoidal positions need an even dimension");
    if (!(sin_base > 1.0)) fail(ErrorKind::config, "sin_base must exceed 1");
  }
  if (head == HeadKind::lm) {
    if (vocab_size == 0) fail(ErrorKind::config, "vocab_size must be positive for an lm head");
    if (!symbols.empty() && symbols.size() != vocab_size) {
      fail(ErrorKind::config, "vocabulary has " + std::to_string(symbols.size()) + " symbols but vocab_size is " +
                                  std::to_string(vocab_size));
    }
  } else {
    if (classes == 0) fail(ErrorKind::config, "classes must be positive for a classifier head");
    if (!class_names.empty() && class_names.size() != classes) {
      fail(ErrorKind::config, "class_names lists " + std::to_string(class_names.size()) + " names for " +
                                  std::to_string(classes) + " classes");
    }
    if (patch_h == 0 || patch_w == 0 || channels == 0) {
      fail(ErrorKind::config, "classifier heads need patch_h, patch_w and channels");
    }
    if (image_h == 0 || image_w == 0 || image_h % patch_h != 0 || image_w % patch_w != 0) {
      fail(ErrorKind::config, "image_h/image_w must be positive multiples of the patch size");
    }
    const std::size_t tokens = (image_h / patch_h) * (image_w / patch_w) + prefix_columns();
    if (tokens > n_max) {
      fail(ErrorKind::config, "images need " + std::to_string(tokens) + " positions but n_max is " +
                                  std::to_string(n_max));
    }
  }
}

namespace {

std::string block_prefix(std::size_t m) { return "block" + std::to_string(m); }

template <class Params, class Slot>
std::vector<Slot> collect_slots(Params& p, const ModelConfig& c) {
  std::vector<Slot> out;
  if (c.head == HeadKind::lm) out.push_back({"tok_emb", &p.tokens.table});
  else out.push_back({"patch_emb", &p.patches.weight});
  if (c.position == PositionMode::learned) out.push_back({"pos_emb", &p.positions.table});
  if (c.prefix_columns() == 1) out.push_back({c.head == HeadKind::lm ? "bos" : "cls_token", &p.start});
  for (std::size_t m = 0; m < p.blocks.size(); ++m) {
    auto& b = p.blocks[m];
    const std::string bp = block_prefix(m);
    out.push_back({bp + ".norm1.gamma", &b.norm1.gamma});
    out.push_back({bp + ".norm1.beta", &b.norm1.beta});
    for (std::size_t h = 0; h < b.mhsa.heads.size(); ++h) {
      auto& head = b.mhsa.heads[h];
      const std::string hp = bp + ".head" + std::to_string(h);
      out.push_back({hp + ".u_q", &head.u_q});
      out.push_back({hp + ".u_k", &head.u_k});
      out.push_back({hp + ".v", &head.v});
    }
    out.push_back({bp + ".norm2.gamma", &b.norm2.gamma});
    out.push_back({bp + ".norm2.beta", &b.norm2.beta});
    out.push_back({bp + ".mlp.w1", &b.mlp.w1});
    out.push_back({bp + ".mlp.b1", &b.mlp.b1});
    out.push_back({bp + ".mlp.w2", &b.mlp.w2});
    out.push_back({bp + ".mlp.b2", &b.mlp.b2});
  }
  if (c.head == HeadKind::lm) out.push_back({"lm_head", &p.lm_head});
  else out.push_back({"classifier", &p.classifier});
  return out;
}

}  // namespace

std::vector<ParamSlot> parameter_slots(ModelParams& params, const ModelConfig& config) {
  return collect_slots<ModelParams, ParamSlot>(params, config);
}

std::vector<ConstParamSlot> parameter_slots(const ModelParams& params, const ModelConfig& config) {
  return collect_slots<const ModelParams, ConstParamSlot>(params, config);
}

std::size_t parameter_count(const ModelParams& params, const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& s : parameter_slots(params, config)) n += s.value->size();
  return n;
}

ModelParams init_model(const ModelConfig& c, Rng& rng) {
  c.validate();
  ModelParams p;
  const std::size_t content = c.content_dim();
  if (c.head == HeadKind::lm) {
    p.tokens.table = Tensor::randn(content, c.vocab_size, 1.0, rng);
  } else {
    p.patches.patch_h = c.patch_h;
    p.patches.patch_w = c.patch_w;
    p.patches.channels = c.channels;
    p.patches.weight = Tensor::randn(content, p.patches.patch_dim(), 1.0 / std::sqrt(static_cast<double>(p.patches.patch_dim())), rng);
  }
  p.positions.mode = c.position;
  p.positions.combine = c.combine;
  const std::size_t pos_rows = c.combine == PositionCombine::concat ? c.pos_dim : c.d_model;
  if (c.position == PositionMode::learned) p.positions.table = Tensor::randn(pos_rows, c.n_max, 0.02, rng);
  if (c.position == PositionMode::sinusoidal) p.positions.table = sinusoidal_positions(pos_rows, c.n_max, c.sin_base);
  if (c.prefix_columns() == 1) p.start = Tensor::randn(content, 1, 1.0, rng);

  const BlockShape shape{c.d_model, c.resolved_key_dim(), c.heads, c.resolved_hidden(), c.activation, c.epsilon, c.scale};
  for (std::size_t m = 0; m < c.layers; ++m) p.blocks.push_back(init_block(shape, rng));
  if (c.head == HeadKind::lm) p.lm_head = Tensor::randn(c.d_model, c.vocab_size, 0.02, rng);
  else p.classifier = Tensor::randn(c.classes, c.d_model, 0.02, rng);
  return p;
}

void zero_residual_branches(ModelParams& params) {
  for (BlockParams& b : params.blocks) {
    for (HeadParams& h : b.mhsa.heads) h.v = Tensor(h.v.rows(), h.v.cols());
    b.mlp.w2 = Tensor(b.mlp.w2.rows(), b.mlp.w2.cols());
    b.mlp.b2 = Tensor(b.mlp.b2.rows(), b.mlp.b2.cols());
  }
}

Tensor lm_input(std::span<const std::size_t> ids, const ModelParams& p, const ModelConfig& c) {
  Tensor emb = embed_tokens(ids, p.tokens);
  return c.bos ? concat_cols(p.start, emb) : emb;
}

namespace {

void require_image_size(const Image& image, const ModelConfig& c) {
  if (image.height != c.image_h || image.width != c.image_w || image.channels != c.channels) {
    fail(ErrorKind::shape, "image is " + std::to_string(image.height) + "x" + std::to_string(image.width) + "x" +
                               std::to_string(image.channels) + ", model expects " + std::to_string(c.image_h) +
                               "x" + std::to_string(c.image_w) + "x" + std::to_string(c.channels));
  }
}

}  // namespace

Tensor cls_input(const Image& image, const ModelParams& p, const ModelConfig& c) {
  require_image_size(image, c);
  Tensor patches = embed_patches(image, p.patches);
  return c.head == HeadKind::cls_token ? concat_cols(p.start, patches) : patches;
}

Tensor forward(const Tensor& x0, const ModelParams& p, const ModelConfig& c) {
  Tensor x = add_positions(x0, p.positions);
  for (const BlockParams& b : p.blocks) x = block_forward(x, b, c.mask);
  return x;
}

ForwardTrace forward_traced(const Tensor& x0, const ModelParams& p, const ModelConfig& c) {
  ForwardTrace trace;
  Tensor x = add_positions(x0, p.positions);
  for (const BlockParams& b : p.blocks) {
    trace.attention.push_back(attention_maps(token_norm(x, b.norm1), b.mhsa, c.mask));
    x = block_forward(x, b, c.mask);
  }
  trace.output = std::move(x);
  return trace;
}

Tensor lm_logits(const Tensor& x0, const ModelParams& p, const ModelConfig& c) {
  if (c.head != HeadKind::lm) fail(ErrorKind::contract, "lm_logits needs an lm head");
  return matmul(transpose(p.lm_head), forward(x0, p, c));
}

LmExample lm_example(std::span<const std::size_t> ids, const ModelConfig& c) {
  const std::size_t needed = c.bos ? 1 : 2;
  if (ids.size() < needed) {
    fail(ErrorKind::contract, "sequence of " + std::to_string(ids.size()) + " tokens has nothing to predict");
  }
  LmExample ex;
  ex.inputs.assign(ids.begin(), ids.end() - 1);
  ex.targets.assign(ids.begin() + (c.bos ? 0 : 1), ids.end());
  if (ex.inputs.size() + c.prefix_columns() > c.n_max) {
    fail(ErrorKind::range, "sequence needs " + std::to_string(ex.inputs.size() + c.prefix_columns()) +
                               " positions but n_max is " + std::to_string(c.n_max));
  }
  return ex;
}

namespace {

void require_causal_lm(const ModelConfig& c, const char* op) {
  if (c.head != HeadKind::lm) fail(ErrorKind::contract, std::string(op) + " needs an lm head");
  if (c.mask != MaskMode::causal) {
    fail(ErrorKind::contract, std::string(op) + " needs mask = causal; an unmasked model sees future tokens");
  }
}

double neg_log_softmax(const Tensor& logits, std::size_t col, std::size_t target) {
  double mx = logits(0, col);
  for (std::size_t r = 1; r < logits.rows(); ++r) mx = std::max(mx, logits(r, col));
  double z = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) z += std::exp(logits(r, col) - mx);
  return mx + std::log(z) - logits(target, col);
}

std::vector<double> head_logits(const Tensor& column, const ModelParams& p) {
  return matmul(transpose(p.lm_head), column).col(0);
}

}  // namespace

std::vector<double> lm_step_losses(std::span<const std::size_t> ids, const ModelParams& p, const ModelConfig& c) {
  require_causal_lm(c, "lm_loss");
  const LmExample ex = lm_example(ids, c);
  const Tensor logits = lm_logits(lm_input(ex.inputs, p, c), p, c);
  std::vector<double> out(ex.targets.size());
  for (std::size_t n = 0; n < ex.targets.size(); ++n) {
    if (ex.targets[n] >= logits.rows()) fail(ErrorKind::index, "target token outside vocabulary");
    out[n] = neg_log_softmax(logits, n, ex.targets[n]);
  }
  return out;
}

double lm_loss(std::span<const std::size_t> ids, const ModelParams& p, const ModelConfig& c) {
  const std::vector<double> steps = lm_step_losses(ids, p, c);
  double total = 0.0;
  for (double v : steps) total += v;
  return total / static_cast<double>(steps.size());
}

std::vector<double> cls_logits(const Tensor& patches, const ModelParams& p, const ModelConfig& c) {
  if (!c.is_classifier()) fail(ErrorKind::contract, "cls_logits needs a cls-token or cls-pool head");
  const bool token = c.head == HeadKind::cls_token;
  const Tensor x = forward(token ? concat_cols(p.start, patches) : patches, p, c);
  const Tensor h = token ? slice_cols(x, 0, 1) : sum_columns(x);
  return matmul(p.classifier, h).col(0);
}

std::vector<double> cls_logits(const Image& image, const ModelParams& p, const ModelConfig& c) {
  require_image_size(image, c);
  return cls_logits(embed_patches(image, p.patches), p, c);
}

double cls_loss(const Image& image, std::size_t label, const ModelParams& p, const ModelConfig& c) {
  const std::vector<double> logits = cls_logits(image, p, c);
  if (label >= logits.size()) fail(ErrorKind::index, "label outside class range");
  return neg_log_softmax(Tensor::column(logits), 0, label);
}

std::span<const double> KVCache::normed(std::size_t layer, std::size_t pos) const {
  const std::size_t d = config_->d_model;
  if (pos >= length_) fail(ErrorKind::index, "cache position out of range");
  return std::span<const double>(layers_.at(layer).normed).subspan(pos * d, d);
}

std::span<const double> KVCache::key(std::size_t layer, std::size_t head, std::size_t pos) const {
  const std::size_t k = config_->resolved_key_dim();
  if (pos >= length_) fail(ErrorKind::index, "cache position out of range");
  return std::span<const double>(layers_.at(layer).keys.at(head)).subspan(pos * k, k);
}

KVCache incremental_init(const ModelConfig& config, const ModelParams& params) {
  if (config.mask != MaskMode::causal) {
    fail(ErrorKind::contract, "incremental decoding needs mask = causal");
  }
  KVCache cache;
  cache.config_ = &config;
  cache.params_ = &params;
  cache.layers_.resize(params.blocks.size());
  for (std::size_t m = 0; m < params.blocks.size(); ++m) cache.layers_[m].keys.resize(params.blocks[m].mhsa.heads.size());
  return cache;
}

std::vector<double> incremental_step_column(KVCache& cache, std::span<const double> content) {
  if (cache.config_ == nullptr) fail(ErrorKind::state, "cache was not initialised");
  const ModelConfig& c = *cache.config_;
  const ModelParams& p = *cache.params_;
  const std::size_t pos = cache.length_;
  if (pos >= c.n_max) {
    fail(ErrorKind::range, "cache is full: n_max = " + std::to_string(c.n_max) + " positions");
  }
  if (content.size() != c.content_dim()) fail(ErrorKind::shape, "content column has the wrong height");

  Tensor x = add_positions(Tensor::column(content), p.positions, pos);
  const std::size_t n = pos + 1;
  for (std::size_t m = 0; m < p.blocks.size(); ++m) {
    const BlockParams& b = p.blocks[m];
    KVCache::Layer& layer = cache.layers_[m];
    const Tensor z = token_norm(x, b.norm1);
    const std::size_t d = z.rows();
    layer.normed.insert(layer.normed.end(), z.data().begin(), z.data().end());

    Tensor y(d, 1);
    for (std::size_t h = 0; h < b.mhsa.heads.size(); ++h) {
      const HeadParams& head = b.mhsa.heads[h];
      const std::size_t k = head.u_q.rows();
      const Tensor key = matmul(head.u_k, z);
      const Tensor query = matmul(head.u_q, z);
      std::vector<double>& keys = layer.keys[h];
      keys.insert(keys.end(), key.data().begin(), key.data().end());

      const double factor = 1.0 / std::sqrt(static_cast<double>(k));
      std::vector<double> weights(n);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) s += keys[j * k + i] * query(i, 0);
        if (b.mhsa.scale) s *= factor;
        weights[j] = s;
        mx = std::max(mx, s);
      }
      double total = 0.0;
      for (double& w : weights) {
        w = std::exp(w - mx);
        total += w;
      }
      for (double& w : weights) w /= total;

      Tensor mixed(d, 1);
      for (std::size_t j = 0; j < n; ++j) {
        const double* zj = layer.normed.data() + j * d;
        for (std::size_t r = 0; r < d; ++r) mixed(r, 0) += zj[r] * weights[j];
      }
      y = add(y, matmul(head.v, mixed));
    }
    x = add(x, y);
    x = add(x, mlp_forward(token_norm(x, b.norm2), b.mlp));
  }
  cache.length_ = n;
  if (c.head == HeadKind::lm) return head_logits(x, p);
  return x.col(0);
}

std::vector<double> incremental_begin(KVCache& cache) {
  const ModelConfig& c = cache.config();
  if (c.head != HeadKind::lm || !c.bos) fail(ErrorKind::contract, "model has no BOS column");
  if (cache.size() != 0) fail(ErrorKind::state, "BOS must be the first cached position");
  return incremental_step_column(cache, cache.params().start.data());
}

std::vector<double> incremental_step(KVCache& cache, std::size_t token) {
  const ModelParams& p = cache.params();
  if (token >= p.tokens.vocab_size()) {
    fail(ErrorKind::index, "token id " + std::to_string(token) + " outside vocabulary of " +
                               std::to_string(p.tokens.vocab_size()));
  }
  const std::vector<double> column = p.tokens.table.col(token);
  return incremental_step_column(cache, column);
}

std::size_t sample_token(std::span<const double> logits, const Sampler& sampler, Rng& rng) {
  if (logits.empty()) fail(ErrorKind::shape, "cannot sample from empty logits");
  if (sampler.kind == SamplerKind::greedy) {
    return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  if (!(sampler.temperature > 0.0)) fail(ErrorKind::config, "temperature must be positive");
  Tensor scaled(logits.size(), 1);
  for (std::size_t i = 0; i < logits.size(); ++i) scaled(i, 0) = logits[i] / sampler.temperature;
  const Tensor probs = column_softmax(scaled);
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    cumulative += probs(i, 0);
    if (u < cumulative) return i;
  }
  // u landed in the rounding gap above the final cumulative sum
  for (std::size_t i = logits.size(); i-- > 0;)
    if (probs(i, 0) > 0.0) return i;
  return logits.size() - 1;
}

std::vector<std::size_t> generate(const ModelParams& p, const ModelConfig& c, std::span<const std::size_t> prompt,
                                  std::size_t steps, const Sampler& sampler, std::uint64_t seed, bool use_cache) {
  require_causal_lm(c, "generate");
  if (prompt.empty()) fail(ErrorKind::contract, "generation needs a non-empty prompt");
  if (sampler.kind == SamplerKind::temperature && !(sampler.temperature > 0.0)) {
    fail(ErrorKind::config, "temperature must be positive");
  }
  std::vector<std::size_t> seq(prompt.begin(), prompt.end());
  if (steps == 0) return seq;
  if (c.prefix_columns() + prompt.size() + steps - 1 > c.n_max) {
    fail(ErrorKind::range, "generating " + std::to_string(steps) + " tokens overflows n_max = " + std::to_string(c.n_max));
  }
  Rng rng(seed);

  if (use_cache) {
    KVCache cache = incremental_init(c, p);
    std::vector<double> logits;
    if (c.bos) logits = incremental_begin(cache);
    for (std::size_t t : prompt) logits = incremental_step(cache, t);
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t next = sample_token(logits, sampler, rng);
      seq.push_back(next);
      if (s + 1 < steps) logits = incremental_step(cache, next);
    }
    return seq;
  }

  for (std::size_t s = 0; s < steps; ++s) {
    const Tensor logits = lm_logits(lm_input(seq, p, c), p, c);
    const std::vector<double> last = logits.col(logits.cols() - 1);
    seq.push_back(sample_token(last, sampler, rng));
  }
  return seq;
}

namespace ad {

ModelVars register_model(Tape& tape, const ModelParams& p, const ModelConfig& c) {
  ModelVars v;
  if (c.head == HeadKind::lm) v.tokens = tape.parameter("tok_emb", p.tokens.table);
  else v.patches = tape.parameter("patch_emb", p.patches.weight);
  if (c.position == PositionMode::learned) v.positions = tape.parameter("pos_emb", p.positions.table);
  else if (c.position == PositionMode::sinusoidal) v.positions = tape.constant(p.positions.table);
  if (c.prefix_columns() == 1) v.start = tape.parameter(c.head == HeadKind::lm ? "bos" : "cls_token", p.start);
  for (std::size_t m = 0; m < p.blocks.size(); ++m) v.blocks.push_back(register_block(tape, block_prefix(m), p.blocks[m]));
  if (c.head == HeadKind::lm) v.lm_head = tape.parameter("lm_head", p.lm_head);
  else v.classifier = tape.parameter("classifier", p.classifier);
  return v;
}

namespace {

PositionEncoding encoding_view(const ModelConfig& c) {
  PositionEncoding e;
  e.mode = c.position;
  e.combine = c.combine;
  const std::size_t rows = c.combine == PositionCombine::concat ? c.pos_dim : c.d_model;
  if (c.position != PositionMode::none) e.table = Tensor(rows, c.n_max);  // shape only
  return e;
}

}  // namespace

Var forward(Var x0, const ModelVars& v, const ModelConfig& c) {
  Var x = add_positions(x0, encoding_view(c), v.positions);
  for (const BlockVars& b : v.blocks) x = block_forward(x, b, c.mask);
  return x;
}

Var lm_loss(Tape&, const ModelVars& v, const ModelConfig& c, std::span<const std::size_t> ids) {
  require_causal_lm(c, "lm_loss");
  const LmExample ex = lm_example(ids, c);
  Var x0 = gather_columns(v.tokens, ex.inputs);
  if (c.bos) x0 = concat_cols(v.start, x0);
  Var logits = matmul(transpose(v.lm_head), forward(x0, v, c));
  return cross_entropy(logits, ex.targets);
}

Var cls_loss(Tape& tape, const ModelVars& v, const ModelConfig& c, const Image& image, std::size_t label) {
  if (!c.is_classifier()) fail(ErrorKind::contract, "cls_loss needs a cls-token or cls-pool head");
  const bool token = c.head == HeadKind::cls_token;
  require_image_size(image, c);
  Var patches = matmul(v.patches, tape.constant(patch_matrix(image, c.patch_h, c.patch_w)));
  Var x = forward(token ? concat_cols(v.start, patches) : patches, v, c);
  Var h = token ? slice_cols(x, 0, 1) : sum_columns(x);
  const std::size_t target[] = {label};
  return cross_entropy(matmul(v.classifier, h), target);
}

}  // namespace ad

}  // namespace seqformer
