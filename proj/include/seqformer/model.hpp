// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqformer/attention.hpp"
#include "seqformer/autodiff.hpp"
#include "seqformer/block.hpp"
#include "seqformer/embed.hpp"
#include "seqformer/tensor.hpp"

namespace seqformer {

enum class HeadKind { lm, cls_token, cls_pool };

std::string_view to_string(HeadKind h);
HeadKind parse_head_kind(std::string_view s);
std::string_view to_string(MaskMode m);
MaskMode parse_mask_mode(std::string_view s);

struct ModelConfig {
  std::size_t d_model = 0;
  std::size_t heads = 8;
  std::size_t key_dim = 0;  // 0: d_model / heads
  std::size_t layers = 1;
  std::size_t hidden = 0;   // 0: 4 * d_model
  std::size_t vocab_size = 0;
  std::size_t classes = 0;
  std::size_t n_max = 64;   // positions, including a BOS or class token
  MaskMode mask = MaskMode::causal;
  PositionMode position = PositionMode::learned;
  PositionCombine combine = PositionCombine::additive;
  std::size_t pos_dim = 0;  // rows taken by positions under concat
  HeadKind head = HeadKind::lm;
  double epsilon = 1e-5;
  bool scale = true;
  bool bos = true;          // learned begin-of-sequence column for LM heads
  Activation activation = Activation::gelu;
  double sin_base = 10000.0;
  std::size_t patch_h = 0;
  std::size_t patch_w = 0;
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  std::size_t channels = 1;
  std::uint64_t seed = 0;

  std::string symbols;                   // LM vocabulary, token id = index
  std::vector<std::string> class_names;  // classifier labels, class id = index

  std::size_t resolved_key_dim() const;
  std::size_t resolved_hidden() const;
  /// Rows of the content embedding: D, or D - pos_dim under concat.
  std::size_t content_dim() const;
  std::size_t output_size() const;  // W for LM heads, C for classifiers
  bool is_classifier() const { return head != HeadKind::lm; }
  /// Number of special columns (BOS or class token) prepended to content.
  std::size_t prefix_columns() const;

  /// Throws a config error describing the first inconsistency.
  void validate() const;
};

struct ModelParams {
  TokenTable tokens;        // LM heads
  PatchEmbedder patches;    // classifier heads
  PositionEncoding positions;
  Tensor start;             // BOS or class token column, empty if unused
  std::vector<BlockParams> blocks;
  Tensor lm_head;           // D x W, logits = lm_head^T x
  Tensor classifier;        // C x D
};

struct ParamSlot {
  std::string name;
  Tensor* value;
};

struct ConstParamSlot {
  std::string name;
  const Tensor* value;
};

/// Every learnable tensor in a fixed order with stable names.
std::vector<ParamSlot> parameter_slots(ModelParams& params, const ModelConfig& config);
std::vector<ConstParamSlot> parameter_slots(const ModelParams& params, const ModelConfig& config);
std::size_t parameter_count(const ModelParams& params, const ModelConfig& config);

ModelParams init_model(const ModelConfig& config, Rng& rng);
/// Attention values and MLP output weights zeroed: every block is identity.
void zero_residual_branches(ModelParams& params);

/// Content columns for an LM prefix: [BOS | embed(ids)], BOS only if enabled.
Tensor lm_input(std::span<const std::size_t> ids, const ModelParams& p, const ModelConfig& c);
/// Content columns for an image: [class token | W_patch patches] or patches.
Tensor cls_input(const Image& image, const ModelParams& p, const ModelConfig& c);

/// Positions then M blocks. x0 includes any prefix column.
Tensor forward(const Tensor& x0, const ModelParams& p, const ModelConfig& c);

struct ForwardTrace {
  Tensor output;
  std::vector<std::vector<Tensor>> attention;  // [layer][head]
};
ForwardTrace forward_traced(const Tensor& x0, const ModelParams& p, const ModelConfig& c);

/// Next-token logits (W x N) at every column of `x0`.
Tensor lm_logits(const Tensor& x0, const ModelParams& p, const ModelConfig& c);

/// Inputs and targets for teacher-forced prediction of `ids`: with BOS
/// every token is predicted, otherwise tokens 1..N-1.
struct LmExample {
  std::vector<std::size_t> inputs;
  std::vector<std::size_t> targets;
};
LmExample lm_example(std::span<const std::size_t> ids, const ModelConfig& c);

/// Per-prediction negative log-likelihoods from one causal forward pass.
std::vector<double> lm_step_losses(std::span<const std::size_t> ids, const ModelParams& p,
                                   const ModelConfig& c);
double lm_loss(std::span<const std::size_t> ids, const ModelParams& p, const ModelConfig& c);

/// Class logits for already-embedded patches (no class token column).
std::vector<double> cls_logits(const Tensor& patches, const ModelParams& p, const ModelConfig& c);
std::vector<double> cls_logits(const Image& image, const ModelParams& p, const ModelConfig& c);
double cls_loss(const Image& image, std::size_t label, const ModelParams& p, const ModelConfig& c);

/// Per-layer state for causal decoding: normalised block inputs and key
/// projections for every consumed position.
class KVCache {
 public:
  std::size_t size() const noexcept { return length_; }
  std::size_t layers() const noexcept { return layers_.size(); }
  /// Normalised input of layer `layer` at position `pos` (D values).
  std::span<const double> normed(std::size_t layer, std::size_t pos) const;
  /// Key of head `head` in layer `layer` at position `pos` (K values).
  std::span<const double> key(std::size_t layer, std::size_t head, std::size_t pos) const;
  const ModelConfig& config() const { return *config_; }
  const ModelParams& params() const { return *params_; }

 private:
  friend KVCache incremental_init(const ModelConfig&, const ModelParams&);
  friend std::vector<double> incremental_step_column(KVCache&, std::span<const double>);

  struct Layer {
    std::vector<double> normed;             // position-major, D per position
    std::vector<std::vector<double>> keys;  // per head, position-major, K per position
  };

  const ModelConfig* config_ = nullptr;
  const ModelParams* params_ = nullptr;
  std::vector<Layer> layers_;
  std::size_t length_ = 0;
};

/// Empty cache bound to `config` and `params`, which must outlive it.
KVCache incremental_init(const ModelConfig& config, const ModelParams& params);
/// Consumes one content column and returns the output-head logits there.
std::vector<double> incremental_step_column(KVCache& cache, std::span<const double> content);
/// Consumes the BOS column (LM heads with BOS enabled).
std::vector<double> incremental_begin(KVCache& cache);
std::vector<double> incremental_step(KVCache& cache, std::size_t token);

enum class SamplerKind { greedy, temperature };

struct Sampler {
  SamplerKind kind = SamplerKind::greedy;
  double temperature = 1.0;
};

/// Draws from softmax(logits / temperature) or takes the first argmax.
std::size_t sample_token(std::span<const double> logits, const Sampler& sampler, Rng& rng);

/// Prompt followed by `steps` sampled tokens. The uncached path recomputes a
/// full forward pass per token and must agree with the cached one.
std::vector<std::size_t> generate(const ModelParams& p, const ModelConfig& c,
                                  std::span<const std::size_t> prompt, std::size_t steps,
                                  const Sampler& sampler, std::uint64_t seed, bool use_cache = true);

namespace ad {

struct ModelVars {
  Var tokens;     // LM
  Var patches;    // classifier
  Var positions;  // learned parameter or sinusoidal constant
  Var start;
  std::vector<BlockVars> blocks;
  Var lm_head;
  Var classifier;
};

/// Registers every parameter of `p` on `tape` under its slot name.
ModelVars register_model(Tape& tape, const ModelParams& p, const ModelConfig& c);
Var forward(Var x0, const ModelVars& v, const ModelConfig& c);
Var lm_loss(Tape& tape, const ModelVars& v, const ModelConfig& c, std::span<const std::size_t> ids);
Var cls_loss(Tape& tape, const ModelVars& v, const ModelConfig& c, const Image& image, std::size_t label);

}  // namespace ad

}  // namespace seqformer
