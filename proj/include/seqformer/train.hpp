// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqformer/embed.hpp"
#include "seqformer/model.hpp"
#include "seqformer/tensor.hpp"

namespace seqformer {

enum class LrSchedule { constant, linear };

std::string_view to_string(LrSchedule s);
LrSchedule parse_lr_schedule(std::string_view s);

struct TrainSettings {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;  // global gradient norm cap; 0 disables
  LrSchedule schedule = LrSchedule::constant;
  std::size_t steps = 500;
  std::size_t seq_len = 64;  // tokens per LM training window
  std::size_t batch = 0;     // examples per step; 0 uses the whole set
};

/// Learning rate at 0-based `step`; linear decays to zero at `steps`.
double learning_rate(const TrainSettings& s, std::size_t step);

class Adam {
 public:
  explicit Adam(const TrainSettings& settings) : settings_(settings) {}

  void step(std::span<const ParamSlot> params, const std::map<std::string, Tensor>& grads, double lr);
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  TrainSettings settings_;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
  std::size_t t_ = 0;
};

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_gradients(std::map<std::string, Tensor>& grads, double max_norm);

struct TrainResult {
  std::vector<double> losses;  // mean loss of each step, before its update
};

/// Per-step observer: (0-based step, loss).
using StepCallback = std::function<void(std::size_t, double)>;

/// Non-overlapping windows of `seq_len` tokens; a shorter corpus yields one
/// window covering it.
std::vector<std::vector<std::size_t>> lm_windows(std::span<const std::size_t> corpus, std::size_t seq_len);

TrainResult train_lm(ModelParams& params, const ModelConfig& config, std::span<const std::size_t> corpus,
                     const TrainSettings& settings, std::uint64_t seed, const StepCallback& on_step = {});

struct LabeledImage {
  Image image;
  std::size_t label = 0;
};

TrainResult train_cls(ModelParams& params, const ModelConfig& config, std::span<const LabeledImage> data,
                      const TrainSettings& settings, std::uint64_t seed, const StepCallback& on_step = {});

std::size_t predict_class(const Image& image, const ModelParams& params, const ModelConfig& config);
double cls_accuracy(std::span<const LabeledImage> data, const ModelParams& params, const ModelConfig& config);

/// Synthetic images for classification. Kinds: "bright" and "dark" are flat
/// fields with mild noise; "striped" has horizontal bars and "checker" a
/// one-pixel checkerboard, both with random phase and noise.
Image synth_image(std::string_view kind, std::size_t height, std::size_t width, Rng& rng);

}  // namespace seqformer
