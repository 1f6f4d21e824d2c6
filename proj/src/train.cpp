// SPDX-License-Identifier: Apache-2.0
#include "seqformer/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

#include "seqformer/autodiff.hpp"
#include "seqformer/error.hpp"

namespace seqformer {

std::string_view to_string(LrSchedule s) {
  return s == LrSchedule::constant ? "constant" : "linear";
}

LrSchedule parse_lr_schedule(std::string_view s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "linear") return LrSchedule::linear;
  fail(ErrorKind::config, "unknown lr_schedule '" + std::string(s) + "' (expected constant or linear)");
}

double learning_rate(const TrainSettings& s, std::size_t step) {
  if (s.schedule == LrSchedule::constant || s.steps == 0) return s.lr;
  const double frac = static_cast<double>(std::min(step, s.steps)) / static_cast<double>(s.steps);
  return s.lr * (1.0 - frac);
}

void Adam::step(std::span<const ParamSlot> params, const std::map<std::string, Tensor>& grads, double lr) {
  ++t_;
  const double b1 = settings_.beta1;
  const double b2 = settings_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (const ParamSlot& slot : params) {
    auto git = grads.find(slot.name);
    if (git == grads.end()) fail(ErrorKind::contract, "Adam: no gradient for parameter '" + slot.name + "'");
    const Tensor& g = git->second;
    Tensor& w = *slot.value;
    require_same_shape(w, g, "Adam");
    auto [mit, m_new] = m_.try_emplace(slot.name, w.rows(), w.cols());
    auto [vit, v_new] = v_.try_emplace(slot.name, w.rows(), w.cols());
    (void)m_new;
    (void)v_new;
    auto wd = w.data();
    auto gd = g.data();
    auto md = mit->second.data();
    auto vd = vit->second.data();
    for (std::size_t i = 0; i < wd.size(); ++i) {
      md[i] = b1 * md[i] + (1.0 - b1) * gd[i];
      vd[i] = b2 * vd[i] + (1.0 - b2) * gd[i] * gd[i];
      const double mhat = md[i] / c1;
      const double vhat = vd[i] / c2;
      wd[i] -= lr * mhat / (std::sqrt(vhat) + settings_.adam_eps);
    }
  }
}

double clip_gradients(std::map<std::string, Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g.data()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& x : g.data()) x *= f;
  }
  return norm;
}

std::vector<std::vector<std::size_t>> lm_windows(std::span<const std::size_t> corpus, std::size_t seq_len) {
  if (seq_len == 0) fail(ErrorKind::config, "seq_len must be positive");
  std::vector<std::vector<std::size_t>> out;
  if (corpus.size() <= seq_len) {
    out.emplace_back(corpus.begin(), corpus.end());
    return out;
  }
  for (std::size_t start = 0; start + seq_len <= corpus.size(); start += seq_len)
    out.emplace_back(corpus.begin() + start, corpus.begin() + start + seq_len);
  return out;
}

namespace {

using ExampleLoss = std::function<ad::Var(ad::Tape&, const ad::ModelVars&, std::size_t)>;

/// One optimisation step over `batch`, averaging example losses on a
/// single tape. Returns the mean loss before the update.
double train_step(ModelParams& params, const ModelConfig& config, std::span<const std::size_t> batch,
                  const ExampleLoss& example_loss, Adam& adam, const TrainSettings& s, std::size_t step) {
  std::optional<ad::Recording> rec;
  std::map<std::string, Tensor> grads;
  try {
    rec.emplace(ad::forward([&](ad::Tape& tape) {
      const ad::ModelVars vars = ad::register_model(tape, params, config);
      ad::Var total = example_loss(tape, vars, batch[0]);
      for (std::size_t i = 1; i < batch.size(); ++i) total = ad::add(total, example_loss(tape, vars, batch[i]));
      return ad::scale(total, 1.0 / static_cast<double>(batch.size()));
    }));
    if (!std::isfinite(rec->loss)) fail(ErrorKind::numeric, "loss is " + std::to_string(rec->loss));
    grads = rec->tape.backward();
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::numeric) throw;
    fail(ErrorKind::numeric, "training diverged at step " + std::to_string(step) + ": " + e.what());
  }
  clip_gradients(grads, s.clip_norm);
  const auto slots = parameter_slots(params, config);
  adam.step(slots, grads, learning_rate(s, step));
  return rec->loss;
}

TrainResult run_training(ModelParams& params, const ModelConfig& config, std::size_t count,
                         const ExampleLoss& example_loss, const TrainSettings& s, std::uint64_t seed,
                         const StepCallback& on_step) {
  if (count == 0) fail(ErrorKind::input, "training set is empty");
  Rng rng(seed);
  Adam adam(s);
  TrainResult result;
  result.losses.reserve(s.steps);

  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = (s.batch == 0 || s.batch >= count) ? count : s.batch;
  std::size_t cursor = count;  // forces a shuffle on the first minibatch
  std::vector<std::size_t> picked;

  for (std::size_t step = 0; step < s.steps; ++step) {
    picked.clear();
    if (batch == count) {
      picked = order;
    } else {
      while (picked.size() < batch) {
        if (cursor == count) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        picked.push_back(order[cursor++]);
      }
    }
    const double loss = train_step(params, config, picked, example_loss, adam, s, step);
    result.losses.push_back(loss);
    if (on_step) on_step(step, loss);
  }
  return result;
}

}  // namespace

TrainResult train_lm(ModelParams& params, const ModelConfig& config, std::span<const std::size_t> corpus,
                     const TrainSettings& settings, std::uint64_t seed, const StepCallback& on_step) {
  config.validate();
  if (corpus.size() < 2 && !config.bos) fail(ErrorKind::input, "corpus needs at least two tokens");
  if (corpus.empty()) fail(ErrorKind::input, "corpus is empty");
  for (std::size_t id : corpus) {
    if (id >= config.vocab_size) fail(ErrorKind::index, "corpus token id out of vocabulary range");
  }
  const auto windows = lm_windows(corpus, settings.seq_len);
  const ExampleLoss loss = [&](ad::Tape& tape, const ad::ModelVars& v, std::size_t i) {
    return ad::lm_loss(tape, v, config, windows[i]);
  };
  return run_training(params, config, windows.size(), loss, settings, seed, on_step);
}

TrainResult train_cls(ModelParams& params, const ModelConfig& config, std::span<const LabeledImage> data,
                      const TrainSettings& settings, std::uint64_t seed, const StepCallback& on_step) {
  config.validate();
  for (const LabeledImage& ex : data) {
    if (ex.label >= config.classes) fail(ErrorKind::index, "image label out of class range");
  }
  const ExampleLoss loss = [&](ad::Tape& tape, const ad::ModelVars& v, std::size_t i) {
    return ad::cls_loss(tape, v, config, data[i].image, data[i].label);
  };
  return run_training(params, config, data.size(), loss, settings, seed, on_step);
}

std::size_t predict_class(const Image& image, const ModelParams& params, const ModelConfig& config) {
  const std::vector<double> logits = cls_logits(image, params, config);
  return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double cls_accuracy(std::span<const LabeledImage> data, const ModelParams& params, const ModelConfig& config) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const LabeledImage& ex : data) correct += predict_class(ex.image, params, config) == ex.label;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

Image synth_image(std::string_view kind, std::size_t height, std::size_t width, Rng& rng) {
  if (height == 0 || width == 0) fail(ErrorKind::config, "synthetic image needs positive size");
  std::normal_distribution<double> noise(0.0, 0.05);
  std::uniform_int_distribution<int> coin(0, 1);
  Image img;
  img.height = height;
  img.width = width;
  img.channels = 1;
  img.pixels.resize(height * width);

  std::function<double(std::size_t, std::size_t)> base;
  if (kind == "bright") {
    base = [](std::size_t, std::size_t) { return 0.85; };
  } else if (kind == "dark") {
    base = [](std::size_t, std::size_t) { return 0.15; };
  } else if (kind == "striped") {
    const std::size_t phase = static_cast<std::size_t>(coin(rng));
    base = [phase](std::size_t y, std::size_t) { return (y + phase) % 2 == 0 ? 0.9 : 0.1; };
  } else if (kind == "checker") {
    const std::size_t phase = static_cast<std::size_t>(coin(rng));
    base = [phase](std::size_t y, std::size_t x) { return (x + y + phase) % 2 == 0 ? 0.9 : 0.1; };
  } else {
    fail(ErrorKind::config, "unknown synthetic image kind '" + std::string(kind) +
                                "' (expected bright, dark, striped or checker)");
  }
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      img.pixels[y * width + x] = std::clamp(base(y, x) + noise(rng), 0.0, 1.0);
  return img;
}

}  // namespace seqformer
