// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Talks to the library only through the C API.
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "seqformer/seqformer.h"

namespace {

int report(sqf_status status) {
  if (status != SQF_OK) std::fprintf(stderr, "seqformer: %s\n", sqf_last_error());
  return sqf_exit_code(status);
}

// SEQFORMER_SEED wins over the config file; a --seed flag wins over both.
std::optional<uint64_t> seed_from_env() {
  const char* env = std::getenv("SEQFORMER_SEED");
  if (!env || !*env) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0') throw CLI::ValidationError("SEQFORMER_SEED", "must be an unsigned integer");
  return static_cast<uint64_t>(v);
}

const uint64_t* seed_ptr(const std::optional<uint64_t>& seed) { return seed ? &*seed : nullptr; }

struct Progress {
  size_t every = 50;
  bool quiet = false;
};

void print_step(size_t step, double loss, void* user) {
  const auto* p = static_cast<const Progress*>(user);
  if (!p->quiet && step % p->every == 0) std::fprintf(stderr, "step %zu loss %.6f\n", step, loss);
}

struct ModelHandle {
  sqf_model* model = nullptr;
  ~ModelHandle() { sqf_model_free(model); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seqformer: transformer training, generation and verification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", sqf_version());

  Progress progress;
  std::optional<uint64_t> seed;
  bool quiet = false;

  std::string config_path, corpus_path, out_dir, data_dir, checkpoint, prompt, input;
  auto* train_lm = app.add_subcommand("train-lm", "Train a character-level language model");
  train_lm->add_option("config", config_path, "Run config file")->required();
  train_lm->add_option("corpus", corpus_path, "Training text (defaults to the config corpus key)");
  train_lm->add_option("-o,--out", out_dir, "Output directory")->required();
  train_lm->add_option("--seed", seed, "Override the config seed");
  train_lm->add_flag("-q,--quiet", quiet, "Suppress progress output");

  size_t steps = 0;
  std::optional<double> temperature;
  bool no_cache = false;
  uint64_t gen_seed = 0;
  auto* generate = app.add_subcommand("generate", "Continue a prompt with a trained language model");
  generate->add_option("checkpoint", checkpoint, "Model checkpoint")->required();
  generate->add_option("prompt", prompt, "Prompt text")->required();
  generate->add_option("-n,--steps", steps, "Symbols to generate")->default_val(100);
  generate->add_option("-t,--temperature", temperature, "Sampling temperature (greedy when omitted)");
  generate->add_option("--seed", gen_seed, "Sampling seed")->default_val(0);
  generate->add_flag("--no-cache", no_cache, "Recompute the full prefix for every symbol");

  auto* train_cls = app.add_subcommand("train-cls", "Train an image classifier on PGM files");
  train_cls->add_option("config", config_path, "Run config file")->required();
  train_cls->add_option("data", data_dir, "Directory with train/<class>/*.pgm (defaults to the config data_dir key)");
  train_cls->add_option("-o,--out", out_dir, "Output directory")->required();
  train_cls->add_option("--seed", seed, "Override the config seed");
  train_cls->add_flag("-q,--quiet", quiet, "Suppress progress output");

  std::optional<double> tol;
  bool inject_fault = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  gradcheck->add_option("config", config_path, "Run config file")->required();
  gradcheck->add_option("--seed", seed, "Override the config seed");
  gradcheck->add_option("--tol", tol, "Relative error tolerance (defaults to the config value)");
  gradcheck->add_flag("--inject-adjoint-fault", inject_fault)->group("");

  auto* inspect = app.add_subcommand("inspect-attention", "Dump per-layer, per-head attention matrices");
  inspect->add_option("checkpoint", checkpoint, "Model checkpoint")->required();
  inspect->add_option("input", input, "Text for language models, PGM path for classifiers")->required();
  inspect->add_option("-o,--out", out_dir, "Output directory")->required();

  uint64_t selftest_seed = 1;
  auto* selftest = app.add_subcommand("selftest", "Run the invariant suite");
  selftest->add_option("--seed", selftest_seed, "Seed for the randomized checks")->default_val(1);

  std::string kinds = "bright,dark";
  size_t per_train = 100, per_test = 50, size = 8;
  uint64_t image_seed = 0;
  auto* make_images = app.add_subcommand("make-images", "Write a synthetic PGM classification dataset");
  make_images->add_option("-o,--out", out_dir, "Output directory")->required();
  make_images->add_option("--kinds", kinds, "Comma list of bright, dark, striped, checker")->default_val(kinds);
  make_images->add_option("--train", per_train, "Training images per class")->default_val(per_train);
  make_images->add_option("--test", per_test, "Test images per class")->default_val(per_test);
  make_images->add_option("--size", size, "Image height and width")->default_val(size);
  make_images->add_option("--seed", image_seed, "Generator seed")->default_val(0);

  auto* classify = app.add_subcommand("classify", "Classify one PGM image");
  classify->add_option("checkpoint", checkpoint, "Model checkpoint")->required();
  classify->add_option("image", input, "PGM image")->required();

  try {
    app.parse(argc, argv);
    if (!seed) seed = seed_from_env();
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  progress.quiet = quiet;

  if (train_lm->parsed()) {
    return report(sqf_train_lm(config_path.c_str(), corpus_path.empty() ? nullptr : corpus_path.c_str(),
                               out_dir.c_str(), seed_ptr(seed), print_step, &progress));
  }
  if (train_cls->parsed()) {
    return report(sqf_train_cls(config_path.c_str(), data_dir.empty() ? nullptr : data_dir.c_str(),
                                out_dir.c_str(), seed_ptr(seed), print_step, &progress));
  }
  if (generate->parsed()) {
    ModelHandle h;
    if (sqf_status s = sqf_model_load(checkpoint.c_str(), &h.model); s != SQF_OK) return report(s);
    char* text = nullptr;
    const sqf_status s = sqf_generate(h.model, prompt.c_str(), steps, temperature ? 0 : 1,
                                      temperature.value_or(1.0), gen_seed, no_cache ? 0 : 1, &text);
    if (s != SQF_OK) return report(s);
    std::printf("%s\n", text);
    sqf_string_free(text);
    return 0;
  }
  if (gradcheck->parsed()) {
    std::printf("%-28s %8s %14s %8s\n", "parameter", "entries", "max_rel_err", "flagged");
    int passed = 0;
    const sqf_status s = sqf_gradcheck(
        config_path.c_str(), seed_ptr(seed), tol.value_or(-1.0), inject_fault ? 1 : 0,
        [](const char* name, size_t entries, double err, size_t flagged, void*) {
          std::printf("%-28s %8zu %14.6e %8zu\n", name, entries, err, flagged);
        },
        nullptr, &passed);
    if (s != SQF_OK) return report(s);
    std::printf("%s\n", passed ? "PASS" : "FAIL");
    return passed ? 0 : 1;
  }
  if (inspect->parsed()) {
    ModelHandle h;
    if (sqf_status s = sqf_model_load(checkpoint.c_str(), &h.model); s != SQF_OK) return report(s);
    size_t files = 0;
    if (sqf_status s = sqf_inspect_attention(h.model, input.c_str(), out_dir.c_str(), &files); s != SQF_OK) {
      return report(s);
    }
    std::printf("wrote %zu attention maps to %s\n", files, out_dir.c_str());
    return 0;
  }
  if (selftest->parsed()) {
    int passed = 0;
    const sqf_status s = sqf_selftest(
        selftest_seed,
        [](const char* name, int ok, double measured, double bound, void*) {
          std::printf("%s  %-56s %.3e (bound %.1e)\n", ok ? "PASS" : "FAIL", name, measured, bound);
        },
        nullptr, &passed);
    if (s != SQF_OK) return report(s);
    return passed ? 0 : 1;
  }
  if (make_images->parsed()) {
    return report(sqf_make_images(out_dir.c_str(), kinds.c_str(), per_train, per_test, size, size, image_seed));
  }
  if (classify->parsed()) {
    ModelHandle h;
    if (sqf_status s = sqf_model_load(checkpoint.c_str(), &h.model); s != SQF_OK) return report(s);
    size_t cls = 0;
    if (sqf_status s = sqf_classify(h.model, input.c_str(), &cls, nullptr, 0); s != SQF_OK) return report(s);
    const char* name = sqf_model_label(h.model, cls);
    std::printf("%zu %s\n", cls, name ? name : "");
    return 0;
  }
  return 2;
}
