// SPDX-License-Identifier: Apache-2.0
#include "seqformer/seqformer.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <new>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "seqformer/checkpoint.hpp"
#include "seqformer/config.hpp"
#include "seqformer/error.hpp"
#include "seqformer/reference.hpp"
#include "seqformer/selftest.hpp"
#include "seqformer/train.hpp"

namespace fs = std::filesystem;
using namespace seqformer;

struct sqf_model {
  Checkpoint ck;
};

namespace {

thread_local std::string g_last_error;

sqf_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return SQF_ERR_SHAPE;
    case ErrorKind::numeric: return SQF_ERR_NUMERIC;
    case ErrorKind::config: return SQF_ERR_CONFIG;
    case ErrorKind::contract: return SQF_ERR_CONTRACT;
    case ErrorKind::state: return SQF_ERR_STATE;
    case ErrorKind::index: return SQF_ERR_INDEX;
    case ErrorKind::range: return SQF_ERR_RANGE;
    case ErrorKind::format: return SQF_ERR_FORMAT;
    case ErrorKind::corruption: return SQF_ERR_CORRUPTION;
    case ErrorKind::input: return SQF_ERR_INPUT;
    case ErrorKind::oracle: return SQF_ERR_ORACLE;
    case ErrorKind::io: return SQF_ERR_IO;
  }
  return SQF_ERR_INTERNAL;
}

template <typename F>
sqf_status guarded(F&& body) {
  g_last_error.clear();
  try {
    body();
    return SQF_OK;
  } catch (const Error& e) {
    g_last_error = std::string(to_string(e.kind())) + " error: " + e.what();
    return status_of(e.kind());
  } catch (const fs::filesystem_error& e) {
    g_last_error = std::string("io error: ") + e.what();
    return SQF_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "internal error: out of memory";
    return SQF_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = std::string("internal error: ") + e.what();
    return SQF_ERR_INTERNAL;
  }
}

sqf_status bad_argument(const char* what) {
  g_last_error = std::string("argument error: ") + what;
  return SQF_ERR_ARGUMENT;
}

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  std::string s(buf, ptr);
  if (s.find_first_of(".eninf") == std::string::npos) s += ".0";
  return s;
}

std::string read_file(const fs::path& path, ErrorKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(kind, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::io, "failed writing " + path.string());
}

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail(ErrorKind::io, "cannot create output directory " + dir.string());
}

void apply_seed(RunConfig& rc, const uint64_t* seed_override) {
  if (seed_override) rc.model.seed = *seed_override;
}

std::string loss_csv(const std::vector<double>& losses) {
  std::string out = "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) out += std::to_string(i) + "," + format_real(losses[i]) + "\n";
  return out;
}

StepCallback observer(sqf_step_fn fn, void* user) {
  if (!fn) return {};
  return [fn, user](std::size_t step, double loss) { fn(step, loss, user); };
}

// Training draws its own stream so changing the model size does not
// reshuffle minibatches.
constexpr std::uint64_t kTrainStream = 0x9e3779b97f4a7c15ULL;

std::vector<std::size_t> encode(std::string_view text, const std::string& symbols) {
  std::vector<std::size_t> ids;
  std::set<unsigned char> unknown;
  for (unsigned char ch : text) {
    const auto pos = symbols.find(static_cast<char>(ch));
    if (pos == std::string::npos) unknown.insert(ch);
    else ids.push_back(pos);
  }
  if (!unknown.empty()) {
    std::string list;
    for (unsigned char ch : unknown) {
      if (!list.empty()) list += ", ";
      if (ch >= 0x20 && ch < 0x7f) list += std::string("'") + static_cast<char>(ch) + "'";
      else list += "byte " + std::to_string(ch);
    }
    fail(ErrorKind::input, "characters not in the vocabulary: " + list);
  }
  return ids;
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (directories ? entry.is_directory() : entry.is_regular_file()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<LabeledImage> load_split(const fs::path& dir, const std::vector<std::string>& classes,
                                     const ModelConfig& c) {
  std::vector<LabeledImage> out;
  for (std::size_t label = 0; label < classes.size(); ++label) {
    const fs::path cls = dir / classes[label];
    if (!fs::is_directory(cls)) continue;
    for (const fs::path& file : sorted_entries(cls, false)) {
      if (file.extension() != ".pgm") continue;
      Image img = read_pgm(file);
      if (img.height != c.image_h || img.width != c.image_w || img.channels != c.channels) {
        fail(ErrorKind::input, file.string() + ": image is " + std::to_string(img.height) + "x" +
                                   std::to_string(img.width) + ", expected " + std::to_string(c.image_h) + "x" +
                                   std::to_string(c.image_w));
      }
      out.push_back({std::move(img), label});
    }
  }
  return out;
}

class FaultScope {
 public:
  explicit FaultScope(bool enabled) : previous_(ad::testing::adjoint_fault()) {
    ad::testing::set_adjoint_fault(enabled);
  }
  ~FaultScope() { ad::testing::set_adjoint_fault(previous_); }
  FaultScope(const FaultScope&) = delete;
  FaultScope& operator=(const FaultScope&) = delete;

 private:
  bool previous_;
};

constexpr std::size_t kGradcheckParamLimit = 50000;

}  // namespace

extern "C" {

const char* sqf_version(void) { return "0.1.0"; }

const char* sqf_status_name(sqf_status status) {
  switch (status) {
    case SQF_OK: return "ok";
    case SQF_ERR_ARGUMENT: return "argument";
    case SQF_ERR_SHAPE: return "shape";
    case SQF_ERR_NUMERIC: return "numeric";
    case SQF_ERR_CONFIG: return "config";
    case SQF_ERR_CONTRACT: return "contract";
    case SQF_ERR_STATE: return "state";
    case SQF_ERR_INDEX: return "index";
    case SQF_ERR_RANGE: return "range";
    case SQF_ERR_FORMAT: return "format";
    case SQF_ERR_CORRUPTION: return "corruption";
    case SQF_ERR_INPUT: return "input";
    case SQF_ERR_ORACLE: return "oracle";
    case SQF_ERR_IO: return "io";
    case SQF_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* sqf_last_error(void) { return g_last_error.c_str(); }

int sqf_exit_code(sqf_status status) {
  switch (status) {
    case SQF_OK: return 0;
    case SQF_ERR_ARGUMENT:
    case SQF_ERR_CONFIG:
    case SQF_ERR_INPUT:
    case SQF_ERR_IO:
    case SQF_ERR_FORMAT:
    case SQF_ERR_CORRUPTION: return 2;
    default: return 1;
  }
}

sqf_status sqf_train_lm(const char* config_path, const char* corpus_path, const char* out_dir,
                        const uint64_t* seed_override, sqf_step_fn on_step, void* user) {
  if (!config_path || !out_dir) return bad_argument("config_path and out_dir are required");
  return guarded([&] {
    RunConfig rc = load_run_config(config_path);
    apply_seed(rc, seed_override);
    ModelConfig& c = rc.model;
    if (c.head != HeadKind::lm) fail(ErrorKind::config, "train-lm needs head = lm");

    fs::path corpus_file = corpus_path ? fs::path(corpus_path) : fs::path(rc.corpus);
    if (corpus_file.empty()) fail(ErrorKind::config, "no corpus given on the command line or in the config");
    if (!corpus_path && corpus_file.is_relative()) corpus_file = fs::path(config_path).parent_path() / corpus_file;
    const std::string text = read_file(corpus_file, ErrorKind::input);
    if (text.empty()) fail(ErrorKind::input, corpus_file.string() + ": corpus is empty");

    const std::set<unsigned char> distinct(text.begin(), text.end());
    c.symbols.assign(distinct.begin(), distinct.end());
    if (c.vocab_size != 0 && c.vocab_size != c.symbols.size()) {
      fail(ErrorKind::config, "vocab_size = " + std::to_string(c.vocab_size) + " but the corpus has " +
                                  std::to_string(c.symbols.size()) + " distinct characters");
    }
    c.vocab_size = c.symbols.size();
    c.validate();
    if (rc.train.seq_len > c.n_max) {
      fail(ErrorKind::config, "seq_len " + std::to_string(rc.train.seq_len) + " exceeds n_max " +
                                  std::to_string(c.n_max));
    }

    const fs::path out(out_dir);
    prepare_out_dir(out);
    Rng rng(c.seed);
    ModelParams p = init_model(c, rng);
    const std::vector<std::size_t> ids = encode(text, c.symbols);
    const TrainResult r = train_lm(p, c, ids, rc.train, c.seed ^ kTrainStream, observer(on_step, user));

    save_checkpoint(out / "model.sqfm", c, p);
    write_file(out / "loss.csv", loss_csv(r.losses));
    write_vocab(out / "vocab.txt", c.symbols);
  });
}

sqf_status sqf_train_cls(const char* config_path, const char* data_dir, const char* out_dir,
                         const uint64_t* seed_override, sqf_step_fn on_step, void* user) {
  if (!config_path || !out_dir) return bad_argument("config_path and out_dir are required");
  return guarded([&] {
    RunConfig rc = load_run_config(config_path);
    apply_seed(rc, seed_override);
    ModelConfig& c = rc.model;
    if (!c.is_classifier()) fail(ErrorKind::config, "train-cls needs head = cls-token or cls-pool");

    fs::path data = data_dir ? fs::path(data_dir) : fs::path(rc.data_dir);
    if (data.empty()) fail(ErrorKind::config, "no data directory given on the command line or in the config");
    if (!data_dir && data.is_relative()) data = fs::path(config_path).parent_path() / data;
    const fs::path train_dir = data / "train";
    if (!fs::is_directory(train_dir)) fail(ErrorKind::input, train_dir.string() + ": missing training directory");

    std::vector<std::string> classes;
    for (const fs::path& d : sorted_entries(train_dir, true)) classes.push_back(d.filename().string());
    if (classes.empty()) fail(ErrorKind::input, train_dir.string() + ": no class directories");
    if (c.classes != 0 && c.classes != classes.size()) {
      fail(ErrorKind::config, "classes = " + std::to_string(c.classes) + " but " + train_dir.string() + " has " +
                                  std::to_string(classes.size()) + " class directories");
    }
    c.classes = classes.size();
    c.class_names = classes;

    if (c.image_h == 0 || c.image_w == 0) {
      for (const fs::path& cls : sorted_entries(train_dir, true)) {
        for (const fs::path& file : sorted_entries(cls, false)) {
          if (file.extension() != ".pgm") continue;
          const Image first = read_pgm(file);
          c.image_h = first.height;
          c.image_w = first.width;
          c.channels = first.channels;
          break;
        }
        if (c.image_h != 0) break;
      }
      if (c.image_h == 0) fail(ErrorKind::input, train_dir.string() + ": no .pgm images found");
    }
    c.validate();

    const std::vector<LabeledImage> train = load_split(train_dir, classes, c);
    std::vector<std::size_t> per_class(classes.size());
    for (const LabeledImage& ex : train) ++per_class[ex.label];
    for (std::size_t k = 0; k < classes.size(); ++k) {
      if (per_class[k] == 0) fail(ErrorKind::input, (train_dir / classes[k]).string() + ": no .pgm images found");
    }
    const fs::path test_dir = data / "test";
    const std::vector<LabeledImage> test =
        fs::is_directory(test_dir) ? load_split(test_dir, classes, c) : std::vector<LabeledImage>{};

    const fs::path out(out_dir);
    prepare_out_dir(out);
    Rng rng(c.seed);
    ModelParams p = init_model(c, rng);
    const TrainResult r = train_cls(p, c, train, rc.train, c.seed ^ kTrainStream, observer(on_step, user));

    std::string metrics = "split,examples,accuracy\n";
    metrics += "train," + std::to_string(train.size()) + "," + format_real(cls_accuracy(train, p, c)) + "\n";
    if (!test.empty()) {
      metrics += "test," + std::to_string(test.size()) + "," + format_real(cls_accuracy(test, p, c)) + "\n";
    }
    save_checkpoint(out / "model.sqfm", c, p);
    write_file(out / "loss.csv", loss_csv(r.losses));
    write_file(out / "metrics.csv", metrics);
  });
}

sqf_status sqf_model_load(const char* path, sqf_model** out) {
  if (!path || !out) return bad_argument("path and out are required");
  *out = nullptr;
  return guarded([&] {
    auto model = std::make_unique<sqf_model>();
    model->ck = load_checkpoint(path);
    *out = model.release();
  });
}

sqf_status sqf_model_save(const sqf_model* model, const char* path) {
  if (!model || !path) return bad_argument("model and path are required");
  return guarded([&] { save_checkpoint(path, model->ck.config, model->ck.params); });
}

void sqf_model_free(sqf_model* model) { delete model; }

sqf_status sqf_model_info_get(const sqf_model* model, sqf_model_info* out) {
  if (!model || !out) return bad_argument("model and out are required");
  return guarded([&] {
    const ModelConfig& c = model->ck.config;
    *out = sqf_model_info{};
    out->d_model = c.d_model;
    out->heads = c.heads;
    out->key_dim = c.resolved_key_dim();
    out->layers = c.layers;
    out->vocab_size = c.is_classifier() ? 0 : c.vocab_size;
    out->classes = c.is_classifier() ? c.classes : 0;
    out->n_max = c.n_max;
    out->parameters = parameter_count(model->ck.params, c);
    out->is_classifier = c.is_classifier() ? 1 : 0;
    out->causal = c.mask == MaskMode::causal ? 1 : 0;
  });
}

const char* sqf_model_label(const sqf_model* model, size_t label) {
  if (!model) return nullptr;
  const auto& names = model->ck.config.class_names;
  return label < names.size() ? names[label].c_str() : nullptr;
}

sqf_status sqf_generate(const sqf_model* model, const char* prompt, size_t steps, int greedy, double temperature,
                        uint64_t seed, int use_cache, char** out_text) {
  if (!model || !prompt || !out_text) return bad_argument("model, prompt and out_text are required");
  *out_text = nullptr;
  return guarded([&] {
    const ModelConfig& c = model->ck.config;
    if (c.head != HeadKind::lm) fail(ErrorKind::contract, "generate needs a language model checkpoint");
    if (c.symbols.empty()) fail(ErrorKind::corruption, "checkpoint has no vocabulary");
    const std::vector<std::size_t> ids = encode(prompt, c.symbols);
    if (ids.empty()) fail(ErrorKind::input, "prompt is empty");
    Sampler sampler;
    if (!greedy) {
      sampler.kind = SamplerKind::temperature;
      sampler.temperature = temperature;
    }
    const std::vector<std::size_t> out = generate(model->ck.params, c, ids, steps, sampler, seed, use_cache != 0);
    std::string text;
    for (std::size_t id : out) text.push_back(c.symbols[id]);
    char* buf = static_cast<char*>(std::malloc(text.size() + 1));
    if (!buf) throw std::bad_alloc();
    std::memcpy(buf, text.c_str(), text.size() + 1);
    *out_text = buf;
  });
}

void sqf_string_free(char* text) { std::free(text); }

sqf_status sqf_classify(const sqf_model* model, const char* pgm_path, size_t* out_class, double* probs,
                        size_t probs_len) {
  if (!model || !pgm_path || !out_class) return bad_argument("model, pgm_path and out_class are required");
  return guarded([&] {
    const ModelConfig& c = model->ck.config;
    if (!c.is_classifier()) fail(ErrorKind::contract, "classify needs a classifier checkpoint");
    const std::vector<double> logits = cls_logits(read_pgm(pgm_path), model->ck.params, c);
    *out_class = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (probs) {
      const Tensor p = column_softmax(Tensor::column(logits));
      for (std::size_t k = 0; k < std::min(probs_len, logits.size()); ++k) probs[k] = p(k, 0);
    }
  });
}

sqf_status sqf_inspect_attention(const sqf_model* model, const char* input, const char* out_dir,
                                 size_t* files_written) {
  if (!model || !input || !out_dir) return bad_argument("model, input and out_dir are required");
  return guarded([&] {
    const ModelConfig& c = model->ck.config;
    const ModelParams& p = model->ck.params;
    const Tensor x0 = c.is_classifier() ? cls_input(read_pgm(input), p, c)
                                        : lm_input(encode(input, c.symbols), p, c);
    if (x0.cols() == 0) fail(ErrorKind::input, "input is empty and the model has no start column");
    const ForwardTrace trace = forward_traced(x0, p, c);
    const fs::path out(out_dir);
    prepare_out_dir(out);
    std::size_t count = 0;
    for (std::size_t l = 0; l < trace.attention.size(); ++l) {
      for (std::size_t h = 0; h < trace.attention[l].size(); ++h) {
        const Tensor& a = trace.attention[l][h];
        std::string text = std::to_string(l) + " " + std::to_string(h) + " " + std::to_string(a.cols()) + "\n";
        for (std::size_t r = 0; r < a.rows(); ++r) {
          for (std::size_t col = 0; col < a.cols(); ++col) text += (col ? " " : "") + format_real(a(r, col));
          text += "\n";
        }
        write_file(out / ("attn_L" + std::to_string(l) + "_H" + std::to_string(h) + ".txt"), text);
        ++count;
      }
    }
    if (files_written) *files_written = count;
  });
}

sqf_status sqf_gradcheck(const char* config_path, const uint64_t* seed_override, double tol,
                         int inject_adjoint_fault, sqf_gradcheck_fn on_row, void* user, int* passed) {
  if (!config_path || !passed) return bad_argument("config_path and passed are required");
  *passed = 0;
  return guarded([&] {
    RunConfig rc = load_run_config(config_path);
    apply_seed(rc, seed_override);
    ModelConfig& c = rc.model;
    if (c.head == HeadKind::lm && c.vocab_size == 0) {
      c.vocab_size = c.symbols.empty() ? 11 : c.symbols.size();
    }
    if (c.is_classifier() && c.classes == 0) c.classes = 2;
    c.validate();
    const double tolerance = tol < 0.0 ? rc.gradcheck.tolerance : tol;

    Rng rng(c.seed);
    ModelParams p = init_model(c, rng);
    const std::size_t count = parameter_count(p, c);
    if (count > kGradcheckParamLimit) {
      fail(ErrorKind::config, "gradcheck guard: model has " + std::to_string(count) + " parameters, limit is " +
                                  std::to_string(kGradcheckParamLimit));
    }
    std::vector<ad::ParamRef> refs;
    for (const ParamSlot& s : parameter_slots(p, c)) refs.push_back({s.name, s.value});

    ad::GraphBuilder build;
    std::function<long double()> oracle;
    std::vector<std::size_t> ids;
    Image image;
    std::size_t label = 0;
    if (c.head == HeadKind::lm) {
      if (c.mask != MaskMode::causal) fail(ErrorKind::config, "lm gradcheck needs mask = causal");
      const std::size_t n = std::min(rc.gradcheck.seq_len, c.n_max);
      std::uniform_int_distribution<std::size_t> token(0, c.vocab_size - 1);
      for (std::size_t i = 0; i < n; ++i) ids.push_back(token(rng));
      build = [&](ad::Tape& tape) { return ad::lm_loss(tape, ad::register_model(tape, p, c), c, ids); };
      oracle = [&] { return reference_lm_loss<long double>(p, c, ids); };
    } else {
      image.height = c.image_h;
      image.width = c.image_w;
      image.channels = c.channels;
      std::uniform_real_distribution<double> pixel(0.0, 1.0);
      image.pixels.resize(c.image_h * c.image_w * c.channels);
      for (double& v : image.pixels) v = pixel(rng);
      label = std::uniform_int_distribution<std::size_t>(0, c.classes - 1)(rng);
      build = [&](ad::Tape& tape) { return ad::cls_loss(tape, ad::register_model(tape, p, c), c, image, label); };
      oracle = [&] { return reference_cls_loss<long double>(p, c, image, label); };
    }

    FaultScope fault(inject_adjoint_fault != 0);
    const ad::GradientReport report = ad::finite_diff_check(build, refs, rc.gradcheck.step, tolerance, oracle);
    if (on_row) {
      for (const ad::ParamGradient& g : report.params)
        on_row(g.name.c_str(), g.analytic.size(), g.max_rel_error, g.flagged, user);
    }
    *passed = report.passed() ? 1 : 0;
  });
}

sqf_status sqf_selftest(uint64_t seed, sqf_selftest_fn on_row, void* user, int* passed) {
  if (!passed) return bad_argument("passed is required");
  *passed = 0;
  return guarded([&] {
    const std::vector<SelftestResult> results = run_selftest(seed);
    bool all = true;
    for (const SelftestResult& r : results) {
      all = all && r.passed;
      if (on_row) on_row(r.name.c_str(), r.passed ? 1 : 0, r.measured, r.bound, user);
    }
    *passed = all ? 1 : 0;
  });
}

sqf_status sqf_make_images(const char* out_dir, const char* kinds, size_t train_per_class, size_t test_per_class,
                           size_t height, size_t width, uint64_t seed) {
  if (!out_dir || !kinds) return bad_argument("out_dir and kinds are required");
  return guarded([&] {
    std::vector<std::string> names;
    std::stringstream ss(kinds);
    for (std::string k; std::getline(ss, k, ',');) {
      if (!k.empty()) names.push_back(k);
    }
    if (names.size() < 2) fail(ErrorKind::config, "make-images needs at least two kinds");
    Rng probe(0);
    for (const std::string& kind : names) synth_image(kind, height, width, probe);  // rejects unknown kinds early
    Rng rng(seed);
    const fs::path root(out_dir);
    for (const auto& [split, count] : {std::pair<const char*, size_t>{"train", train_per_class},
                                       std::pair<const char*, size_t>{"test", test_per_class}}) {
      for (const std::string& kind : names) {
        const fs::path dir = root / split / kind;
        prepare_out_dir(dir);
        for (std::size_t i = 0; i < count; ++i) {
          char file[32];
          std::snprintf(file, sizeof file, "%04zu.pgm", i);
          write_pgm(dir / file, synth_image(kind, height, width, rng));
        }
      }
    }
  });
}

}  // extern "C"
