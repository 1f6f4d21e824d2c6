// SPDX-License-Identifier: Apache-2.0
// Exercises the shared library through its C interface only.
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "seqformer/seqformer.h"

namespace fs = std::filesystem;

namespace {

fs::path workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "seqformer_test_capi";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = workdir() / name;
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kLmConfig =
    "d_model = 8\nheads = 2\nlayers = 1\nhead = lm\nn_max = 40\nlr = 0.01\nsteps = 20\nseq_len = 16\n";

struct Model {
  sqf_model* ptr = nullptr;
  ~Model() { sqf_model_free(ptr); }
};

}  // namespace

TEST_CASE("status names and exit codes") {
  CHECK(std::string(sqf_status_name(SQF_OK)) == "ok");
  CHECK(std::string(sqf_status_name(SQF_ERR_CORRUPTION)) == "corruption");
  CHECK(sqf_exit_code(SQF_OK) == 0);
  for (sqf_status s : {SQF_ERR_ARGUMENT, SQF_ERR_CONFIG, SQF_ERR_INPUT, SQF_ERR_IO, SQF_ERR_FORMAT, SQF_ERR_CORRUPTION})
    CHECK(sqf_exit_code(s) == 2);
  for (sqf_status s : {SQF_ERR_SHAPE, SQF_ERR_NUMERIC, SQF_ERR_CONTRACT, SQF_ERR_RANGE, SQF_ERR_INTERNAL})
    CHECK(sqf_exit_code(s) == 1);
  CHECK(std::string(sqf_version()) == "0.1.0");
}

TEST_CASE("null arguments are rejected with a message") {
  CHECK(sqf_model_load(nullptr, nullptr) == SQF_ERR_ARGUMENT);
  CHECK(std::string(sqf_last_error()).find("argument") != std::string::npos);
  sqf_model_info info;
  CHECK(sqf_model_info_get(nullptr, &info) == SQF_ERR_ARGUMENT);
  CHECK(sqf_generate(nullptr, "a", 1, 1, 1.0, 0, 1, nullptr) == SQF_ERR_ARGUMENT);
  CHECK(sqf_model_label(nullptr, 0) == nullptr);
  sqf_model_free(nullptr);
}

TEST_CASE("load errors map to status codes") {
  Model m;
  CHECK(sqf_model_load((workdir() / "missing.sqfm").c_str(), &m.ptr) == SQF_ERR_IO);
  CHECK(sqf_model_load(write_file("junk.sqfm", "not a model").c_str(), &m.ptr) == SQF_ERR_FORMAT);
  CHECK(std::string(sqf_last_error()).find("magic") != std::string::npos);
  CHECK(m.ptr == nullptr);
}

TEST_CASE("language model workflow") {
  const fs::path corpus = write_file("corpus.txt", std::string(90, 'x') + "abcabcabcabcabcabc");
  const fs::path config = write_file("lm.cfg", kLmConfig);
  const fs::path out = workdir() / "lm_out";
  std::size_t calls = 0;
  REQUIRE(sqf_train_lm(config.c_str(), corpus.c_str(), out.c_str(), nullptr,
                       [](size_t, double loss, void* user) {
                         CHECK(std::isfinite(loss));
                         ++*static_cast<std::size_t*>(user);
                       },
                       &calls) == SQF_OK);
  CHECK(calls == 20);
  const std::string csv = read_file(out / "loss.csv");
  CHECK(csv.rfind("step,loss\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 21);
  CHECK(read_file(out / "vocab.txt") == "a\nb\nc\nx\n");

  Model m;
  REQUIRE(sqf_model_load((out / "model.sqfm").c_str(), &m.ptr) == SQF_OK);
  sqf_model_info info{};
  REQUIRE(sqf_model_info_get(m.ptr, &info) == SQF_OK);
  CHECK(info.vocab_size == 4);
  CHECK(info.heads == 2);
  CHECK(info.causal == 1);
  CHECK(info.is_classifier == 0);
  CHECK(info.parameters > 0);

  char* text = nullptr;
  REQUIRE(sqf_generate(m.ptr, "ab", 10, 1, 1.0, 0, 1, &text) == SQF_OK);
  const std::string cached = text;
  sqf_string_free(text);
  CHECK(cached.size() == 12);
  REQUIRE(sqf_generate(m.ptr, "ab", 10, 1, 1.0, 0, 0, &text) == SQF_OK);
  CHECK(cached == text);
  sqf_string_free(text);
  REQUIRE(sqf_generate(m.ptr, "ab", 0, 1, 1.0, 0, 1, &text) == SQF_OK);
  CHECK(std::string(text) == "ab");
  sqf_string_free(text);

  CHECK(sqf_generate(m.ptr, "abz", 3, 1, 1.0, 0, 1, &text) == SQF_ERR_INPUT);
  CHECK(std::string(sqf_last_error()).find('z') != std::string::npos);
  CHECK(sqf_generate(m.ptr, "ab", 3, 0, 0.0, 0, 1, &text) == SQF_ERR_CONFIG);
  CHECK(sqf_generate(m.ptr, "ab", 100, 1, 1.0, 0, 1, &text) == SQF_ERR_RANGE);
  std::size_t cls = 0;
  CHECK(sqf_classify(m.ptr, (out / "vocab.txt").c_str(), &cls, nullptr, 0) == SQF_ERR_CONTRACT);

  std::size_t files = 0;
  REQUIRE(sqf_inspect_attention(m.ptr, "abc", (out / "attn").c_str(), &files) == SQF_OK);
  CHECK(files == 2);
  CHECK(fs::exists(out / "attn" / "attn_L0_H1.txt"));

  const fs::path copy = out / "copy.sqfm";
  REQUIRE(sqf_model_save(m.ptr, copy.c_str()) == SQF_OK);
  CHECK(read_file(copy) == read_file(out / "model.sqfm"));
}

TEST_CASE("language model training errors") {
  const fs::path corpus = write_file("small.txt", "abcabc");
  const fs::path out = workdir() / "bad_out";
  CHECK(sqf_train_lm(write_file("nokey.cfg", "layers = 1\nhead = lm\n").c_str(), corpus.c_str(), out.c_str(),
                     nullptr, nullptr, nullptr) == SQF_ERR_CONFIG);
  CHECK(std::string(sqf_last_error()).find("d_model") != std::string::npos);
  CHECK(sqf_train_lm(write_file("vocab.cfg", kLmConfig + "vocab_size = 9\n").c_str(), corpus.c_str(), out.c_str(),
                     nullptr, nullptr, nullptr) == SQF_ERR_CONFIG);
  CHECK(sqf_train_lm(write_file("seq.cfg", "d_model = 8\nlayers = 1\nhead = lm\nn_max = 8\nseq_len = 16\n").c_str(),
                     corpus.c_str(), out.c_str(), nullptr, nullptr, nullptr) == SQF_ERR_CONFIG);
  CHECK(sqf_train_lm(write_file("ok.cfg", kLmConfig).c_str(), (workdir() / "nope.txt").c_str(), out.c_str(),
                     nullptr, nullptr, nullptr) != SQF_OK);
}

TEST_CASE("classifier workflow") {
  const fs::path data = workdir() / "images";
  REQUIRE(sqf_make_images(data.c_str(), "bright,dark", 10, 5, 4, 4, 3) == SQF_OK);
  CHECK(fs::exists(data / "train" / "dark" / "0009.pgm"));
  CHECK(fs::exists(data / "test" / "bright" / "0004.pgm"));
  CHECK(sqf_make_images(data.c_str(), "bright,plaid", 1, 1, 4, 4, 3) == SQF_ERR_CONFIG);
  CHECK_FALSE(fs::exists(data / "train" / "plaid"));

  const fs::path config = write_file("cls.cfg",
                                     "d_model = 8\nheads = 2\nlayers = 1\nhead = cls-token\npatch_h = 2\npatch_w = 2\n"
                                     "n_max = 5\nlr = 0.01\nsteps = 40\nbatch = 8\n");
  const fs::path out = workdir() / "cls_out";
  REQUIRE(sqf_train_cls(config.c_str(), data.c_str(), out.c_str(), nullptr, nullptr, nullptr) == SQF_OK);
  const std::string metrics = read_file(out / "metrics.csv");
  CHECK(metrics.rfind("split,examples,accuracy\ntrain,20,", 0) == 0);
  CHECK(metrics.find("test,10,1") != std::string::npos);

  Model m;
  REQUIRE(sqf_model_load((out / "model.sqfm").c_str(), &m.ptr) == SQF_OK);
  CHECK(std::string(sqf_model_label(m.ptr, 1)) == "dark");
  CHECK(sqf_model_label(m.ptr, 2) == nullptr);
  std::size_t cls = 9;
  double probs[2] = {0, 0};
  REQUIRE(sqf_classify(m.ptr, (data / "test" / "dark" / "0000.pgm").c_str(), &cls, probs, 2) == SQF_OK);
  CHECK(cls == 1);
  CHECK(probs[0] + probs[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sqf_classify(m.ptr, write_file("bad.pgm", "P5\n4 4\n255\nab").c_str(), &cls, nullptr, 0) == SQF_ERR_INPUT);

  const fs::path odd = workdir() / "odd";
  REQUIRE(sqf_make_images(odd.c_str(), "bright,dark", 2, 0, 4, 4, 1) == SQF_OK);
  REQUIRE(sqf_make_images((workdir() / "odd6").c_str(), "bright,dark", 1, 0, 6, 6, 1) == SQF_OK);
  fs::copy_file(workdir() / "odd6" / "train" / "bright" / "0000.pgm", odd / "train" / "dark" / "0099.pgm",
                fs::copy_options::overwrite_existing);
  CHECK(sqf_train_cls(config.c_str(), odd.c_str(), out.c_str(), nullptr, nullptr, nullptr) == SQF_ERR_INPUT);
  CHECK(std::string(sqf_last_error()).find("0099.pgm") != std::string::npos);

  fs::create_directories(odd / "train" / "empty");
  fs::remove(odd / "train" / "dark" / "0099.pgm");
  CHECK(sqf_train_cls(config.c_str(), odd.c_str(), out.c_str(), nullptr, nullptr, nullptr) == SQF_ERR_INPUT);
  CHECK(std::string(sqf_last_error()).find("empty") != std::string::npos);
}

TEST_CASE("gradient check and selftest") {
  const fs::path config = write_file("gc.cfg", "d_model = 8\nheads = 2\nlayers = 2\nhead = lm\nn_max = 8\n");
  int passed = 0;
  std::size_t rows = 0;
  const auto count_rows = [](const char*, size_t entries, double, size_t, void* user) {
    CHECK(entries > 0);
    ++*static_cast<std::size_t*>(user);
  };
  REQUIRE(sqf_gradcheck(config.c_str(), nullptr, -1.0, 0, count_rows, &rows, &passed) == SQF_OK);
  CHECK(passed == 1);
  CHECK(rows > 10);
  REQUIRE(sqf_gradcheck(config.c_str(), nullptr, -1.0, 1, nullptr, nullptr, &passed) == SQF_OK);
  CHECK(passed == 0);
  REQUIRE(sqf_gradcheck(config.c_str(), nullptr, 0.0, 0, nullptr, nullptr, &passed) == SQF_OK);
  CHECK(passed == 0);
  // A fault injected once must not leak into later checks.
  REQUIRE(sqf_gradcheck(config.c_str(), nullptr, -1.0, 0, nullptr, nullptr, &passed) == SQF_OK);
  CHECK(passed == 1);
  const fs::path huge = write_file("huge.cfg", "d_model = 256\nheads = 4\nlayers = 2\nhead = lm\n");
  CHECK(sqf_gradcheck(huge.c_str(), nullptr, -1.0, 0, nullptr, nullptr, &passed) == SQF_ERR_CONFIG);

  REQUIRE(sqf_selftest(1, nullptr, nullptr, &passed) == SQF_OK);
  CHECK(passed == 1);
}
