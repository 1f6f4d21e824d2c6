// SPDX-License-Identifier: Apache-2.0
// Runs the seqformer executable end to end.
#include <sys/wait.h>

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "seqformer/checkpoint.hpp"
#include "support.hpp"

using namespace seqformer;
namespace fs = std::filesystem;

namespace {

fs::path workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "seqformer_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = workdir() / name;
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cli(const std::string& args, const std::string& env = "") {
  const fs::path out = workdir() / "stdout.txt";
  const fs::path err = workdir() / "stderr.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" SEQFORMER_CLI "' " + args + " >'" + out.string() +
                          "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

const std::string kLm =
    "d_model = 8\nheads = 2\nlayers = 2\nhead = lm\nn_max = 40\nlr = 0.01\nsteps = 15\nseq_len = 16\nseed = 5\n";

fs::path trained_lm() {
  static const fs::path out = [] {
    const fs::path dir = workdir() / "lm";
    write_file("corpus.txt", "the cat sat on the mat. the cat sat on the mat.\n");
    const Run r = cli("train-lm " + q(write_file("lm.cfg", kLm)) + " " + q(workdir() / "corpus.txt") + " -o " +
                      q(dir) + " -q");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return dir;
  }();
  return out;
}

}  // namespace

TEST_CASE("usage errors exit with status 2") {
  CHECK(cli("").code == 2);
  CHECK(cli("no-such-command").code == 2);
  CHECK(cli("generate").code == 2);
  CHECK(cli("--help").code == 0);
  CHECK(cli("--version").out.find("0.1.0") != std::string::npos);
}

TEST_CASE("a config missing a required key names it") {
  const Run r = cli("train-lm " + q(write_file("nodim.cfg", "layers = 1\nhead = lm\n")) + " " +
                    q(write_file("c.txt", "abcabc")) + " -o " + q(workdir() / "x"));
  CHECK(r.code == 2);
  CHECK(r.err.find("d_model") != std::string::npos);
  const Run u = cli("train-lm " + q(write_file("typo.cfg", kLm + "step = 3\n")) + " " + q(workdir() / "c.txt") +
                    " -o " + q(workdir() / "x"));
  CHECK(u.code == 2);
  CHECK(u.err.find("'step'") != std::string::npos);
}

TEST_CASE("gradcheck passes by default and fails under a fault or zero tolerance") {
  const fs::path cfg = write_file("gc.cfg", "d_model = 8\nheads = 2\nlayers = 1\nhead = lm\nn_max = 8\n");
  const Run ok = cli("gradcheck " + q(cfg));
  CHECK(ok.code == 0);
  CHECK(ok.out.find("PASS") != std::string::npos);
  CHECK(ok.out.find("lm_head") != std::string::npos);
  const Run fault = cli("gradcheck " + q(cfg) + " --inject-adjoint-fault");
  CHECK(fault.code == 1);
  CHECK(fault.out.find("FAIL") != std::string::npos);
  CHECK(cli("gradcheck " + q(cfg) + " --tol 0").code == 1);
  const Run cls = cli("gradcheck " + q(write_file("gc_cls.cfg", "d_model = 8\nheads = 2\nlayers = 1\nhead = cls-pool\n"
                                                                "patch_h = 2\npatch_w = 2\nimage_h = 4\nimage_w = 4\n")));
  CHECK_MESSAGE(cls.code == 0, cls.out << cls.err);
}

TEST_CASE("generation through the command line") {
  const fs::path model = trained_lm() / "model.sqfm";
  const Run echo = cli("generate " + q(model) + " 'the c' -n 0");
  CHECK(echo.code == 0);
  CHECK(echo.out == "the c\n");
  const Run greedy = cli("generate " + q(model) + " 'the c' -n 20");
  CHECK(greedy.code == 0);
  CHECK(greedy.out.size() == 26);
  CHECK(cli("generate " + q(model) + " 'the c' -n 20 --no-cache").out == greedy.out);
  const Run hot = cli("generate " + q(model) + " 'the c' -n 20 -t 0.8 --seed 3");
  CHECK(hot.out == cli("generate " + q(model) + " 'the c' -n 20 -t 0.8 --seed 3").out);
  const Run unknown = cli("generate " + q(model) + " 'the dog' -n 5");
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("input") != std::string::npos);
  CHECK(cli("generate " + q(model) + " 'the' -n 5 -t 0").code == 2);
  CHECK(cli("generate " + q(model) + " 'the' -n 500").code == 1);
  CHECK(cli("generate " + q(workdir() / "absent.sqfm") + " 'the' -n 5").code == 2);
}

TEST_CASE("training reruns are byte identical and seeds follow precedence") {
  const fs::path cfg = workdir() / "lm.cfg";
  trained_lm();
  const std::string base = "train-lm " + q(cfg) + " " + q(workdir() / "corpus.txt") + " -q -o ";
  REQUIRE(cli(base + q(workdir() / "rerun")).code == 0);
  CHECK(read_file(workdir() / "rerun" / "model.sqfm") == read_file(trained_lm() / "model.sqfm"));
  CHECK(read_file(workdir() / "rerun" / "loss.csv") == read_file(trained_lm() / "loss.csv"));

  REQUIRE(cli(base + q(workdir() / "env9"), "SEQFORMER_SEED=9").code == 0);
  REQUIRE(cli(base + q(workdir() / "flag9") + " --seed 9").code == 0);
  REQUIRE(cli(base + q(workdir() / "both") + " --seed 5", "SEQFORMER_SEED=9").code == 0);
  CHECK(read_file(workdir() / "env9" / "model.sqfm") == read_file(workdir() / "flag9" / "model.sqfm"));
  CHECK(read_file(workdir() / "env9" / "loss.csv") != read_file(trained_lm() / "loss.csv"));
  CHECK(read_file(workdir() / "both" / "loss.csv") == read_file(trained_lm() / "loss.csv"));
  CHECK(cli(base + q(workdir() / "bad"), "SEQFORMER_SEED=abc").code == 2);
}

TEST_CASE("attention dumps match in-process values") {
  const fs::path dir = workdir() / "attn";
  const Run r = cli("inspect-attention " + q(trained_lm() / "model.sqfm") + " 'the mat' -o " + q(dir));
  REQUIRE_MESSAGE(r.code == 0, r.err);

  const Checkpoint ck = load_checkpoint(trained_lm() / "model.sqfm");
  std::vector<std::size_t> ids;
  for (char ch : std::string("the mat")) ids.push_back(ck.config.symbols.find(ch));
  const ForwardTrace trace = forward_traced(lm_input(ids, ck.params, ck.config), ck.params, ck.config);

  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t h = 0; h < 2; ++h) {
      std::istringstream in(read_file(dir / ("attn_L" + std::to_string(l) + "_H" + std::to_string(h) + ".txt")));
      std::size_t fl = 9, fh = 9, n = 0;
      in >> fl >> fh >> n;
      CHECK(fl == l);
      CHECK(fh == h);
      REQUIRE(n == 8);  // BOS plus seven characters
      const Tensor& a = trace.attention[l][h];
      std::vector<double> colsum(n);
      for (std::size_t row = 0; row < n; ++row)
        for (std::size_t col = 0; col < n; ++col) {
          std::string tok;
          in >> tok;
          double v = 0.0;
          std::from_chars(tok.data(), tok.data() + tok.size(), v);
          CHECK(v == a(row, col));
          colsum[col] += v;
          if (row > col) CHECK(v == 0.0);
        }
      for (double s : colsum) CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("image classification through the command line") {
  const fs::path data = workdir() / "images";
  REQUIRE(cli("make-images -o " + q(data) + " --kinds bright,dark --train 30 --test 100 --size 4 --seed 2").code == 0);
  const fs::path cfg = write_file("cls.cfg",
                                  "d_model = 8\nheads = 2\nlayers = 1\nhead = cls-pool\npatch_h = 2\npatch_w = 2\n"
                                  "lr = 0.01\nsteps = 60\nbatch = 10\n");
  const Run r = cli("train-cls " + q(cfg) + " " + q(data) + " -o " + q(workdir() / "cls") + " -q");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const std::string metrics = read_file(workdir() / "cls" / "metrics.csv");
  const auto at = metrics.find("test,200,");
  REQUIRE(at != std::string::npos);
  CHECK(std::stod(metrics.substr(at + 9)) >= 0.99);

  const Run c = cli("classify " + q(workdir() / "cls" / "model.sqfm") + " " + q(data / "test" / "dark" / "0007.pgm"));
  CHECK(c.code == 0);
  CHECK(c.out == "1 dark\n");
  CHECK(cli("classify " + q(workdir() / "cls" / "model.sqfm") + " " + q(write_file("bad.pgm", "P5\n1"))).code == 2);
}

TEST_CASE("selftest exits cleanly") {
  const Run r = cli("selftest");
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') >= 10);
}

TEST_CASE("zero learning rate gives a flat loss trace and an empty corpus is rejected") {
  const fs::path corpus = write_file("flat.txt", "abcabcabcabcabcabcabcabcabcabcabcabc");
  REQUIRE(cli("train-lm " + q(write_file("flat_fixed.cfg", "d_model = 8\nheads = 2\nlayers = 1\nhead = lm\n"
                                                            "n_max = 20\nlr = 0\nsteps = 6\nseq_len = 12\n")) +
              " " + q(corpus) + " -q -o " + q(workdir() / "flat"))
              .code == 0);
  std::istringstream in(read_file(workdir() / "flat" / "loss.csv"));
  std::string line, first;
  std::getline(in, line);
  CHECK(line == "step,loss");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    const std::string loss = line.substr(line.find(',') + 1);
    if (rows++ == 0) first = loss;
    CHECK(loss == first);
  }
  CHECK(rows == 6);
  const Run empty = cli("train-lm " + q(workdir() / "flat_fixed.cfg") + " " + q(write_file("empty.txt", "")) +
                        " -o " + q(workdir() / "empty"));
  CHECK(empty.code == 2);
  CHECK(empty.err.find("empty") != std::string::npos);
}

TEST_CASE("a pattern-trained model continues the pattern") {
  std::string text;
  for (int i = 0; i < 200; ++i) text += "abc";
  const fs::path cfg = write_file("pattern.cfg", "d_model = 16\nheads = 2\nlayers = 1\nhead = lm\nn_max = 129\n"
                                                 "lr = 0.01\nsteps = 120\nseq_len = 128\n");
  const Run r = cli("train-lm " + q(cfg) + " " + q(write_file("pattern.txt", text)) + " -q -o " +
                    q(workdir() / "pattern"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const Run g = cli("generate " + q(workdir() / "pattern" / "model.sqfm") + " ab -n 100");
  REQUIRE(g.code == 0);
  REQUIRE(g.out.size() == 103);
  std::size_t correct = 0;
  for (std::size_t i = 2; i < 102; ++i) correct += g.out[i] == "abc"[i % 3];
  CHECK_MESSAGE(correct >= 95, g.out);
}

TEST_CASE("single-position attention dumps hold exactly one") {
  const fs::path dir = workdir() / "attn1";
  REQUIRE(cli("inspect-attention " + q(trained_lm() / "model.sqfm") + " '' -o " + q(dir)).code == 0);
  for (const char* name : {"attn_L0_H0.txt", "attn_L0_H1.txt", "attn_L1_H0.txt", "attn_L1_H1.txt"}) {
    const std::string text = read_file(dir / name);
    CHECK(text.substr(text.find('\n') + 1) == "1.0\n");
  }
}

TEST_CASE("one training image per class is memorised") {
  const fs::path data = workdir() / "one";
  REQUIRE(cli("make-images -o " + q(data) + " --kinds striped,checker --train 1 --test 0 --size 4").code == 0);
  const fs::path cfg = write_file("one.cfg", "d_model = 8\nheads = 2\nlayers = 1\nhead = cls-token\npatch_h = 2\n"
                                             "patch_w = 2\nlr = 0.01\nsteps = 50\n");
  REQUIRE(cli("train-cls " + q(cfg) + " " + q(data) + " -q -o " + q(workdir() / "one_out")).code == 0);
  CHECK(read_file(workdir() / "one_out" / "metrics.csv") == "split,examples,accuracy\ntrain,2,1.0\n");
}
