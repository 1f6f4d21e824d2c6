// SPDX-License-Identifier: Apache-2.0
#include <cstring>
#include <filesystem>

#include "seqformer/checkpoint.hpp"
#include "seqformer/config.hpp"
#include "support.hpp"

using namespace seqformer;
namespace fs = std::filesystem;

namespace {

ModelConfig small_lm() {
  ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.layers = 2;
  c.vocab_size = 4;
  c.n_max = 10;
  c.symbols = "ab\nc";
  return c;
}

void replace_once(std::string& bytes, const std::string& from, const std::string& to) {
  REQUIRE(from.size() == to.size());
  const auto at = bytes.find(from);
  REQUIRE(at != std::string::npos);
  bytes.replace(at, from.size(), to);
}

void check_same_params(const ModelParams& a, const ModelParams& b, const ModelConfig& c) {
  const auto sa = parameter_slots(a, c);
  const auto sb = parameter_slots(b, c);
  REQUIRE(sa.size() == sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    CHECK(sa[i].name == sb[i].name);
    CHECK(*sa[i].value == *sb[i].value);
  }
}

}  // namespace

TEST_CASE("key-value parsing") {
  KeyValues kv = KeyValues::parse("# header\n a = 1 \n\nb=two # trailing\nflag = yes\nx = 2.5e-3", "t.cfg");
  CHECK(kv.take_count("a") == 1u);
  CHECK(kv.take("b") == "two");
  CHECK(kv.take_bool("flag") == true);
  CHECK(kv.take_real("x") == 2.5e-3);
  CHECK_FALSE(kv.take("missing").has_value());
  CHECK_NOTHROW(kv.finish());

  CHECK_KIND(KeyValues::parse("a = 1\na = 2\n", "t"), ErrorKind::config);
  CHECK_KIND(KeyValues::parse("just words\n", "t"), ErrorKind::config);
  CHECK_KIND(KeyValues::parse("= 3\n", "t"), ErrorKind::config);

  KeyValues bad = KeyValues::parse("n = -3\nr = inf\nb = maybe\n", "t");
  CHECK_KIND(bad.take_count("n"), ErrorKind::config);
  CHECK_KIND(bad.take_real("r"), ErrorKind::config);
  CHECK_KIND(bad.take_bool("b"), ErrorKind::config);
}

TEST_CASE("run config errors name the offending key") {
  const std::string base = "d_model = 8\nlayers = 1\nhead = lm\nvocab_size = 4\n";
  CHECK_NOTHROW(parse_run_config(base, "ok.cfg"));
  const std::string missing = error_text([] { parse_run_config("layers = 1\nhead = lm\n", "m.cfg"); });
  CHECK(missing.find("d_model") != std::string::npos);
  const std::string unknown = error_text([&] { parse_run_config(base + "learning_rate = 0.1\n", "u.cfg"); });
  CHECK(unknown.find("learning_rate") != std::string::npos);
  CHECK(unknown.find("u.cfg:5") != std::string::npos);
  CHECK_KIND(parse_run_config(base + "lr = -1\n", "t"), ErrorKind::config);
  CHECK_KIND(parse_run_config(base + "seq_len = 0\n", "t"), ErrorKind::config);
  CHECK_KIND(parse_run_config(base + "lr_schedule = cosine\n", "t"), ErrorKind::config);
  CHECK_KIND(parse_run_config(base + "mask = sometimes\n", "t"), ErrorKind::config);
  CHECK_KIND(load_run_config("/nonexistent/run.cfg"), ErrorKind::config);

  const RunConfig rc = parse_run_config(base + "steps = 7\nlr_schedule = linear\nbatch = 3\n", "t");
  CHECK(rc.train.steps == 7);
  CHECK(rc.train.schedule == LrSchedule::linear);
  CHECK(rc.model.mask == MaskMode::causal);
  CHECK(parse_run_config("d_model = 8\nlayers = 1\nhead = cls-pool\n", "t").model.mask == MaskMode::none);
}

TEST_CASE("model config text round trip") {
  ModelConfig c = small_lm();
  c.position = PositionMode::sinusoidal;
  c.epsilon = 3e-7;
  const std::string text = write_model_config(c);
  const ModelConfig back = parse_model_config(text, "roundtrip");
  CHECK(write_model_config(back) == text);
  CHECK(back.symbols == c.symbols);
  CHECK(back.epsilon == c.epsilon);
  CHECK(hex_decode(hex_encode(std::string("\x00\xff\n", 3))) == std::string("\x00\xff\n", 3));
  CHECK_KIND(hex_decode("abc"), ErrorKind::config);
  CHECK_KIND(hex_decode("zz"), ErrorKind::config);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(1);
  for (HeadKind head : {HeadKind::lm, HeadKind::cls_token}) {
    ModelConfig c = small_lm();
    if (head != HeadKind::lm) {
      c = ModelConfig{};
      c.d_model = 8;
      c.heads = 2;
      c.head = head;
      c.mask = MaskMode::none;
      c.classes = 2;
      c.class_names = {"bright", "dark"};
      c.patch_h = c.patch_w = 2;
      c.image_h = c.image_w = 4;
      c.n_max = 5;
    }
    const ModelParams p = init_model(c, rng);
    const std::string bytes = serialize_checkpoint(c, p);
    const Checkpoint ck = deserialize_checkpoint(bytes);
    check_same_params(p, ck.params, c);
    CHECK(write_model_config(ck.config) == write_model_config(c));
    CHECK(serialize_checkpoint(ck.config, ck.params) == bytes);

    const fs::path file = fs::temp_directory_path() / "seqformer_test_io.sqfm";
    save_checkpoint(file, c, p);
    check_same_params(p, load_checkpoint(file).params, c);
  }
}

TEST_CASE("damaged checkpoints are classified") {
  Rng rng(2);
  const ModelConfig c = small_lm();
  const ModelParams p = init_model(c, rng);
  const std::string bytes = serialize_checkpoint(c, p);

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_KIND(deserialize_checkpoint(bad), ErrorKind::format);
  CHECK_KIND(deserialize_checkpoint(""), ErrorKind::format);
  bad = bytes;
  bad[4] = 2;
  CHECK_KIND(deserialize_checkpoint(bad), ErrorKind::format);

  for (std::size_t len = 4; len < bytes.size(); len += (len < 400 ? 1 : 97))
    CHECK_KIND(deserialize_checkpoint(bytes.substr(0, len)), ErrorKind::corruption);
  CHECK_KIND(deserialize_checkpoint(bytes + '\0'), ErrorKind::corruption);

  bad = bytes;
  replace_once(bad, "lm_head", "lm_hexd");
  CHECK_KIND(deserialize_checkpoint(bad), ErrorKind::corruption);
  bad = bytes;
  replace_once(bad, "layers = 2", "layers = 1");
  CHECK_KIND(deserialize_checkpoint(bad), ErrorKind::corruption);
  bad = bytes;
  replace_once(bad, "d_model = 8", "d_model = 6");
  CHECK_KIND(deserialize_checkpoint(bad), ErrorKind::corruption);
  bad = bytes;
  replace_once(bad, "mask = causal", "mask = casual");
  CHECK_KIND(deserialize_checkpoint(bad), ErrorKind::corruption);

  ModelParams wrong = p;
  wrong.lm_head = Tensor(8, 3);
  CHECK_KIND(deserialize_checkpoint(serialize_checkpoint(c, wrong)), ErrorKind::corruption);

  CHECK_KIND(load_checkpoint("/nonexistent/model.sqfm"), ErrorKind::io);
  CHECK_KIND(save_checkpoint("/nonexistent/dir/model.sqfm", c, p), ErrorKind::io);
}
