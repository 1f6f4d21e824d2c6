// SPDX-License-Identifier: Apache-2.0
#include "seqformer/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "seqformer/error.hpp"

namespace seqformer {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace

KeyValues KeyValues::parse(std::string_view text, const std::string& source) {
  KeyValues kv;
  kv.source_ = source;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorKind::config, source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) fail(ErrorKind::config, source + ":" + std::to_string(lineno) + ": empty key");
    if (kv.entries_.contains(key)) {
      fail(ErrorKind::config, source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    kv.entries_.emplace(key, Entry{value, lineno});
    if (end == text.size()) break;
  }
  return kv;
}

std::optional<std::string> KeyValues::take(const std::string& key) {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  consumed_.insert(key);
  return it->second.value;
}

std::string KeyValues::require(const std::string& key) {
  auto v = take(key);
  if (!v) fail(ErrorKind::config, source_ + ": missing required key '" + key + "'");
  return *v;
}

void KeyValues::bad_value(const std::string& key, const std::string& what) const {
  const Entry& e = entries_.at(key);
  fail(ErrorKind::config, source_ + ":" + std::to_string(e.line) + ": key '" + key + "' expects " + what +
                              ", got '" + e.value + "'");
}

std::optional<std::size_t> KeyValues::take_count(const std::string& key) {
  auto v = take(key);
  if (!v) return std::nullopt;
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) bad_value(key, "a non-negative integer");
  return out;
}

std::optional<std::uint64_t> KeyValues::take_u64(const std::string& key) {
  auto v = take(key);
  if (!v) return std::nullopt;
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) bad_value(key, "an unsigned 64-bit integer");
  return out;
}

std::optional<double> KeyValues::take_real(const std::string& key) {
  auto v = take(key);
  if (!v) return std::nullopt;
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size() || !std::isfinite(out)) bad_value(key, "a finite number");
  return out;
}

std::optional<bool> KeyValues::take_bool(const std::string& key) {
  auto v = take(key);
  if (!v) return std::nullopt;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  bad_value(key, "a boolean");
}

void KeyValues::finish() const {
  for (const auto& [key, entry] : entries_) {
    if (!consumed_.contains(key)) {
      fail(ErrorKind::config, source_ + ":" + std::to_string(entry.line) + ": unknown key '" + key + "'");
    }
  }
}

std::string hex_encode(std::string_view bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xF]);
  }
  return out;
}

std::string hex_decode(std::string_view hex) {
  if (hex.size() % 2 != 0) fail(ErrorKind::config, "hex string has odd length");
  const auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    fail(ErrorKind::config, std::string("bad hex digit '") + c + "'");
  };
  std::string out;
  for (std::size_t i = 0; i < hex.size(); i += 2)
    out.push_back(static_cast<char>((nibble(hex[i]) << 4) | nibble(hex[i + 1])));
  return out;
}

ModelConfig read_model_config(KeyValues& kv) {
  ModelConfig c;
  for (const char* key : {"d_model", "layers", "head"}) {
    if (!kv.contains(key)) fail(ErrorKind::config, kv.source() + ": missing required key '" + key + "'");
  }
  c.d_model = *kv.take_count("d_model");
  c.layers = *kv.take_count("layers");
  c.head = parse_head_kind(*kv.take("head"));
  if (auto v = kv.take_count("heads")) c.heads = *v;
  if (auto v = kv.take_count("key_dim")) c.key_dim = *v;
  if (auto v = kv.take_count("hidden")) c.hidden = *v;
  if (auto v = kv.take_count("vocab_size")) c.vocab_size = *v;
  if (auto v = kv.take_count("classes")) c.classes = *v;
  if (auto v = kv.take_count("n_max")) c.n_max = *v;
  if (auto v = kv.take("mask")) c.mask = parse_mask_mode(*v);
  else c.mask = c.head == HeadKind::lm ? MaskMode::causal : MaskMode::none;
  if (auto v = kv.take("position")) c.position = parse_position_mode(*v);
  if (auto v = kv.take("combine")) c.combine = parse_position_combine(*v);
  if (auto v = kv.take_count("pos_dim")) c.pos_dim = *v;
  if (auto v = kv.take_real("epsilon")) c.epsilon = *v;
  if (auto v = kv.take_bool("scale")) c.scale = *v;
  if (auto v = kv.take_bool("bos")) c.bos = *v;
  if (auto v = kv.take("activation")) c.activation = parse_activation(*v);
  if (auto v = kv.take_real("sin_base")) c.sin_base = *v;
  if (auto v = kv.take_count("patch_h")) c.patch_h = *v;
  if (auto v = kv.take_count("patch_w")) c.patch_w = *v;
  if (auto v = kv.take_count("image_h")) c.image_h = *v;
  if (auto v = kv.take_count("image_w")) c.image_w = *v;
  if (auto v = kv.take_count("channels")) c.channels = *v;
  if (auto v = kv.take_u64("seed")) c.seed = *v;
  if (auto v = kv.take("vocab_hex")) {
    c.symbols = hex_decode(*v);
    if (c.vocab_size == 0) c.vocab_size = c.symbols.size();
  }
  if (auto v = kv.take("class_names")) {
    std::stringstream ss(*v);
    std::string name;
    while (std::getline(ss, name, ',')) c.class_names.emplace_back(trim(name));
    if (c.classes == 0) c.classes = c.class_names.size();
  }
  return c;
}

std::string write_model_config(const ModelConfig& c) {
  std::ostringstream out;
  out << "d_model = " << c.d_model << '\n'
      << "heads = " << c.heads << '\n'
      << "key_dim = " << c.key_dim << '\n'
      << "layers = " << c.layers << '\n'
      << "hidden = " << c.hidden << '\n'
      << "head = " << to_string(c.head) << '\n'
      << "vocab_size = " << c.vocab_size << '\n'
      << "classes = " << c.classes << '\n'
      << "n_max = " << c.n_max << '\n'
      << "mask = " << to_string(c.mask) << '\n'
      << "position = " << to_string(c.position) << '\n'
      << "combine = " << to_string(c.combine) << '\n'
      << "pos_dim = " << c.pos_dim << '\n'
      << "epsilon = " << format_real(c.epsilon) << '\n'
      << "scale = " << (c.scale ? "true" : "false") << '\n'
      << "bos = " << (c.bos ? "true" : "false") << '\n'
      << "activation = " << to_string(c.activation) << '\n'
      << "sin_base = " << format_real(c.sin_base) << '\n'
      << "patch_h = " << c.patch_h << '\n'
      << "patch_w = " << c.patch_w << '\n'
      << "image_h = " << c.image_h << '\n'
      << "image_w = " << c.image_w << '\n'
      << "channels = " << c.channels << '\n'
      << "seed = " << c.seed << '\n';
  if (!c.symbols.empty()) out << "vocab_hex = " << hex_encode(c.symbols) << '\n';
  if (!c.class_names.empty()) {
    out << "class_names = ";
    for (std::size_t i = 0; i < c.class_names.size(); ++i) out << (i ? "," : "") << c.class_names[i];
    out << '\n';
  }
  return out.str();
}

ModelConfig parse_model_config(std::string_view text, const std::string& source) {
  KeyValues kv = KeyValues::parse(text, source);
  ModelConfig c = read_model_config(kv);
  kv.finish();
  return c;
}

RunConfig parse_run_config(std::string_view text, const std::string& source) {
  KeyValues kv = KeyValues::parse(text, source);
  RunConfig rc;
  rc.model = read_model_config(kv);
  TrainSettings& t = rc.train;
  if (auto v = kv.take_real("lr")) t.lr = *v;
  if (auto v = kv.take_real("beta1")) t.beta1 = *v;
  if (auto v = kv.take_real("beta2")) t.beta2 = *v;
  if (auto v = kv.take_real("adam_eps")) t.adam_eps = *v;
  if (auto v = kv.take_real("clip_norm")) t.clip_norm = *v;
  if (auto v = kv.take("lr_schedule")) t.schedule = parse_lr_schedule(*v);
  if (auto v = kv.take_count("steps")) t.steps = *v;
  if (auto v = kv.take_count("seq_len")) t.seq_len = *v;
  if (auto v = kv.take_count("batch")) t.batch = *v;
  if (auto v = kv.take_real("gradcheck_h")) rc.gradcheck.step = *v;
  if (auto v = kv.take_real("gradcheck_tol")) rc.gradcheck.tolerance = *v;
  if (auto v = kv.take_count("gradcheck_seq_len")) rc.gradcheck.seq_len = *v;
  if (auto v = kv.take("corpus")) rc.corpus = *v;
  if (auto v = kv.take("data_dir")) rc.data_dir = *v;
  if (auto v = kv.take("out_dir")) rc.out_dir = *v;
  kv.finish();
  if (t.lr < 0.0) fail(ErrorKind::config, source + ": lr must be non-negative");
  if (t.clip_norm < 0.0) fail(ErrorKind::config, source + ": clip_norm must be non-negative");
  if (t.seq_len == 0) fail(ErrorKind::config, source + ": seq_len must be positive");
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::config, "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

}  // namespace seqformer
