// SPDX-License-Identifier: Apache-2.0
#include "seqformer/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "seqformer/config.hpp"
#include "seqformer/error.hpp"

namespace seqformer {

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'F', 'M'};

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  out.append(reinterpret_cast<const char*>(bits.data()), bits.size());
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    std::array<unsigned char, sizeof(T)> bits{};
    need(sizeof(T), what);
    std::memcpy(bits.data(), bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    return std::bit_cast<T>(bits);
  }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      fail(ErrorKind::corruption, std::string("checkpoint truncated while reading ") + what);
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const ModelConfig& config, const ModelParams& params) {
  config.validate();
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string text = write_model_config(config);
  put<std::uint64_t>(out, text.size());
  out += text;
  const auto slots = parameter_slots(params, config);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(slots.size()));
  for (const ConstParamSlot& s : slots) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.name.size()));
    out += s.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.value->rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.value->cols()));
    for (double v : s.value->data()) put<double>(out, v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    fail(ErrorKind::format, "not a seqformer checkpoint (bad magic)");
  }
  Reader r(bytes);
  r.text(sizeof kMagic, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    fail(ErrorKind::format, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto text_len = r.get<std::uint64_t>("config length");
  if (text_len > bytes.size()) fail(ErrorKind::corruption, "checkpoint config length exceeds file size");
  const std::string text = r.text(static_cast<std::size_t>(text_len), "config");

  Checkpoint ck;
  try {
    ck.config = parse_model_config(text, "checkpoint config");
    ck.config.validate();
  } catch (const Error& e) {
    fail(ErrorKind::corruption, std::string("checkpoint config is invalid: ") + e.what());
  }
  Rng rng(0);
  ck.params = init_model(ck.config, rng);
  auto slots = parameter_slots(ck.params, ck.config);

  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != slots.size()) {
    fail(ErrorKind::corruption, "checkpoint holds " + std::to_string(count) + " tensors, config needs " +
                                    std::to_string(slots.size()));
  }
  for (ParamSlot& slot : slots) {
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    const std::string name = r.text(name_len, "tensor name");
    if (name != slot.name) {
      fail(ErrorKind::corruption, "checkpoint tensor '" + name + "' where '" + slot.name + "' was expected");
    }
    const auto rows = r.get<std::uint32_t>("tensor rows");
    const auto cols = r.get<std::uint32_t>("tensor cols");
    if (rows != slot.value->rows() || cols != slot.value->cols()) {
      fail(ErrorKind::corruption, "checkpoint tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                                      std::to_string(cols) + ", expected " + slot.value->shape_string());
    }
    for (double& v : slot.value->data()) v = r.get<double>("tensor data");
  }
  if (!r.done()) fail(ErrorKind::corruption, "checkpoint has trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params) {
  const std::string bytes = serialize_checkpoint(config, params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace seqformer
