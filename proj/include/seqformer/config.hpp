// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "seqformer/model.hpp"
#include "seqformer/train.hpp"

namespace seqformer {

/// `key = value` lines with `#` comments. Every key must be consumed by a
/// reader before `finish()`, otherwise it is reported as unknown.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text, const std::string& source);

  bool contains(const std::string& key) const { return entries_.contains(key); }
  std::optional<std::string> take(const std::string& key);
  std::string require(const std::string& key);

  std::optional<std::size_t> take_count(const std::string& key);
  std::optional<double> take_real(const std::string& key);
  std::optional<bool> take_bool(const std::string& key);
  std::optional<std::uint64_t> take_u64(const std::string& key);

  /// Throws a config error naming the first key nobody consumed.
  void finish() const;
  const std::string& source() const { return source_; }

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };

  [[noreturn]] void bad_value(const std::string& key, const std::string& what) const;

  std::string source_;
  std::map<std::string, Entry> entries_;
  std::set<std::string> consumed_;
};

/// Reads model keys from `kv`. Missing required keys (d_model, layers,
/// head) are config errors that name the key.
ModelConfig read_model_config(KeyValues& kv);
/// Canonical text form, parseable by read_model_config.
std::string write_model_config(const ModelConfig& config);
ModelConfig parse_model_config(std::string_view text, const std::string& source);

struct GradcheckSettings {
  double step = 1e-5;
  double tolerance = 1e-6;
  std::size_t seq_len = 5;  // tokens per LM sequence under check
};

struct RunConfig {
  ModelConfig model;
  TrainSettings train;
  GradcheckSettings gradcheck;
  std::string corpus;
  std::string data_dir;
  std::string out_dir;
};

RunConfig parse_run_config(std::string_view text, const std::string& source);
RunConfig load_run_config(const std::filesystem::path& path);

std::string hex_encode(std::string_view bytes);
std::string hex_decode(std::string_view hex);

}  // namespace seqformer
