// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "seqformer/model.hpp"

namespace seqformer {

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

/// Binary layout, little-endian throughout:
///   "SQFM", u32 version (1), u64 config length, config text,
///   u32 tensor count, then per tensor: u32 name length, name,
///   u32 rows, u32 cols, rows*cols f64 values in row-major order.
std::string serialize_checkpoint(const ModelConfig& config, const ModelParams& params);
/// Bad magic or version is a format error; truncation, trailing bytes or a
/// tensor set that does not match the config is a corruption error.
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace seqformer
