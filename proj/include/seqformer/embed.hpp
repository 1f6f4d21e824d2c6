// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqformer/autodiff.hpp"
#include "seqformer/tensor.hpp"

namespace seqformer {

struct TokenTable {
  Tensor table;  // D x W, one learned column per symbol

  std::size_t vocab_size() const { return table.cols(); }
};

/// Pixels in row-major order, channels innermost, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
};

struct PatchEmbedder {
  std::size_t patch_h = 0;
  std::size_t patch_w = 0;
  std::size_t channels = 1;
  Tensor weight;  // D x (patch_h * patch_w * channels)

  std::size_t patch_dim() const { return patch_h * patch_w * channels; }
};

enum class PositionMode { none, learned, sinusoidal };
enum class PositionCombine { additive, concat };

std::string_view to_string(PositionMode m);
std::string_view to_string(PositionCombine c);
PositionMode parse_position_mode(std::string_view s);
PositionCombine parse_position_combine(std::string_view s);

struct PositionEncoding {
  PositionMode mode = PositionMode::none;
  PositionCombine combine = PositionCombine::additive;
  Tensor table;  // D_pos x N_max; empty when mode == none

  std::size_t max_positions() const { return table.cols(); }
  std::size_t dim() const { return table.rows(); }
};

/// Column n is table[:, ids[n]].
Tensor embed_tokens(std::span<const std::size_t> ids, const TokenTable& t);

/// Vectorised patches as columns, patches in row-major grid order and each
/// patch flattened pixel-row-major with channels innermost.
Tensor patch_matrix(const Image& image, std::size_t patch_h, std::size_t patch_w);
/// W_patch times the patch matrix.
Tensor embed_patches(const Image& image, const PatchEmbedder& pe);

/// e[2i, n] = sin(n / base^(2i/D)), e[2i+1, n] = cos(n / base^(2i/D)).
Tensor sinusoidal_positions(std::size_t d, std::size_t n, double base = 10000.0);

/// Attaches positions offset..offset+N-1. Additive adds the table columns;
/// concat stacks content rows above position rows.
Tensor add_positions(const Tensor& x, const PositionEncoding& p, std::size_t offset = 0);

struct ConcatEquivalence {
  Tensor w_prime;  // D' x P
  Tensor e_prime;  // D' x 1
};

/// Splits V = [V_c | V_p] by columns so V [W p; e] = (V_c W) p + V_p e.
ConcatEquivalence concat_additive_equivalence(const Tensor& v, const Tensor& w, const Tensor& e);

/// Vocabulary file: one symbol per line, line index = token id. Newline and
/// backslash are written as the escapes \n and \\.
void write_vocab(const std::filesystem::path& path, std::string_view symbols);
std::string read_vocab(const std::filesystem::path& path);

/// Portable graymap reader for P2 (ASCII) and P5 (binary, maxval < 256).
Image read_pgm(const std::filesystem::path& path);
/// Writes a binary P5 file, quantising [0, 1] to 0..255.
void write_pgm(const std::filesystem::path& path, const Image& image);

namespace ad {
/// `table` holds the position table on the tape (a parameter when learned,
/// a constant when sinusoidal); ignored when the mode is none.
Var add_positions(Var x, const PositionEncoding& p, Var table, std::size_t offset = 0);
}  // namespace ad

}  // namespace seqformer
