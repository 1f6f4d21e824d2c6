// SPDX-License-Identifier: Apache-2.0
#include "seqformer/embed.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "seqformer/error.hpp"

namespace seqformer {

std::string_view to_string(PositionMode m) {
  switch (m) {
    case PositionMode::none: return "none";
    case PositionMode::learned: return "learned";
    case PositionMode::sinusoidal: return "sinusoidal";
  }
  return "none";
}

std::string_view to_string(PositionCombine c) {
  return c == PositionCombine::additive ? "additive" : "concat";
}

PositionMode parse_position_mode(std::string_view s) {
  if (s == "none") return PositionMode::none;
  if (s == "learned") return PositionMode::learned;
  if (s == "sinusoidal") return PositionMode::sinusoidal;
  fail(ErrorKind::config, "unknown position mode '" + std::string(s) + "'");
}

PositionCombine parse_position_combine(std::string_view s) {
  if (s == "additive") return PositionCombine::additive;
  if (s == "concat") return PositionCombine::concat;
  fail(ErrorKind::config, "unknown position combine '" + std::string(s) + "'");
}

Tensor embed_tokens(std::span<const std::size_t> ids, const TokenTable& t) {
  Tensor out(t.table.rows(), ids.size());
  for (std::size_t n = 0; n < ids.size(); ++n) {
    if (ids[n] >= t.vocab_size()) {
      fail(ErrorKind::index, "token id " + std::to_string(ids[n]) + " at position " + std::to_string(n) +
                                 " outside vocabulary of " + std::to_string(t.vocab_size()));
    }
    for (std::size_t r = 0; r < out.rows(); ++r) out(r, n) = t.table(r, ids[n]);
  }
  return out;
}

Tensor patch_matrix(const Image& image, std::size_t patch_h, std::size_t patch_w) {
  if (patch_h == 0 || patch_w == 0 || image.height % patch_h != 0 || image.width % patch_w != 0) {
    fail(ErrorKind::shape, "image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                               " is not divisible into " + std::to_string(patch_h) + "x" +
                               std::to_string(patch_w) + " patches");
  }
  if (image.pixels.size() != image.height * image.width * image.channels) {
    fail(ErrorKind::shape, "image pixel buffer does not match its dimensions");
  }
  const std::size_t grid_h = image.height / patch_h, grid_w = image.width / patch_w;
  Tensor out(patch_h * patch_w * image.channels, grid_h * grid_w);
  for (std::size_t gy = 0; gy < grid_h; ++gy) {
    for (std::size_t gx = 0; gx < grid_w; ++gx) {
      const std::size_t n = gy * grid_w + gx;
      std::size_t r = 0;
      for (std::size_t py = 0; py < patch_h; ++py)
        for (std::size_t px = 0; px < patch_w; ++px)
          for (std::size_t c = 0; c < image.channels; ++c)
            out(r++, n) = image.at(gy * patch_h + py, gx * patch_w + px, c);
    }
  }
  return out;
}

Tensor embed_patches(const Image& image, const PatchEmbedder& pe) {
  if (image.channels != pe.channels) {
    fail(ErrorKind::shape, "image has " + std::to_string(image.channels) + " channels, embedder expects " +
                               std::to_string(pe.channels));
  }
  if (pe.weight.cols() != pe.patch_dim()) {
    fail(ErrorKind::shape, "patch weight " + pe.weight.shape_string() + " does not match patch size " +
                               std::to_string(pe.patch_dim()));
  }
  return matmul(pe.weight, patch_matrix(image, pe.patch_h, pe.patch_w));
}

Tensor sinusoidal_positions(std::size_t d, std::size_t n, double base) {
  if (d == 0 || d % 2 != 0) fail(ErrorKind::config, "sinusoidal positions need an even dimension, got " + std::to_string(d));
  Tensor out(d, n);
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double freq = std::pow(base, -static_cast<double>(2 * i) / static_cast<double>(d));
    for (std::size_t pos = 0; pos < n; ++pos) {
      const double angle = static_cast<double>(pos) * freq;
      out(2 * i, pos) = std::sin(angle);
      out(2 * i + 1, pos) = std::cos(angle);
    }
  }
  return out;
}

namespace {

void check_position_range(const PositionEncoding& p, std::size_t offset, std::size_t n) {
  if (offset + n > p.max_positions()) {
    fail(ErrorKind::range, "sequence of " + std::to_string(offset + n) + " positions exceeds N_max = " +
                               std::to_string(p.max_positions()));
  }
}

}  // namespace

Tensor add_positions(const Tensor& x, const PositionEncoding& p, std::size_t offset) {
  if (p.mode == PositionMode::none) return x;
  check_position_range(p, offset, x.cols());
  const Tensor slice = slice_cols(p.table, offset, x.cols());
  if (p.combine == PositionCombine::additive) return add(x, slice);
  return concat_rows(x, slice);
}

ConcatEquivalence concat_additive_equivalence(const Tensor& v, const Tensor& w, const Tensor& e) {
  const std::size_t content = w.rows();
  if (e.cols() != 1) fail(ErrorKind::shape, "position vector must be a column");
  if (v.cols() != content + e.rows()) {
    fail(ErrorKind::shape, "V " + v.shape_string() + " does not act on [" + std::to_string(content) + " + " +
                               std::to_string(e.rows()) + "] stacked rows");
  }
  const Tensor vt = transpose(v);
  const Tensor v_content = transpose(slice_rows(vt, 0, content));
  const Tensor v_position = transpose(slice_rows(vt, content, e.rows()));
  return ConcatEquivalence{matmul(v_content, w), matmul(v_position, e)};
}

void write_vocab(const std::filesystem::path& path, std::string_view symbols) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write vocabulary file " + path.string());
  for (char c : symbols) {
    if (c == '\n') out << "\\n";
    else if (c == '\\') out << "\\\\";
    else out << c;
    out << '\n';
  }
}

std::string read_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read vocabulary file " + path.string());
  std::string symbols, line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line == "\\n") symbols.push_back('\n');
    else if (line == "\\\\") symbols.push_back('\\');
    else if (line.size() == 1) symbols.push_back(line[0]);
    else fail(ErrorKind::input, "vocabulary line " + std::to_string(lineno) + " is not a single symbol");
  }
  return symbols;
}

namespace {

std::string next_pgm_token(std::istream& in, const std::string& name) {
  std::string tok;
  while (true) {
    int ch = in.peek();
    if (ch == EOF) fail(ErrorKind::input, name + ": truncated PGM header");
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  while (in.peek() != EOF && !std::isspace(in.peek())) tok.push_back(static_cast<char>(in.get()));
  return tok;
}

std::size_t parse_pgm_number(const std::string& tok, const std::string& name) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos || tok.size() > 9) {
    fail(ErrorKind::input, name + ": bad PGM header field '" + tok + "'");
  }
  return static_cast<std::size_t>(std::stoul(tok));
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  const std::string name = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::input, name + ": cannot open image");
  const std::string magic = next_pgm_token(in, name);
  if (magic != "P2" && magic != "P5") fail(ErrorKind::input, name + ": not a PGM file (magic '" + magic + "')");
  Image img;
  img.width = parse_pgm_number(next_pgm_token(in, name), name);
  img.height = parse_pgm_number(next_pgm_token(in, name), name);
  const std::size_t maxval = parse_pgm_number(next_pgm_token(in, name), name);
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 65535) {
    fail(ErrorKind::input, name + ": invalid PGM dimensions or maxval");
  }
  img.channels = 1;
  const std::size_t count = img.width * img.height;
  img.pixels.resize(count);
  if (magic == "P2") {
    for (std::size_t i = 0; i < count; ++i) {
      std::string tok;
      if (!(in >> tok)) fail(ErrorKind::input, name + ": truncated pixel data");
      const std::size_t v = parse_pgm_number(tok, name);
      if (v > maxval) fail(ErrorKind::input, name + ": pixel exceeds maxval");
      img.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
    }
  } else {
    in.get();  // single whitespace after maxval
    const std::size_t bytes_per = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> raw(count * bytes_per);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) fail(ErrorKind::input, name + ": truncated pixel data");
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t v = bytes_per == 1 ? raw[i] : (std::size_t{raw[2 * i]} << 8) | raw[2 * i + 1];
      if (v > maxval) fail(ErrorKind::input, name + ": pixel exceeds maxval");
      img.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
    }
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1) fail(ErrorKind::input, "PGM output supports one channel only");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write image " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  for (double v : image.pixels) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
}

namespace ad {

Var add_positions(Var x, const PositionEncoding& p, Var table, std::size_t offset) {
  if (p.mode == PositionMode::none) return x;
  check_position_range(p, offset, x.cols());
  Var slice = slice_cols(table, offset, x.cols());
  if (p.combine == PositionCombine::additive) return add(x, slice);
  return concat_rows(x, slice);
}

}  // namespace ad

}  // namespace seqformer
