// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace seqformer {

enum class ErrorKind {
  shape,       // dimension mismatch
  numeric,     // NaN/Inf where finite values are required
  config,      // invalid model or run configuration
  contract,    // operation used outside its contract
  state,       // operation called in the wrong lifecycle state
  index,       // lookup index out of range
  range,       // sequence longer than the configured maximum
  format,      // unknown magic or version in a file
  corruption,  // truncated or inconsistent file contents
  input,       // unusable user input (corpus, prompt, image)
  oracle,      // gradient oracle preconditions violated
  io,          // filesystem failures
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace seqformer
