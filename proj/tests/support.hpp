// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "doctest.h"
#include "seqformer/error.hpp"

#define CHECK_KIND(expr, expected_kind)                                                   \
  do {                                                                                    \
    bool thrown_ = false;                                                                 \
    try {                                                                                 \
      (void)(expr);                                                                       \
    } catch (const seqformer::Error& e_) {                                                \
      thrown_ = true;                                                                     \
      CHECK_MESSAGE(e_.kind() == (expected_kind), "got " << seqformer::to_string(e_.kind()) \
                                                          << ": " << e_.what());          \
    }                                                                                     \
    CHECK_MESSAGE(thrown_, "expected an error from " #expr);                              \
  } while (0)

inline std::string error_text(const auto& fn) {
  try {
    fn();
  } catch (const seqformer::Error& e) {
    return e.what();
  }
  return {};
}
