// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace seqformer {

struct SelftestResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;  // worst observed deviation
  double bound = 0.0;     // allowed deviation
};

/// Quick randomized checks of the library invariants, reproducible per seed.
std::vector<SelftestResult> run_selftest(std::uint64_t seed);

}  // namespace seqformer
