// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

#include "seqformer/model.hpp"

namespace seqformer {

/// Plain scalar-loop evaluation of the model losses, written without the
/// tensor or tape code. Instantiated for double and long double; the long
/// double form is the finite-difference oracle for gradient checks.
template <typename Real>
Real reference_lm_loss(const ModelParams& params, const ModelConfig& config, std::span<const std::size_t> ids);

template <typename Real>
Real reference_cls_loss(const ModelParams& params, const ModelConfig& config, const Image& image,
                        std::size_t label);

}  // namespace seqformer
