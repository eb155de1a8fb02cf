// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Text checkpoint format, version 1. Line oriented, whitespace separated:
//
//   fisher-moe-checkpoint 1
//   arch linear|mlp
//   shape <n_experts> <input_dim> <n_classes> <hidden>
//   tau <value>
//   top_k <k>            (0 = dense)
//   lambda <value>
//   step <n>
//   matrix router <rows> <cols>
//   <rows lines of cols hex-float values>
//   matrix expert.<e>.first <rows> <cols>
//   ...
//   matrix expert.<e>.second <rows> <cols>   (0 0 for linear experts)
//   end
//
// Floats use C99 hex notation (%a), so a load reproduces the saved model
// bit for bit.

#pragma once

#include "fisher_moe/moe_model.hpp"

#include <iosfwd>
#include <stdexcept>
#include <string>

namespace fisher_moe {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const MoEModelState& model);
MoEModelState read_checkpoint(std::istream& in);

std::string checkpoint_to_string(const MoEModelState& model);
MoEModelState checkpoint_from_string(const std::string& text);

}  // namespace fisher_moe
