// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <omp.h>

#include <exception>
#include <optional>

namespace fisher_moe {

template <class T>
std::vector<T> run_indexed(int count, int parallel, const std::function<T(int)>& f) {
  std::vector<std::optional<T>> slots(static_cast<std::size_t>(count));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  const int threads = parallel > 0 ? parallel : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (int i = 0; i < count; ++i) {
    try {
      slots[i].emplace(f(i));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<T> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace fisher_moe
