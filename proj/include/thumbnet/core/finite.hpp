#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/tensor.hpp"

namespace thumbnet {

namespace detail {

template <typename T>
void throw_non_finite(const char* op, std::size_t index, T value) {
  throw NumericFault(std::string(op) + ": non-finite value " + std::to_string(value) +
                     " at element " + std::to_string(index));
}

}  // namespace detail

// Fault policy: debug builds scan every element of every op output; release
// builds sample the first element, except reduction and loss outputs which
// are always scanned in full (they are small and summarize everything).
template <typename T>
void check_finite(const T* p, std::size_t n, const char* op, bool full_scan) {
  if (n == 0) return;
#ifndef NDEBUG
  full_scan = true;
#endif
  if (full_scan) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(p[i])) detail::throw_non_finite(op, i, p[i]);
    }
  } else {
    if (!std::isfinite(p[0])) detail::throw_non_finite(op, std::size_t(0), p[0]);
  }
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op, bool full_scan = false) {
  check_finite(t.data(), t.numel(), op, full_scan);
}

}  // namespace thumbnet
