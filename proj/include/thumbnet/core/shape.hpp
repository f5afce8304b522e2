#pragma once

#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "thumbnet/core/error.hpp"

namespace thumbnet {

// Row-major tensor extents. Rank 0 denotes a scalar (one element).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : dims_(dims) {}
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {}

  std::size_t rank() const { return dims_.size(); }

  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  std::size_t& operator[](std::size_t i) { return dims_[i]; }

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t d : dims_) n *= d;
    return n;
  }

  const std::vector<std::size_t>& dims() const { return dims_; }

  bool operator==(const Shape& o) const { return dims_ == o.dims_; }
  bool operator!=(const Shape& o) const { return dims_ != o.dims_; }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) os << ", ";
      os << dims_[i];
    }
    os << ']';
    return os.str();
  }

  // Row-major strides, in elements.
  std::vector<std::size_t> strides() const {
    std::vector<std::size_t> s(dims_.size(), 1);
    for (std::size_t i = dims_.size(); i-- > 1;) s[i - 1] = s[i] * dims_[i];
    return s;
  }

 private:
  std::vector<std::size_t> dims_;
};

inline void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.rank() != rank) {
    throw GeometryError(std::string(what) + ": expected rank " + std::to_string(rank) +
                        ", got shape " + s.str());
  }
}

}  // namespace thumbnet
