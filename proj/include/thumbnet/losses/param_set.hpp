#pragma once

#include <string>
#include <vector>

#include "thumbnet/core/tensor.hpp"

namespace thumbnet {

// Role of a trainable tensor inside a network. Weight decay applies to
// `weight` entries only; biases and batchnorm affine terms are exempt.
enum class ParamRole { weight, bias, bn_scale, bn_shift };

inline const char* param_role_name(ParamRole r) {
  switch (r) {
    case ParamRole::weight: return "weight";
    case ParamRole::bias: return "bias";
    case ParamRole::bn_scale: return "bn_scale";
    case ParamRole::bn_shift: return "bn_shift";
  }
  return "?";
}

// Non-owning view of one trainable tensor. The pointee must outlive the set;
// partitions built over a network remain valid while the network exists and
// is not structurally modified.
template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T>* tensor = nullptr;
  ParamRole role = ParamRole::weight;
};

template <typename T>
using ParamSet = std::vector<ParamEntry<T>>;

}  // namespace thumbnet
