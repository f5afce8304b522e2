#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/tape.hpp"
#include "thumbnet/core/tensor.hpp"
#include "thumbnet/losses/param_set.hpp"

namespace thumbnet {

// One SGD-with-momentum update: v <- momentum * v + g; w <- w - lr * v.
// Weight decay enters through the (theta/2) * l2_reg loss term, never here;
// callers must acknowledge that by leaving the flag at its default.
template <typename T>
void sgd_step(ParamSet<T>& params, const std::vector<Tensor<T>>& grads,
              std::vector<Tensor<T>>& velocity, double lr, double momentum,
              bool weight_decay_applied_in_loss = true) {
  if (!weight_decay_applied_in_loss)
    throw UsageError("sgd_step: weight decay is applied through the loss term; "
                     "decoupled decay is not supported");
  if (grads.size() != params.size())
    throw UsageError("sgd_step: got " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  if (velocity.empty()) {
    velocity.reserve(params.size());
    for (const ParamEntry<T>& e : params) velocity.push_back(Tensor<T>::zeros(e.tensor->shape()));
  }
  if (velocity.size() != params.size())
    throw UsageError("sgd_step: velocity table holds " + std::to_string(velocity.size()) +
                     " entries for " + std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& w = *params[i].tensor;
    const Tensor<T>& g = grads[i];
    if (!(g.shape() == w.shape()))
      throw UsageError("sgd_step: gradient shape " + g.shape().str() +
                       " does not match parameter '" + params[i].name + "' of shape " +
                       w.shape().str());
    if (!(velocity[i].shape() == w.shape()))
      throw UsageError("sgd_step: velocity shape " + velocity[i].shape().str() +
                       " does not match parameter '" + params[i].name + "' of shape " +
                       w.shape().str());
    T* v = velocity[i].mutable_data();
    T* pw = w.mutable_data();
    const T* pg = g.data();
    const std::size_t n = w.numel();
    for (std::size_t k = 0; k < n; ++k) {
      v[k] = T(momentum) * v[k] + pg[k];
      pw[k] -= T(lr) * v[k];
    }
  }
}

// A named slice of the trainable parameters with its own learning-rate scale
// and momentum state. Pretrained slices run at a reduced scale during
// fine-tuning; freshly initialized ones at full rate.
template <typename T>
struct ParamGroup {
  std::string name;
  ParamSet<T> params;
  double lr_scale = 1.0;
  std::vector<Tensor<T>> velocity;
};

// Pulls the gradient of every parameter in `params` off the tape. Parameters
// the loss never touched come back as zeros.
template <typename T>
std::vector<Tensor<T>> collect_grads(const Tape<T>& tape, const ParamSet<T>& params) {
  std::vector<Tensor<T>> grads;
  grads.reserve(params.size());
  for (const ParamEntry<T>& e : params) grads.push_back(tape.grad(*e.tensor));
  return grads;
}

// Applies one update to every group, scaling the base learning rate by the
// group's factor.
template <typename T>
void step_groups(std::vector<ParamGroup<T>>& groups, const Tape<T>& tape, double lr,
                 double momentum) {
  for (ParamGroup<T>& g : groups) {
    std::vector<Tensor<T>> grads = collect_grads(tape, g.params);
    sgd_step(g.params, grads, g.velocity, lr * g.lr_scale, momentum);
  }
}

}  // namespace thumbnet
