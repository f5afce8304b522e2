#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/shape.hpp"
#include "thumbnet/core/tensor.hpp"

namespace thumbnet {

// One recorded value on the tape. Leaves (watched tensors) have no pull
// function; interior nodes pull their upstream gradient back into their
// parents when visited.
template <typename T>
struct TapeNode {
  Shape shape;
  std::vector<T> grad;  // allocated on first accumulation
  bool touched = false;
  std::function<void(TapeCore<T>&, const std::vector<T>&)> pull;
};

template <typename T>
struct TapeCore {
  std::vector<TapeNode<T>> nodes;
  bool backward_done = false;

  std::int64_t emit(Shape shape, std::function<void(TapeCore<T>&, const std::vector<T>&)> pull) {
    TapeNode<T> n;
    n.shape = std::move(shape);
    n.pull = std::move(pull);
    nodes.push_back(std::move(n));
    return static_cast<std::int64_t>(nodes.size()) - 1;
  }

  // Adds delta into the node's gradient. Accumulation is additive, so a
  // tensor used by several consumers receives the sum of their pulls.
  void accumulate(std::int64_t node, const T* delta, std::size_t n) {
    TapeNode<T>& d = nodes[static_cast<std::size_t>(node)];
    if (d.grad.empty()) d.grad.assign(d.shape.numel(), T(0));
    T* g = d.grad.data();
    for (std::size_t i = 0; i < n; ++i) g[i] += delta[i];
    d.touched = true;
  }
};

namespace detail {

// The unique live tape shared by the given inputs, or null when none is
// linked. Mixing tensors from two different tapes is rejected.
template <typename T>
std::shared_ptr<TapeCore<T>> result_core(std::initializer_list<const Tensor<T>*> inputs) {
  std::shared_ptr<TapeCore<T>> core;
  for (const Tensor<T>* t : inputs) {
    auto c = t->detail_core();
    if (!c) continue;
    if (core && core != c) throw UsageError("operation mixes tensors from two different tapes");
    core = std::move(c);
  }
  return core;
}

// Node id of t on the given core, or -1 when t is not recorded there.
template <typename T>
std::int64_t node_on(const std::shared_ptr<TapeCore<T>>& core, const Tensor<T>& t) {
  if (!core) return -1;
  return t.detail_core() == core ? t.detail_node() : -1;
}

}  // namespace detail

// Reverse-mode gradient tape. Operations involving a watched (or derived)
// tensor record themselves here; backward() replays the records in reverse
// and accumulates gradients. Single-threaded by design: one tape per
// training step, confined to the thread that built it.
template <typename T>
class Tape {
 public:
  Tape() : core_(std::make_shared<TapeCore<T>>()) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers t as a trainable leaf. Re-watching on the same tape is a
  // no-op; watching a tensor already on another live tape is an error.
  void watch(Tensor<T>& t) {
    auto existing = t.detail_core();
    if (existing == core_) return;
    if (existing) throw UsageError("tensor is already watched on another tape");
    std::int64_t id = core_->emit(t.shape(), nullptr);
    t.detail_link(core_, id, true);
  }

  // Gradient accumulated for a tensor linked to this tape. Tensors the
  // backward sweep never reached report zeros.
  Tensor<T> grad(const Tensor<T>& t) const {
    std::int64_t id = detail::node_on(core_, t);
    if (id < 0) throw UsageError("grad: tensor is not on this tape");
    const TapeNode<T>& n = core_->nodes[static_cast<std::size_t>(id)];
    if (n.grad.empty()) return Tensor<T>::zeros(n.shape);
    return Tensor<T>(n.shape, n.grad);
  }

  // Reverse sweep from a scalar root. May be called once per tape.
  void backward(const Tensor<T>& root) {
    std::int64_t id = detail::node_on(core_, root);
    if (id < 0) throw UsageError("backward: root is not on this tape");
    if (root.numel() != 1) {
      throw UsageError("backward: root must be a scalar, got shape " + root.shape().str());
    }
    if (core_->backward_done) throw UsageError("backward already called on this tape");
    core_->backward_done = true;
    TapeNode<T>& r = core_->nodes[static_cast<std::size_t>(id)];
    if (r.grad.empty()) r.grad.assign(1, T(0));
    r.grad[0] += T(1);
    r.touched = true;
    for (std::int64_t i = id; i >= 0; --i) {
      TapeNode<T>& n = core_->nodes[static_cast<std::size_t>(i)];
      if (n.touched && n.pull) n.pull(*core_, n.grad);
    }
  }

  std::size_t node_count() const { return core_->nodes.size(); }

  const std::shared_ptr<TapeCore<T>>& detail_core() const { return core_; }

 private:
  std::shared_ptr<TapeCore<T>> core_;
};

}  // namespace thumbnet
