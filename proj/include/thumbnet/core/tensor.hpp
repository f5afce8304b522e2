#pragma once

#include <cstdint>
#include <memory>
#include <type_traits>
#include <utility>
#include <vector>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/shape.hpp"

namespace thumbnet {

template <typename T>
struct TapeCore;

// Dense row-major tensor with copy-on-write storage. Copies are cheap and
// share the underlying buffer until one side mutates. A tensor may be linked
// to a gradient tape node; the link is a weak reference, so outliving the
// tape is safe and simply makes the tensor behave as a constant again.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor requires a floating point type");

 public:
  using value_type = T;

  // Default is the empty tensor (shape [0], zero elements); stands in for
  // absent optional parameters such as a disabled bias.
  Tensor() : shape_{0}, buf_(std::make_shared<std::vector<T>>()) {}

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), buf_(std::make_shared<std::vector<T>>(shape_.numel(), T(0))) {}

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
    if (values.size() != shape_.numel()) {
      throw GeometryError("tensor: " + std::to_string(values.size()) +
                          " values do not fill shape " + shape_.str());
    }
    buf_ = std::make_shared<std::vector<T>>(std::move(values));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    auto& v = *t.buf_;
    for (auto& x : v) x = value;
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.rank(); }
  std::size_t numel() const { return shape_.numel(); }
  std::size_t size(std::size_t axis) const { return shape_[axis]; }
  bool empty() const { return numel() == 0; }

  const T* data() const { return buf_->data(); }

  // Detaches from any shared buffer before granting write access.
  T* mutable_data() {
    if (buf_.use_count() > 1) buf_ = std::make_shared<std::vector<T>>(*buf_);
    return buf_->data();
  }

  // Element access by multi-index (rank-checked).
  template <typename... Is>
  T operator()(Is... idx) const {
    return data()[flat_index(idx...)];
  }

  template <typename... Is>
  T& ref(Is... idx) {
    T* p = mutable_data();
    return p[flat_index(idx...)];
  }

  T item() const {
    if (numel() != 1) throw GeometryError("item: tensor has shape " + shape_.str());
    return data()[0];
  }

  bool requires_grad() const { return requires_grad_; }

  // True when this tensor is a node on a still-live tape.
  bool linked() const { return node_ >= 0 && !tape_.expired(); }

  // Value-equal copy with no tape link.
  Tensor detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.buf_ = buf_;
    return t;
  }

  // Same buffer viewed under different extents (element count must match).
  Tensor reshaped(Shape shape) const {
    if (shape.numel() != numel()) {
      throw GeometryError("reshape: " + shape_.str() + " -> " + shape.str() +
                          " changes element count");
    }
    Tensor t = detached();
    t.shape_ = std::move(shape);
    return t;
  }

  // Internal: tape linkage. Used by Tape and the differentiable ops.
  void detail_link(std::weak_ptr<TapeCore<T>> core, std::int64_t node, bool requires_grad) {
    tape_ = std::move(core);
    node_ = node;
    requires_grad_ = requires_grad;
  }

  std::shared_ptr<TapeCore<T>> detail_core() const { return tape_.lock(); }
  std::int64_t detail_node() const { return node_; }

 private:
  template <typename... Is>
  std::size_t flat_index(Is... idx) const {
    constexpr std::size_t kRank = sizeof...(Is);
    static_assert(kRank > 0, "use item() for scalars");
    if (kRank != shape_.rank()) {
      throw GeometryError("index rank " + std::to_string(kRank) + " vs shape " + shape_.str());
    }
    const std::size_t ids[] = {static_cast<std::size_t>(idx)...};
    std::size_t flat = 0;
    for (std::size_t i = 0; i < kRank; ++i) {
      if (ids[i] >= shape_[i]) {
        throw GeometryError("index out of range for shape " + shape_.str());
      }
      flat = flat * shape_[i] + ids[i];
    }
    return flat;
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> buf_;
  std::weak_ptr<TapeCore<T>> tape_;
  std::int64_t node_ = -1;
  bool requires_grad_ = false;
};

}  // namespace thumbnet
