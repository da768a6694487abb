/* Copyright 2026 The SlimSeg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle. Values are immutable once an operation has
// produced them; only leaf tensors (parameters, inputs, running statistics)
// may be written through mutable_values(). Gradients accumulate into the
// grad buffer of leaf tensors that require grad; intermediate gradients live
// only for the duration of one backward() call.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

namespace slimseg {

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
const char* dtype_name(DType dtype);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::kFloat32 : DType::kFloat64;
}

// Runs f.template operator()<T>() with T matching dtype.
template <typename F>
decltype(auto) dispatch(DType dtype, F&& f) {
  if (dtype == DType::kFloat32) return f.template operator()<float>();
  return f.template operator()<double>();
}

class Storage {
 public:
  Storage(DType dtype, std::size_t size);

  DType dtype() const { return dtype_; }
  std::size_t size() const;

  template <typename T>
  std::span<T> as() {
    check<T>();
    return std::get<std::vector<T>>(values_);
  }
  template <typename T>
  std::span<const T> as() const {
    check<T>();
    return std::get<std::vector<T>>(values_);
  }

  void fill_zero();

 private:
  template <typename T>
  void check() const {
    if (dtype_of<T>() != dtype_) {
      throw std::logic_error(std::string("storage holds ") + dtype_name(dtype_) +
                             ", accessed as " + dtype_name(dtype_of<T>()));
    }
  }

  DType dtype_;
  std::variant<std::vector<float>, std::vector<double>> values_;
};

class Tape;

struct TensorImpl {
  Shape shape;
  DType dtype = DType::kFloat32;
  std::shared_ptr<Storage> data;
  std::unique_ptr<Storage> grad;
  bool requires_grad = false;
  // Producing node, valid while tape->epoch() == tape_epoch.
  Tape* tape = nullptr;
  std::uint64_t tape_epoch = 0;
  std::int64_t node = -1;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, DType dtype = DType::kFloat32,
                      bool requires_grad = false);
  static Tensor full(const Shape& shape, double value,
                     DType dtype = DType::kFloat32, bool requires_grad = false);
  static Tensor from_values(const Shape& shape, std::span<const double> values,
                            DType dtype = DType::kFloat32,
                            bool requires_grad = false);
  static Tensor from_values(const Shape& shape, std::initializer_list<double> values,
                            DType dtype = DType::kFloat32,
                            bool requires_grad = false);
  // Wraps already-computed storage as a new tensor (no autodiff history).
  static Tensor wrap(const Shape& shape, std::shared_ptr<Storage> data);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape().size()); }
  std::int64_t dim(std::int64_t i) const;
  std::int64_t numel() const { return slimseg::numel(shape()); }
  DType dtype() const { return impl().dtype; }

  bool requires_grad() const { return impl().requires_grad; }
  // Leaf tensors only.
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl().node < 0; }

  template <typename T>
  std::span<const T> values() const {
    return std::as_const(*impl().data).template as<T>();
  }
  // Leaf tensors only; used for parameter updates and construction.
  template <typename T>
  std::span<T> mutable_values() {
    require_leaf("mutable_values");
    return impl().data->template as<T>();
  }

  double item() const;
  double at(std::int64_t flat_index) const;
  std::vector<double> to_vector() const;
  bool all_finite() const;

  bool has_grad() const { return impl().grad != nullptr; }
  template <typename T>
  std::span<const T> grad_values() const {
    if (!has_grad()) throw std::logic_error("tensor has no gradient");
    return std::as_const(*impl().grad).template as<T>();
  }
  template <typename T>
  std::span<T> mutable_grad_values() {
    if (!has_grad()) throw std::logic_error("tensor has no gradient");
    return impl().grad->template as<T>();
  }
  std::vector<double> grad_vector() const;
  // Allocates a zeroed gradient buffer if absent, else zero-fills it.
  void zero_grad();
  void drop_grad() { impl().grad.reset(); }
  Storage& ensure_grad();

  // Deep copy of the values as a fresh leaf (no grad, no history).
  Tensor clone() const;
  Tensor to(DType dtype) const;
  // Same storage, fresh leaf, never recorded.
  Tensor detached_view() const;

  bool same_object(const Tensor& other) const { return impl_ == other.impl_; }
  bool shares_storage(const Tensor& other) const;

  TensorImpl& impl() const;
  const std::shared_ptr<TensorImpl>& handle() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  void require_leaf(const char* what) const;

  std::shared_ptr<TensorImpl> impl_;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);

// Hands out per-input gradient buffers to a node's backward rule. Returns
// nullptr for inputs that need no gradient. Buffers must be accumulated into.
class GradSink {
 public:
  template <typename T>
  T* grad(std::size_t input) {
    Storage* s = slot(input);
    return s ? s->template as<T>().data() : nullptr;
  }
  bool wants(std::size_t input) const;

 private:
  friend class Tape;
  GradSink(Tape& tape, std::size_t node) : tape_(tape), node_(node) {}
  Storage* slot(std::size_t input);

  Tape& tape_;
  std::size_t node_;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const Storage& grad_out, GradSink& sink)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  std::uint64_t epoch() const { return epoch_; }
  // Drops every node and saved value. Leaf values and grads are untouched.
  void clear();

  // Appends a node producing `output` from `inputs`. The output becomes a
  // non-leaf requiring grad.
  void record(std::vector<Tensor> inputs, Tensor& output, BackwardFn fn);

  // Accumulates d(loss)/d(leaf) into every reachable leaf requiring grad.
  void backward(const Tensor& loss);

  // Innermost active tape on this thread, or nullptr.
  static Tape* active();

 private:
  friend class GradSink;
  friend class TapeScope;

  struct Node {
    std::vector<Tensor> inputs;
    BackwardFn fn;
    DType dtype;
    std::size_t out_size;
  };

  bool owns(const TensorImpl& impl) const {
    return impl.tape == this && impl.tape_epoch == epoch_ && impl.node >= 0;
  }

  std::vector<Node> nodes_;
  std::vector<std::unique_ptr<Storage>> node_grads_;
  std::uint64_t epoch_;
};

// Makes `tape` the active recording target for the current scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// True when an op on these inputs must be recorded.
bool needs_record(std::initializer_list<const Tensor*> inputs);

// Records `fn` for `output` on the active tape when needs_record(inputs).
void record_op(std::vector<Tensor> inputs, Tensor& output, Tape::BackwardFn fn);

// Runs backward on the tape that recorded `loss`.
void backward(const Tensor& loss);

}  // namespace slimseg
