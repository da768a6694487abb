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

#include "slimseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

namespace slimseg {
namespace {

thread_local Tape* g_active_tape = nullptr;

std::uint64_t next_epoch() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

}  // namespace

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* dtype_name(DType dtype) {
  return dtype == DType::kFloat32 ? "float32" : "float64";
}

Storage::Storage(DType dtype, std::size_t size) : dtype_(dtype) {
  if (dtype == DType::kFloat32) {
    values_ = std::vector<float>(size, 0.0f);
  } else {
    values_ = std::vector<double>(size, 0.0);
  }
}

std::size_t Storage::size() const {
  return std::visit([](const auto& v) { return v.size(); }, values_);
}

void Storage::fill_zero() {
  std::visit([](auto& v) { std::fill(v.begin(), v.end(), 0); }, values_);
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(const Shape& shape, DType dtype, bool requires_grad) {
  check_shape(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->dtype = dtype;
  impl->data = std::make_shared<Storage>(dtype, static_cast<std::size_t>(slimseg::numel(shape)));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(const Shape& shape, double value, DType dtype, bool requires_grad) {
  Tensor t = zeros(shape, dtype, requires_grad);
  dispatch(dtype, [&]<typename T>() {
    auto v = t.mutable_values<T>();
    std::fill(v.begin(), v.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::span<const double> values, DType dtype,
                           bool requires_grad) {
  Tensor t = zeros(shape, dtype, requires_grad);
  if (static_cast<std::int64_t>(values.size()) != t.numel()) {
    throw ShapeError("from_values: " + std::to_string(values.size()) +
                     " values for shape " + shape_str(shape));
  }
  dispatch(dtype, [&]<typename T>() {
    auto v = t.mutable_values<T>();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::initializer_list<double> values,
                           DType dtype, bool requires_grad) {
  return from_values(shape, std::span<const double>(values.begin(), values.size()), dtype,
                     requires_grad);
}

Tensor Tensor::wrap(const Shape& shape, std::shared_ptr<Storage> data) {
  check_shape(shape);
  if (static_cast<std::int64_t>(data->size()) != slimseg::numel(shape)) {
    throw ShapeError("wrap: storage size " + std::to_string(data->size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->dtype = data->dtype();
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

TensorImpl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  return *impl_;
}

std::int64_t Tensor::dim(std::int64_t i) const {
  const auto r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) {
    throw ShapeError("dimension " + std::to_string(i) + " out of range for shape " +
                     shape_str(shape()));
  }
  return shape()[static_cast<std::size_t>(i)];
}

Tensor& Tensor::set_requires_grad(bool on) {
  require_leaf("set_requires_grad");
  impl().requires_grad = on;
  return *this;
}

void Tensor::require_leaf(const char* what) const {
  if (!is_leaf()) {
    throw std::logic_error(std::string(what) + " is only allowed on leaf tensors");
  }
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
  }
  return at(0);
}

double Tensor::at(std::int64_t flat_index) const {
  return dispatch(dtype(), [&]<typename T>() -> double {
    return static_cast<double>(values<T>()[static_cast<std::size_t>(flat_index)]);
  });
}

std::vector<double> Tensor::to_vector() const {
  return dispatch(dtype(), [&]<typename T>() {
    auto v = values<T>();
    return std::vector<double>(v.begin(), v.end());
  });
}

bool Tensor::all_finite() const {
  return dispatch(dtype(), [&]<typename T>() {
    for (T x : values<T>()) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  });
}

std::vector<double> Tensor::grad_vector() const {
  return dispatch(dtype(), [&]<typename T>() {
    auto v = grad_values<T>();
    return std::vector<double>(v.begin(), v.end());
  });
}

Storage& Tensor::ensure_grad() {
  auto& im = impl();
  if (!im.grad) im.grad = std::make_unique<Storage>(im.dtype, im.data->size());
  return *im.grad;
}

void Tensor::zero_grad() {
  auto& im = impl();
  if (im.grad) {
    im.grad->fill_zero();
  } else {
    im.grad = std::make_unique<Storage>(im.dtype, im.data->size());
  }
}

Tensor Tensor::clone() const {
  auto copy = std::make_shared<Storage>(*impl().data);
  return wrap(shape(), std::move(copy));
}

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return clone();
  Tensor out = zeros(shape(), target);
  dispatch(dtype(), [&]<typename S>() {
    dispatch(target, [&]<typename D>() {
      auto src = values<S>();
      auto dst = out.mutable_values<D>();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<D>(src[i]);
    });
  });
  return out;
}

Tensor Tensor::detached_view() const { return wrap(shape(), impl().data); }

bool Tensor::shares_storage(const Tensor& other) const {
  return impl().data == other.impl().data;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.values<T>();
    auto y = b.values<T>();
    return std::memcmp(x.data(), y.data(), x.size() * sizeof(T)) == 0;
  });
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : epoch_(next_epoch()) {}

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

void Tape::clear() {
  nodes_.clear();
  node_grads_.clear();
  epoch_ = next_epoch();
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::vector<Tensor> inputs, Tensor& output, BackwardFn fn) {
  auto& out = output.impl();
  out.requires_grad = true;
  out.tape = this;
  out.tape_epoch = epoch_;
  out.node = static_cast<std::int64_t>(nodes_.size());
  nodes_.push_back(Node{std::move(inputs), std::move(fn), out.dtype, out.data->size()});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  const auto& li = loss.impl();
  if (!owns(li)) {
    throw std::logic_error("backward(): loss was not recorded on this tape");
  }
  const auto start = static_cast<std::size_t>(li.node);
  node_grads_.clear();
  node_grads_.resize(nodes_.size());
  node_grads_[start] = std::make_unique<Storage>(li.dtype, 1);
  dispatch(li.dtype, [&]<typename T>() { node_grads_[start]->as<T>()[0] = T(1); });

  for (std::size_t i = start + 1; i-- > 0;) {
    if (!node_grads_[i]) continue;
    GradSink sink(*this, i);
    nodes_[i].fn(*node_grads_[i], sink);
    node_grads_[i].reset();
  }
  node_grads_.clear();
}

bool GradSink::wants(std::size_t input) const {
  const auto& t = tape_.nodes_[node_].inputs[input];
  if (!t.defined() || !t.requires_grad()) return false;
  const auto& im = t.impl();
  if (im.node < 0) return true;
  return tape_.owns(im);
}

Storage* GradSink::slot(std::size_t input) {
  if (!wants(input)) return nullptr;
  Tensor& t = tape_.nodes_[node_].inputs[input];
  auto& im = t.impl();
  if (im.node < 0) return &t.ensure_grad();
  auto& g = tape_.node_grads_[static_cast<std::size_t>(im.node)];
  if (!g) g = std::make_unique<Storage>(im.dtype, im.data->size());
  return g.get();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

bool needs_record(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void record_op(std::vector<Tensor> inputs, Tensor& output, Tape::BackwardFn fn) {
  Tape* tape = Tape::active();
  if (!tape) return;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
    return t.defined() && t.requires_grad();
  });
  if (!any) return;
  tape->record(std::move(inputs), output, std::move(fn));
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  Tape* tape = loss.impl().tape;
  if (!tape || loss.impl().node < 0) {
    throw std::logic_error("backward(): loss has no recorded history (empty tape)");
  }
  tape->backward(loss);
}

}  // namespace slimseg
