// Copyright 2026 The coher-pvad Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "coher_pvad/error.hpp"

namespace coher_pvad::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(dims[i]);
  }
  return s + ")";
}

/// Dense row-major array.
template <typename T>
struct Tensor {
  Shape dims;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : dims(std::move(shape)), data(shape_size(dims), fill) {}
  Tensor(Shape shape, std::vector<T> values) : dims(std::move(shape)), data(std::move(values)) {
    require(data.size() == shape_size(dims), "tensor data does not match shape " + shape_string(dims));
  }

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return dims.at(i); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
};

/// A value on (or feeding) the autodiff tape.  `grad` is allocated lazily
/// and has the same length as `value` once present.
template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // 0 for leaves

  T* grad_ptr() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad.data();
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_var(Tensor<T> value, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

/// Call-local reverse-mode tape.  Operations register a closure that reads
/// the output gradient and accumulates into their inputs' gradients.
template <typename T>
class Tape {
 public:
  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Creates an op output; it needs gradients iff any input does.
  Var<T> output(Tensor<T> value, std::initializer_list<const Var<T>*> inputs) {
    auto n = make_var(std::move(value));
    for (const Var<T>* in : inputs) n->requires_grad = n->requires_grad || (*in)->requires_grad;
    n->tape_id = id_;
    return n;
  }

  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse.
  void backward(const Var<T>& loss) {
    require(loss != nullptr, "backward on a null node");
    require(loss->tape_id == id_ && !ops_.empty(), "backward called without a recorded forward pass");
    require(!consumed_, "tape already replayed");
    require(loss->value.size() == 1, "backward requires a scalar loss");
    loss->grad_ptr()[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    consumed_ = true;
  }

  std::size_t size() const { return ops_.size(); }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  std::vector<std::function<void()>> ops_;
  std::uint64_t id_;
  bool consumed_ = false;
};

}  // namespace coher_pvad::nn
