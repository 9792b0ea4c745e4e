// Copyright 2026 The sedtune Authors
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

// Tape-free reverse-mode differentiation. Every op result keeps shared
// pointers to its inputs plus a closure that pushes its output gradient back
// into them; backward() walks that DAG in reverse topological order.

#include <functional>
#include <memory>
#include <vector>

#include "sedtune/tensor.hpp"

namespace sedtune::ag {

struct Node;

/// Handle to a value in the computation graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const;
  /// In-place access for optimizers and checkpoint loading. Never use on
  /// interior graph nodes.
  Tensor& mutable_value();
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  /// Gradient buffer, allocated (zeroed) on first access.
  Tensor& grad();
  const Tensor& grad() const;
  void zero_grad();
  /// Adds g into the gradient buffer when this var requires grad.
  void accumulate(const Tensor& g) const;

  Node* node() const { return node_.get(); }

 private:
  friend Var make_result(Tensor, std::vector<Var>, std::function<void(const Tensor&)>);
  std::shared_ptr<Node> node_;
};

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> inputs;
  std::function<void(const Tensor&)> backward;
};

/// True while gradient recording is enabled on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op result. When grad is disabled or no input requires grad the
/// closure is dropped and the result is a constant.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(const Tensor&)> backward);

/// Seeds d(root)/d(root) = 1 (root must be a scalar) and propagates.
/// Interior gradients are released as soon as they have been consumed.
void backward(const Var& root);

}  // namespace sedtune::ag
