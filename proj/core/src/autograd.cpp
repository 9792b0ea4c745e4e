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

#include "sedtune/autograd.hpp"

#include <unordered_set>

#include "sedtune/error.hpp"

namespace sedtune::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const {
  SEDTUNE_REQUIRE(node_, "Var: undefined");
  return node_->value;
}

Tensor& Var::mutable_value() {
  SEDTUNE_REQUIRE(node_, "Var: undefined");
  return node_->value;
}

double Var::item() const {
  SEDTUNE_REQUIRE(value().size() == 1, "Var::item on non-scalar " + shape_str(shape()));
  return value()[0];
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }
void Var::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Var::has_grad() const { return node_ && !node_->grad.empty(); }

Tensor& Var::grad() {
  if (node_->grad.size() != node_->value.size()) node_->grad = Tensor(node_->value.shape());
  return node_->grad;
}

const Tensor& Var::grad() const { return node_->grad; }

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

void Var::accumulate(const Tensor& g) const {
  if (!requires_grad()) return;
  SEDTUNE_REQUIRE(g.size() == value().size(), "accumulate: gradient shape mismatch");
  if (node_->grad.size() != node_->value.size()) node_->grad = Tensor(node_->value.shape());
  Tensor& dst = node_->grad;
  double* d = dst.data();
  const double* s = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(const Tensor&)> backward) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->inputs = std::move(inputs);
  out.node_->backward = std::move(backward);
  return out;
}

void backward(const Var& root) {
  SEDTUNE_REQUIRE(root.defined() && root.value().size() == 1, "backward: root must be a scalar");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].node();
      if (child && child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Node* r = root.node();
  if (r->grad.size() != 1) r->grad = Tensor(r->value.shape());
  r->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward || n->grad.empty()) continue;
    n->backward(n->grad);
    n->grad = Tensor();
  }
}

}  // namespace sedtune::ag
