// Copyright 2026 The Matchmap Authors
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

#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "matchmap/tensor.hpp"

// Reverse-mode autodiff over an eagerly evaluated graph. Each builder
// call computes its output immediately and appends a node; backward()
// walks nodes in reverse insertion order, which is a valid reverse
// topological order because inputs always precede their consumers.

namespace mm {

template <typename T>
class Graph;

// A named trainable tensor living outside any one graph.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;  // accumulated across steps until zeroed
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }
};

// Ordered collection of parameters plus non-trainable named buffers
// (e.g. batch-norm running statistics). Iteration order is the sorted
// name order, which keeps serialization and update order deterministic.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    check(!params_.count(name), "param store: duplicate name '", name, "'");
    auto [it, ok] = params_.emplace(name, Parameter<T>(name, std::move(value)));
    (void)ok;
    return it->second;
  }

  Parameter<T>& get(const std::string& name) {
    auto it = params_.find(name);
    check(it != params_.end(), "param store: unknown name '", name, "'");
    return it->second;
  }
  const Parameter<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    check(it != params_.end(), "param store: unknown name '", name, "'");
    return it->second;
  }
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  Tensor<T>& buffer(const std::string& name) {
    auto it = buffers_.find(name);
    check(it != buffers_.end(), "param store: unknown buffer '", name, "'");
    return it->second;
  }
  const Tensor<T>& buffer(const std::string& name) const {
    auto it = buffers_.find(name);
    check(it != buffers_.end(), "param store: unknown buffer '", name, "'");
    return it->second;
  }
  void add_buffer(const std::string& name, Tensor<T> value) {
    check(!buffers_.count(name), "param store: duplicate buffer '", name, "'");
    buffers_.emplace(name, std::move(value));
  }
  bool has_buffer(const std::string& name) const {
    return buffers_.count(name) > 0;
  }

  std::map<std::string, Parameter<T>>& params() { return params_; }
  const std::map<std::string, Parameter<T>>& params() const { return params_; }
  std::map<std::string, Tensor<T>>& buffers() { return buffers_; }
  const std::map<std::string, Tensor<T>>& buffers() const { return buffers_; }

  void zero_grads() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  int64_t count_scalars() const {
    int64_t n = 0;
    for (auto& [name, p] : params_) n += p.value.numel();
    return n;
  }

 private:
  std::map<std::string, Parameter<T>> params_;
  std::map<std::string, Tensor<T>> buffers_;
};

// Graph node handle; valid only for the graph that produced it.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class NodeBase {
 public:
  virtual ~NodeBase() = default;

  // Adds d(root)/d(input) contributions into the input nodes' grads.
  virtual void backprop(Graph<T>& g) = 0;

  std::vector<int32_t> ins;
  Tensor<T> out;
  Tensor<T> grad;  // allocated during backward()
};

template <typename T>
class Graph {
 public:
  // Leaf holding a tensor that needs no parameter bookkeeping.
  Var input(Tensor<T> v) {
    auto node = std::make_unique<LeafNode>();
    node->out = std::move(v);
    return append(std::move(node));
  }

  // Leaf bound to a parameter; memoized so repeated use of one parameter
  // funnels every gradient contribution into a single node.
  Var param(Parameter<T>& p) {
    auto it = param_vars_.find(&p);
    if (it != param_vars_.end()) return Var{it->second};
    auto node = std::make_unique<LeafNode>();
    node->out = p.value;
    Var v = append(std::move(node));
    param_vars_.emplace(&p, v.id);
    param_leaves_.push_back({&p, v.id});
    return v;
  }

  const Tensor<T>& value(Var v) const { return node(v).out; }

  Tensor<T>& grad(Var v) {
    NodeBase<T>& n = node(v);
    if (n.grad.empty()) n.grad = Tensor<T>(n.out.shape());
    return n.grad;
  }

  // Reverse pass from a scalar root. Nodes appended after the root keep
  // zero gradients; disconnected subgraphs do too.
  void backward(Var root) {
    NodeBase<T>& r = node(root);
    check(r.out.numel() == 1, "backward: root must be scalar, has shape ",
          shape_str(r.out.shape()));
    grad(root).at_flat(0) = T(1);
    for (int32_t id = root.id; id >= 0; --id) {
      if (nodes_[size_t(id)]->grad.empty()) continue;  // nothing flowed here
      nodes_[size_t(id)]->backprop(*this);
    }
    for (auto& [p, id] : param_leaves_) {
      if (!p->trainable) continue;
      Tensor<T>& g = nodes_[size_t(id)]->grad;
      if (g.empty()) continue;
      for (int64_t i = 0; i < g.numel(); ++i) p->grad.at_flat(i) += g.at_flat(i);
    }
  }

  int64_t size() const { return int64_t(nodes_.size()); }

  template <typename NodeT>
  Var append(std::unique_ptr<NodeT> node) {
    check(nodes_.size() < size_t(INT32_MAX), "graph node count overflow");
    nodes_.push_back(std::move(node));
    return Var{int32_t(nodes_.size() - 1)};
  }

  NodeBase<T>& node(Var v) {
    check(v.id >= 0 && size_t(v.id) < nodes_.size(), "invalid graph var ",
          v.id);
    return *nodes_[size_t(v.id)];
  }
  const NodeBase<T>& node(Var v) const {
    check(v.id >= 0 && size_t(v.id) < nodes_.size(), "invalid graph var ",
          v.id);
    return *nodes_[size_t(v.id)];
  }

 private:
  class LeafNode : public NodeBase<T> {
   public:
    void backprop(Graph<T>&) override {}
  };

  std::vector<std::unique_ptr<NodeBase<T>>> nodes_;
  std::unordered_map<const Parameter<T>*, int32_t> param_vars_;
  std::vector<std::pair<Parameter<T>*, int32_t>> param_leaves_;
};

}  // namespace mm
