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

#include <cmath>
#include <map>
#include <string>

#include "matchmap/graph.hpp"

namespace mm {

// SGD with classical momentum:
//   v <- momentum * v + g
//   p <- p - lr * v
// The learning rate is divided by 10 every decay_epochs epochs.
template <typename T>
class SgdState {
 public:
  SgdState(double base_lr, double momentum, int64_t decay_epochs)
      : base_lr_(base_lr), momentum_(momentum), decay_epochs_(decay_epochs) {
    check(base_lr > 0, "sgd: learning rate must be positive");
    check(momentum >= 0 && momentum < 1, "sgd: momentum must be in [0, 1)");
    check(decay_epochs >= 1, "sgd: decay interval must be >= 1");
  }

  double lr_at_epoch(int64_t epoch) const {
    check(epoch >= 0, "sgd: negative epoch");
    return base_lr_ * std::pow(0.1, double(epoch / decay_epochs_));
  }

  double momentum() const { return momentum_; }
  double base_lr() const { return base_lr_; }
  int64_t decay_epochs() const { return decay_epochs_; }

  // Applies one update from the accumulated gradients, then leaves the
  // gradients for the caller to zero.
  void step(ParamStore<T>& store, int64_t epoch) {
    const double lr = lr_at_epoch(epoch);
    for (auto& [name, p] : store.params()) {
      if (!p.trainable) continue;
      Tensor<T>& v = velocity(name, p.value.shape());
      for (int64_t i = 0; i < p.value.numel(); ++i) {
        const T vi = T(momentum_) * v.at_flat(i) + p.grad.at_flat(i);
        v.at_flat(i) = vi;
        p.value.at_flat(i) -= T(lr) * vi;
      }
    }
  }

  Tensor<T>& velocity(const std::string& name, const Shape& shape) {
    auto it = velocities_.find(name);
    if (it == velocities_.end())
      it = velocities_.emplace(name, Tensor<T>(shape)).first;
    check(it->second.shape() == shape, "sgd: velocity shape changed for '",
          name, "'");
    return it->second;
  }

  std::map<std::string, Tensor<T>>& velocities() { return velocities_; }
  const std::map<std::string, Tensor<T>>& velocities() const {
    return velocities_;
  }

 private:
  double base_lr_, momentum_;
  int64_t decay_epochs_;
  std::map<std::string, Tensor<T>> velocities_;
};

// Glorot (uniform) init: bound = sqrt(6 / (fan_in + fan_out)).
template <typename T>
Tensor<T> glorot_uniform(const Shape& shape, int64_t fan_in, int64_t fan_out,
                         Rng& rng) {
  check(fan_in >= 1 && fan_out >= 1, "glorot: fans must be positive");
  const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  Tensor<T> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i)
    t.at_flat(i) = T(rng.uniform(-bound, bound));
  return t;
}

}  // namespace mm
