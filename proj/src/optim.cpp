// Copyright 2026 The Respira Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "respira/optim.hpp"

#include <cmath>
#include <numbers>

#include "respira/error.hpp"

namespace respira {

void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
      state.v.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam state does not match parameter list");
  ++state.step;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto w = p.mutable_data();
    const auto g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != w.size()) throw ShapeError("adam state size mismatch for parameter " + std::to_string(i));
    for (std::size_t j = 0; j < w.size(); ++j) {
      const float grad = (g.empty() ? 0.0f : g[j]) + cfg.weight_decay * w[j];
      m[j] = cfg.beta1 * m[j] + (1.0f - cfg.beta1) * grad;
      v[j] = cfg.beta2 * v[j] + (1.0f - cfg.beta2) * grad * grad;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] -= static_cast<float>(cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0) {
  if (total_steps <= 0) return lr0;
  if (step < 0 || step > total_steps) {
    throw ConfigError("cosine_lr step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  if (step == total_steps) return 0.0;
  return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

}  // namespace respira
