#pragma once

#include <torch/torch.h>

#include "adapt3d/consistency.hpp"

namespace adapt3d::testing {

struct DescentResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double mean_cosine = 0.0;               // over every token of every layer
  std::vector<double> layer_mean_cosine;  // per layer
};

/// Projected gradient descent on free unit-norm target tokens against fixed
/// random source tokens laid out like the pyramid of one 64x64 image.
inline DescentResult hsc_descent(uint64_t seed, int steps = 200, double lr = 0.5) {
  auto gen = at::detail::createCPUGenerator(seed);
  const std::vector<std::pair<int64_t, int64_t>> shapes{{256, 32}, {64, 64}, {16, 128}};
  auto unit = [](const torch::Tensor& t) { return t / t.norm(2, -1, true); };
  TokenPyramid source, target;
  for (auto [n, d] : shapes) {
    source.layers.push_back(unit(at::randn({1, n, d}, gen, torch::kDouble)));
    target.layers.push_back(unit(at::randn({1, n, d}, gen, torch::kDouble)));
  }
  DescentResult out;
  for (int step = 0; step <= steps; ++step) {
    for (auto& t : target.layers) t.requires_grad_(true);
    auto loss = hsc_loss(target, source);
    if (step == 0) out.initial_loss = loss.item<double>();
    out.final_loss = loss.item<double>();
    if (step == steps) break;
    auto grads = torch::autograd::grad({loss}, target.layers);
    for (size_t l = 0; l < grads.size(); ++l) target.layers[l] = unit(target.layers[l].detach() - lr * grads[l]);
  }
  double sum = 0.0;
  int64_t count = 0;
  for (size_t l = 0; l < shapes.size(); ++l) {
    auto cos = (target.layers[l].detach() * source.layers[l]).sum(-1);
    out.layer_mean_cosine.push_back(cos.mean().item<double>());
    sum += cos.sum().item<double>();
    count += cos.numel();
  }
  out.mean_cosine = sum / static_cast<double>(count);
  return out;
}

}  // namespace adapt3d::testing
