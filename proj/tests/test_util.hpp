#pragma once

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "adapt3d/generator.hpp"

namespace adapt3d::testing {

inline GeneratorArch tiny_arch() { return GeneratorArch{8, 8, 4, 16, 16}; }

inline RenderSettings tiny_render(int64_t resolution = 16) {
  RenderSettings s;
  s.resolution = resolution;
  s.n_samples = 16;
  return s;
}

inline bool bitwise_equal(const torch::Tensor& a, const torch::Tensor& b) {
  return a.sizes() == b.sizes() && a.scalar_type() == b.scalar_type() && torch::equal(a, b);
}

inline bool same_parameters(const torch::nn::Module& a, const torch::nn::Module& b) {
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (const auto& item : pa) {
    if (!bitwise_equal(item.value(), pb[item.key()])) return false;
  }
  return true;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

}  // namespace adapt3d::testing
