#pragma once

#include <cstdint>
#include <random>
#include <string>

#include <torch/torch.h>

namespace adapt3d {

/// The only source of randomness in the library. Every stochastic routine
/// takes one by reference so that runs replay exactly from a saved state.
using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi);

/// Uniform integer in the closed range [lo, hi].
int64_t uniform_int(Rng& rng, int64_t lo, int64_t hi);

double normal(Rng& rng);

/// Standard-normal tensor filled element by element from `rng`.
torch::Tensor randn(Rng& rng, at::IntArrayRef shape, torch::Dtype dtype = torch::kFloat);

std::string save_rng(const Rng& rng);
Rng load_rng(const std::string& state);

}  // namespace adapt3d
