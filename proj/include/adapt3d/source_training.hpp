#pragma once

#include <functional>

#include "adapt3d/generator.hpp"

namespace adapt3d {

struct SourcePretrainConfig {
  int64_t steps = 5000;
  double lr = 2e-3;
  int64_t batch = 2;
  int64_t rays_per_image = 1024;
  double depth_weight = 1.0;
  uint64_t seed = 1;
};

/// Called after every optimizer step with (step, loss).
using StepCallback = std::function<void(int64_t, double)>;

/// Fits a freshly initialized generator to the procedural head family by
/// photometric plus depth L2 regression on random ray subsets. `steps == 0`
/// returns the initialization. Throws TrainingError on a non-finite loss.
Generator pretrain_source(const GeneratorArch& arch, const PoseDistribution& dist, const RenderSettings& settings,
                          const SourcePretrainConfig& cfg, const StepCallback& on_step = {});

/// Mean PSNR (dB) of full renders against analytic ground truth on `n`
/// latents/poses drawn from `seed`.
double held_out_psnr(const Generator& generator, const PoseDistribution& dist, const RenderSettings& settings,
                     int64_t n, uint64_t seed);

}  // namespace adapt3d
