#pragma once

#include <functional>

#include "adapt3d/guidance.hpp"
#include "adapt3d/generator.hpp"
#include "adapt3d/scene.hpp"

namespace adapt3d {

/// Pose distribution of the target-domain images the toy diffusion model is
/// trained on. Most of them face the camera, mimicking the frontal bias of
/// image diffusion models; the rest follow the source distribution.
struct TargetPoseBias {
  double frontal_fraction = 0.75;
  double yaw_std = 0.08;
  double pitch_std = 0.04;
};

/// One batch of target-domain training data.
struct TargetBatch {
  torch::Tensor images;      // [B, 3, H, W]
  torch::Tensor depth;       // [B, 1, H, W], normalized
  torch::Tensor references;  // [B, 3, H, W], another frontal sample of the same style
  torch::Tensor styles;      // [B] long
};

/// Procedural target-domain images: same head geometry as the source
/// family, restyled appearance.
class TargetDomainSampler {
 public:
  TargetDomainSampler(PoseDistribution source_poses, RenderSettings settings, TargetPoseBias bias,
                      int64_t latent_dim);

  TargetBatch sample(Rng& rng, int64_t batch) const;

  /// Frontal render of style `style` for a latent drawn from `rng`.
  torch::Tensor reference_image(Rng& rng, int style) const;

  CameraPose sample_pose(Rng& rng) const;

 private:
  PoseDistribution poses_;
  RenderSettings settings_;
  TargetPoseBias bias_;
  int64_t latent_dim_;
};

struct DiffusionPretrainConfig {
  int64_t steps = 3000;
  double lr = 1e-3;
  int64_t batch = 16;
  double cond_dropout = 0.1;
  double depth_dropout = 0.3;
  double image_cond_fraction = 0.5;
  double align_weight = 0.5;
  uint64_t seed = 2;
};

struct DiffusionArch {
  int64_t schedule_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  DenoiserArch denoiser;
  EncoderArch encoder;
};

/// Trains the toy denoiser jointly with both condition encoders on the
/// target sampler. `steps == 0` returns the random initialization.
GuidanceModel pretrain_denoiser(const DiffusionArch& arch, const TargetDomainSampler& sampler,
                                const DiffusionPretrainConfig& cfg,
                                const std::function<void(int64_t, double)>& on_step = {});

/// Conditioning embeddings for a batch: text tokens, image references or the
/// null token per row.
torch::Tensor batch_text_embeddings(TextEncoder& encoder, const torch::Tensor& styles);

/// Mean denoising loss ||eps_hat - eps||^2 per element over a fixed held-out
/// set, with the true style condition (`null_condition == false`) or the null
/// token. Timesteps are drawn from [t_lo, t_hi].
double held_out_denoising_loss(GuidanceModel& model, const TargetDomainSampler& sampler, int64_t n, uint64_t seed,
                               int64_t t_lo, int64_t t_hi, bool null_condition, bool use_depth = true);

}  // namespace adapt3d
