#pragma once

#include <optional>
#include <vector>

#include <torch/torch.h>

#include "adapt3d/conditioning.hpp"
#include "adapt3d/rng.hpp"

namespace adapt3d {

/// Linear-beta forward process. Timesteps are 1-based: alpha_bar(1) = 1 - beta_1.
struct NoiseSchedule {
  int64_t steps = 0;
  std::vector<double> betas;
  std::vector<double> alphas_bar;

  double alpha_bar(int64_t t) const { return alphas_bar.at(static_cast<size_t>(t - 1)); }
};

NoiseSchedule make_schedule(int64_t steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);

/// values = sqrt(ab_t) x + sqrt(1 - ab_t) eps, with the exact eps kept.
struct NoisyImage {
  torch::Tensor values;
  int64_t t = 1;
  torch::Tensor eps;
};

NoisyImage q_sample(const torch::Tensor& x, int64_t t, const torch::Tensor& eps, const NoiseSchedule& sched);

/// Inverts q_sample given the noise realization.
torch::Tensor recover_clean(const NoisyImage& zt, const NoiseSchedule& sched);

struct DenoiserArch {
  int64_t width = 32;
  int64_t levels = 4;
  int64_t cond_dim = 32;
  int64_t embed_dim = 64;

  bool operator==(const DenoiserArch&) const = default;
};

/// Residual conv block whose normalized activations are scaled and shifted
/// by the (timestep + condition) embedding.
class FilmBlockImpl : public torch::nn::Module {
 public:
  FilmBlockImpl(int64_t width, int64_t embed_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& embedding);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::GroupNorm norm_{nullptr};
  torch::nn::Linear film_{nullptr};
};
TORCH_MODULE(FilmBlock);

/// Conv encoder-decoder with skip connections predicting the noise of an
/// RGB image from (noisy RGB, depth channel, timestep, condition).
class DenoiserImpl : public torch::nn::Module {
 public:
  explicit DenoiserImpl(DenoiserArch arch = {}, int64_t schedule_steps = 1000);

  /// noisy [B, 3, H, W], t [B] (long, 1-based), depth [B, 1, H, W] in [0, 1],
  /// cond [B, cond_dim] -> predicted noise [B, 3, H, W].
  torch::Tensor forward(const torch::Tensor& noisy, const torch::Tensor& t, const torch::Tensor& depth,
                        const torch::Tensor& cond);

  const DenoiserArch& arch() const { return arch_; }

 private:
  torch::Tensor time_embedding(const torch::Tensor& t) const;

  DenoiserArch arch_;
  int64_t schedule_steps_;
  torch::nn::Conv2d in_conv_{nullptr}, out_conv_{nullptr};
  torch::nn::ModuleList down_blocks_, downsamples_, merges_, up_blocks_;
  torch::nn::Linear time_fc1_{nullptr}, time_fc2_{nullptr}, cond_fc_{nullptr};
};
TORCH_MODULE(Denoiser);

/// Depth channel value used when no depth map is supplied.
inline constexpr double kNeutralDepth = 0.5;

/// Noise-prediction interface consumed by the score-distillation terms.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  /// depth, if present, is [B, 1, H, W] normalized to [0, 1].
  virtual torch::Tensor predict(const NoisyImage& zt, const torch::Tensor& cond,
                                const std::optional<torch::Tensor>& depth) const = 0;
};

/// Wraps the toy denoiser. With a guidance scale s the prediction is
/// eps_null + s (eps_c - eps_null); without one the conditional output is
/// returned as is.
class DenoiserPredictor : public NoisePredictor {
 public:
  DenoiserPredictor(Denoiser denoiser, std::optional<double> guidance_scale = std::nullopt,
                    torch::Tensor null_embedding = {});
  torch::Tensor predict(const NoisyImage& zt, const torch::Tensor& cond,
                        const std::optional<torch::Tensor>& depth) const override;

 private:
  Denoiser denoiser_;
  std::optional<double> guidance_scale_;
  torch::Tensor null_embedding_;
};

/// eps_phi(z_t; c, d, t) for one noisy image batch. Missing depth is filled
/// with kNeutralDepth.
torch::Tensor denoise(Denoiser& denoiser, const NoisyImage& zt, const torch::Tensor& cond,
                      const std::optional<torch::Tensor>& depth);

enum class Weighting { Uniform, OneMinusAlphaBar };

double timestep_weight(Weighting mode, const NoiseSchedule& sched, int64_t t);

/// Inclusive timestep range sampled for score distillation: [ceil(0.02T), floor(0.98T)].
std::pair<int64_t, int64_t> distillation_range(const NoiseSchedule& sched);

/// One (t, eps) draw shared by every term of an adaptation step.
struct GuidanceDraw {
  int64_t t = 1;
  torch::Tensor eps;
};

GuidanceDraw draw_guidance(Rng& rng, const NoiseSchedule& sched, at::IntArrayRef shape,
                           torch::Dtype dtype = torch::kFloat);

/// Score-distillation contribution. `surrogate` is the scalar
/// <stopgrad(w_t M (eps_hat - eps)), x>; back-propagating it yields the
/// distillation gradient on whatever produced x. `residual` is the detached
/// w_t M (eps_hat - eps), `loss` its mean square (for logging).
struct ScoreTerm {
  torch::Tensor surrogate;
  torch::Tensor residual;
  double loss = 0.0;
};

ScoreTerm sds_term(const torch::Tensor& x, const torch::Tensor& cond, const NoisePredictor& predictor,
                   const NoiseSchedule& sched, const GuidanceDraw& draw, Weighting weighting = Weighting::Uniform);

/// Depth-aware masked variant: the predictor sees the source-branch depth
/// (normalized) and the residual is gated by the target-branch mask
/// [B, 1, H, W] before it touches x.
ScoreTerm dsds_term(const torch::Tensor& x, const torch::Tensor& cond, const std::optional<torch::Tensor>& depth,
                    const torch::Tensor& mask, const NoisePredictor& predictor, const NoiseSchedule& sched,
                    const GuidanceDraw& draw, Weighting weighting = Weighting::Uniform);

/// Pretrained diffusion-side networks, all frozen during adaptation.
struct GuidanceModel {
  NoiseSchedule schedule;
  Denoiser denoiser{nullptr};
  TextEncoder text_encoder{nullptr};
  ImageEncoder image_encoder{nullptr};

  EncoderRegistry registry() const { return EncoderRegistry(text_encoder, image_encoder); }
};

}  // namespace adapt3d
