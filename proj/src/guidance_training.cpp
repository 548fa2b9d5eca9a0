#include "adapt3d/guidance_training.hpp"

#include <cmath>

#include "adapt3d/errors.hpp"

namespace F = torch::nn::functional;

namespace adapt3d {

TargetDomainSampler::TargetDomainSampler(PoseDistribution source_poses, RenderSettings settings,
                                         TargetPoseBias bias, int64_t latent_dim)
    : poses_(source_poses), settings_(settings), bias_(bias), latent_dim_(latent_dim) {
  poses_.validate();
}

CameraPose TargetDomainSampler::sample_pose(Rng& rng) const {
  if (uniform(rng, 0.0, 1.0) >= bias_.frontal_fraction) return sample_camera(rng, poses_);
  CameraPose pose;
  pose.radius = poses_.radius;
  pose.fov = poses_.fov;
  pose.yaw = std::clamp(bias_.yaw_std * normal(rng), poses_.yaw_min, poses_.yaw_max);
  pose.pitch = std::clamp(bias_.pitch_std * normal(rng), poses_.pitch_min, poses_.pitch_max);
  return pose;
}

torch::Tensor TargetDomainSampler::reference_image(Rng& rng, int style) const {
  auto z = randn(rng, {latent_dim_});
  CameraPose frontal;
  frontal.radius = poses_.radius;
  frontal.fov = poses_.fov;
  return render_scene(scene_from_latent(z), frontal, settings_, style).rgb;
}

TargetBatch TargetDomainSampler::sample(Rng& rng, int64_t batch) const {
  std::vector<torch::Tensor> images, depths, refs;
  std::vector<int64_t> styles;
  for (int64_t b = 0; b < batch; ++b) {
    const int style = static_cast<int>(uniform_int(rng, 0, kStyleCount - 1));
    auto z = randn(rng, {latent_dim_});
    const auto pose = sample_pose(rng);
    auto shot = render_scene(scene_from_latent(z), pose, settings_, style);
    images.push_back(shot.rgb);
    depths.push_back(normalize_depth(shot.depth, settings_.near, settings_.far));
    refs.push_back(reference_image(rng, style));
    styles.push_back(style);
  }
  return {torch::stack(images), torch::stack(depths), torch::stack(refs), torch::tensor(styles, torch::kLong)};
}

torch::Tensor batch_text_embeddings(TextEncoder& encoder, const torch::Tensor& styles) {
  return encoder->forward(styles.view({-1, 1}));
}

GuidanceModel pretrain_denoiser(const DiffusionArch& arch, const TargetDomainSampler& sampler,
                                const DiffusionPretrainConfig& cfg,
                                const std::function<void(int64_t, double)>& on_step) {
  torch::manual_seed(cfg.seed);
  GuidanceModel model;
  model.schedule = make_schedule(arch.schedule_steps, arch.beta_start, arch.beta_end);
  model.denoiser = Denoiser(arch.denoiser, arch.schedule_steps);
  model.text_encoder = TextEncoder(arch.encoder);
  model.image_encoder = ImageEncoder(arch.encoder);
  if (arch.denoiser.cond_dim != arch.encoder.cond_dim) {
    throw ConfigError("denoiser and encoders disagree on the condition dimension");
  }
  if (cfg.steps == 0) return model;

  std::vector<torch::Tensor> params;
  for (auto& p : model.denoiser->parameters()) params.push_back(p);
  for (auto& p : model.text_encoder->parameters()) params.push_back(p);
  for (auto& p : model.image_encoder->parameters()) params.push_back(p);
  torch::optim::Adam optimizer(params, torch::optim::AdamOptions(cfg.lr));

  Rng rng(cfg.seed);
  const auto& sched = model.schedule;
  const auto all_styles = torch::arange(kStyleCount, torch::kLong);
  for (int64_t step = 0; step < cfg.steps; ++step) {
    const double lr = step < 2 * cfg.steps / 3 ? cfg.lr : cfg.lr * 0.2;
    for (auto& group : optimizer.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);

    auto data = sampler.sample(rng, cfg.batch);
    const auto batch = cfg.batch;
    auto t = torch::empty({batch}, torch::kLong);
    auto ab = torch::empty({batch, 1, 1, 1});
    auto use_null = torch::empty({batch, 1});
    auto use_image = torch::empty({batch, 1});
    auto drop_depth = torch::empty({batch, 1, 1, 1});
    for (int64_t b = 0; b < batch; ++b) {
      t[b] = uniform_int(rng, 1, sched.steps);
      ab[b] = sched.alpha_bar(t[b].item<int64_t>());
      const double u = uniform(rng, 0.0, 1.0);
      use_null[b] = u < cfg.cond_dropout ? 1.0 : 0.0;
      use_image[b] = (u >= cfg.cond_dropout && uniform(rng, 0.0, 1.0) < cfg.image_cond_fraction) ? 1.0 : 0.0;
      drop_depth[b] = uniform(rng, 0.0, 1.0) < cfg.depth_dropout ? 1.0 : 0.0;
    }
    auto eps = randn(rng, data.images.sizes());
    auto noisy = ab.sqrt() * data.images + (1.0 - ab).sqrt() * eps;
    auto depth = drop_depth * kNeutralDepth + (1.0 - drop_depth) * data.depth;

    auto text = batch_text_embeddings(model.text_encoder, data.styles);
    auto image = model.image_encoder->forward(data.references);
    auto null = batch_text_embeddings(model.text_encoder, torch::full({batch}, kNullToken, torch::kLong));
    auto cond = use_null * null + (1.0 - use_null) * (use_image * image + (1.0 - use_image) * text);

    auto eps_hat = model.denoiser->forward(noisy, t, depth, cond);
    auto loss = torch::mse_loss(eps_hat, eps);
    if (cfg.align_weight > 0) {
      // Pull each reference embedding toward its style's text embedding and
      // away from the other styles.
      auto keys = F::normalize(batch_text_embeddings(model.text_encoder, all_styles), F::NormalizeFuncOptions().dim(1));
      auto logits = 10.0 * torch::matmul(F::normalize(image, F::NormalizeFuncOptions().dim(1)), keys.t());
      loss = loss + cfg.align_weight * F::cross_entropy(logits, data.styles);
    }
    const double value = loss.item<double>();
    if (!std::isfinite(value)) throw TrainingError("diffusion pretraining diverged at step " + std::to_string(step), step);
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
    if (on_step) on_step(step, value);
  }
  for (auto& p : params) p.set_requires_grad(false);
  return model;
}

double held_out_denoising_loss(GuidanceModel& model, const TargetDomainSampler& sampler, int64_t n, uint64_t seed,
                               int64_t t_lo, int64_t t_hi, bool null_condition, bool use_depth) {
  torch::NoGradGuard no_grad;
  Rng rng(seed);
  auto data = sampler.sample(rng, n);
  auto t = torch::empty({n}, torch::kLong);
  auto ab = torch::empty({n, 1, 1, 1});
  for (int64_t b = 0; b < n; ++b) {
    t[b] = uniform_int(rng, t_lo, t_hi);
    ab[b] = model.schedule.alpha_bar(t[b].item<int64_t>());
  }
  auto eps = randn(rng, data.images.sizes());
  auto noisy = ab.sqrt() * data.images + (1.0 - ab).sqrt() * eps;
  auto tokens = null_condition ? torch::full({n}, kNullToken, torch::kLong) : data.styles;
  auto cond = batch_text_embeddings(model.text_encoder, tokens);
  auto depth = use_depth ? data.depth : torch::full_like(data.depth, kNeutralDepth);
  auto eps_hat = model.denoiser->forward(noisy, t, depth, cond);
  return torch::mse_loss(eps_hat, eps).item<double>();
}

}  // namespace adapt3d
