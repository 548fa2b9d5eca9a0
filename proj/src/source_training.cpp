#include "adapt3d/source_training.hpp"

#include <cmath>

#include "adapt3d/errors.hpp"
#include "adapt3d/scene.hpp"

namespace adapt3d {

Generator pretrain_source(const GeneratorArch& arch, const PoseDistribution& dist, const RenderSettings& settings,
                          const SourcePretrainConfig& cfg, const StepCallback& on_step) {
  dist.validate();
  torch::manual_seed(cfg.seed);
  Generator generator(arch);
  if (cfg.steps == 0) return generator;

  Rng rng(cfg.seed);
  torch::optim::Adam optimizer(generator->parameters(), torch::optim::AdamOptions(cfg.lr));
  const auto pixels = settings.resolution * settings.resolution;
  const double span = settings.far - settings.near;

  for (int64_t step = 0; step < cfg.steps; ++step) {
    // Step decay over the last third keeps the fit from rattling at the end.
    const double lr = step < 2 * cfg.steps / 3 ? cfg.lr : cfg.lr * 0.2;
    for (auto& group : optimizer.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);

    auto z = randn(rng, {cfg.batch, arch.latent_dim});
    std::vector<torch::Tensor> origins, directions, target_rgb, target_depth;
    for (int64_t b = 0; b < cfg.batch; ++b) {
      const auto pose = sample_camera(rng, dist);
      const auto truth = render_scene(scene_from_latent(z[b]), pose, settings);
      const auto rays = rays_for(pose, settings.resolution, settings.near, settings.far);
      auto index = torch::empty({cfg.rays_per_image}, torch::kLong);
      auto* idx = index.data_ptr<int64_t>();
      for (int64_t r = 0; r < cfg.rays_per_image; ++r) idx[r] = uniform_int(rng, 0, pixels - 1);
      origins.push_back(rays.origins.view({pixels, 3}).index_select(0, index));
      directions.push_back(rays.directions.view({pixels, 3}).index_select(0, index));
      target_rgb.push_back(truth.rgb.view({3, pixels}).t().index_select(0, index));
      target_depth.push_back(truth.depth.view({pixels}).index_select(0, index));
    }
    auto plane = generator->synthesize_triplane(z);
    RadianceField field = [&](const torch::Tensor& xyz) { return generator->decode_points(plane, xyz); };
    auto out = render_rays(field, torch::stack(origins), torch::stack(directions), settings.n_samples,
                           settings.near, settings.far, settings.background);
    auto loss = torch::mse_loss(out.rgb, torch::stack(target_rgb)) +
                cfg.depth_weight * torch::mse_loss(out.depth / span, torch::stack(target_depth) / span);
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
      throw TrainingError("source pretraining diverged at step " + std::to_string(step), step);
    }
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
    if (on_step) on_step(step, value);
  }
  return generator;
}

double held_out_psnr(const Generator& generator, const PoseDistribution& dist, const RenderSettings& settings,
                     int64_t n, uint64_t seed) {
  torch::NoGradGuard no_grad;
  Rng rng(seed);
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    auto z = randn(rng, {1, generator->arch().latent_dim});
    const auto pose = sample_camera(rng, dist);
    const auto truth = render_scene(scene_from_latent(z[0]), pose, settings);
    const auto render = generate(generator, z, pose, settings);
    const double mse = torch::mse_loss(render.rgb[0].to(torch::kFloat), truth.rgb).item<double>();
    total += 10.0 * std::log10(1.0 / std::max(mse, 1e-12));
  }
  return total / static_cast<double>(n);
}

}  // namespace adapt3d
