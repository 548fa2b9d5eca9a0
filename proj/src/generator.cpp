#include "adapt3d/generator.hpp"

#include "adapt3d/errors.hpp"

namespace F = torch::nn::functional;

namespace adapt3d {

GeneratorImpl::GeneratorImpl(GeneratorArch arch) : arch_(arch) {
  const auto plane_values = 3 * arch_.feature_dim * arch_.plane_res * arch_.plane_res;
  map_hidden_ = register_module("map_hidden", torch::nn::Linear(arch_.latent_dim, arch_.mapping_width));
  map_out_ = register_module("map_out", torch::nn::Linear(arch_.mapping_width, plane_values));
  dec_in_ = register_module("dec_in", torch::nn::Linear(arch_.feature_dim, arch_.decoder_width));
  dec_hidden_ = register_module("dec_hidden", torch::nn::Linear(arch_.decoder_width, arch_.decoder_width));
  dec_out_ = register_module("dec_out", torch::nn::Linear(arch_.decoder_width, 4));
}

torch::Dtype GeneratorImpl::dtype() const {
  return map_out_->weight.scalar_type();
}

TriPlane GeneratorImpl::synthesize_triplane(const torch::Tensor& z) const {
  auto latent = z.dim() == 1 ? z.unsqueeze(0) : z;
  if (latent.dim() != 2 || latent.size(1) != arch_.latent_dim) {
    throw ShapeError("latent must have dimension " + std::to_string(arch_.latent_dim) + ", got shape " +
                     c10::str(z.sizes()));
  }
  latent = latent.to(dtype());
  auto hidden = torch::silu(map_hidden_->forward(latent));
  auto flat = map_out_->forward(hidden);
  return {flat.view({latent.size(0), 3, arch_.feature_dim, arch_.plane_res, arch_.plane_res})};
}

torch::Tensor GeneratorImpl::sample_features(const TriPlane& plane, const torch::Tensor& xyz) const {
  const auto batch = plane.planes.size(0);
  const auto points = xyz.size(1);
  auto p = xyz.clamp(-1.0, 1.0);
  auto x = p.select(-1, 0), y = p.select(-1, 1), z = p.select(-1, 2);
  // grid[..., 0] indexes plane width, grid[..., 1] plane height.
  auto coords = torch::stack({torch::stack({x, y}, -1), torch::stack({x, z}, -1), torch::stack({y, z}, -1)}, 1);
  auto grid = coords.view({batch * 3, 1, points, 2});
  auto planes = plane.planes.reshape({batch * 3, arch_.feature_dim, arch_.plane_res, arch_.plane_res});
  auto sampled = F::grid_sample(planes, grid,
                                F::GridSampleFuncOptions()
                                    .mode(torch::kBilinear)
                                    .padding_mode(torch::kBorder)
                                    .align_corners(true));
  // [B*3, F, 1, P] -> [B, 3, F, P] -> [B, P, F]
  return sampled.view({batch, 3, arch_.feature_dim, points}).sum(1).permute({0, 2, 1});
}

PointSamples GeneratorImpl::decode_points(const TriPlane& plane, const torch::Tensor& xyz) const {
  auto features = sample_features(plane, xyz);
  auto h = torch::silu(dec_in_->forward(features));
  h = torch::silu(dec_hidden_->forward(h));
  auto out = dec_out_->forward(h);
  return {F::softplus(out.select(-1, 0)), torch::sigmoid(out.narrow(-1, 1, 3))};
}

torch::Tensor sample_distances(int64_t n_samples, double near, double far, torch::Dtype dtype) {
  const double delta = (far - near) / static_cast<double>(n_samples);
  return torch::arange(n_samples, torch::TensorOptions().dtype(dtype)) * delta + (near + 0.5 * delta);
}

RayRender composite(const torch::Tensor& density, const torch::Tensor& color, const torch::Tensor& t_vals,
                    double delta, double far, double background) {
  auto optical = density * delta;
  auto alpha = 1.0 - torch::exp(-optical);
  // Exclusive cumulative sum: transmittance before each sample.
  auto accumulated = torch::cumsum(optical, -1) - optical;
  auto weights = alpha * torch::exp(-accumulated);
  auto opacity = weights.sum(-1);
  auto rgb = (weights.unsqueeze(-1) * color).sum(-2) + (1.0 - opacity).unsqueeze(-1) * background;
  auto depth = (weights * t_vals).sum(-1) + (1.0 - opacity) * far;
  return {rgb, depth, opacity, weights};
}

RayRender render_rays(const RadianceField& field, const torch::Tensor& origins, const torch::Tensor& directions,
                      int64_t n_samples, double near, double far, double background) {
  if (n_samples < 8) throw ConfigError("volume rendering needs at least 8 samples per ray");
  const auto t_vals = sample_distances(n_samples, near, far, origins.scalar_type());
  const auto batch = origins.size(0);
  const auto rays = origins.size(1);
  // [B, P, S, 3]
  auto points = origins.unsqueeze(2) + directions.unsqueeze(2) * t_vals.view({1, 1, n_samples, 1});
  auto samples = field(points.view({batch, rays * n_samples, 3}));
  auto density = samples.density.view({batch, rays, n_samples});
  auto color = samples.color.view({batch, rays, n_samples, 3});
  return composite(density, color, t_vals, (far - near) / static_cast<double>(n_samples), far, background);
}

RenderOutput volume_render(const Generator& generator, const TriPlane& plane, const RayBundle& rays,
                           int64_t n_samples, double background) {
  auto origins = rays.origins.dim() == 3 ? rays.origins.unsqueeze(0) : rays.origins;
  auto directions = rays.directions.dim() == 3 ? rays.directions.unsqueeze(0) : rays.directions;
  const auto batch = origins.size(0), height = origins.size(1), width = origins.size(2);
  if (plane.planes.size(0) != batch) {
    throw ShapeError("tri-plane batch " + std::to_string(plane.planes.size(0)) + " does not match ray batch " +
                     std::to_string(batch));
  }
  const auto dtype = generator->dtype();
  RadianceField field = [&](const torch::Tensor& xyz) { return generator->decode_points(plane, xyz); };
  auto out = render_rays(field, origins.reshape({batch, height * width, 3}).to(dtype),
                         directions.reshape({batch, height * width, 3}).to(dtype), n_samples, rays.near, rays.far,
                         background);
  return {out.rgb.view({batch, height, width, 3}).permute({0, 3, 1, 2}),
          out.depth.view({batch, 1, height, width}), out.opacity.view({batch, 1, height, width})};
}

RenderOutput generate(const Generator& generator, const torch::Tensor& z, const std::vector<CameraPose>& poses,
                      const RenderSettings& settings) {
  auto plane = generator->synthesize_triplane(z);
  if (static_cast<int64_t>(poses.size()) != plane.planes.size(0)) {
    throw ShapeError("need one pose per latent row");
  }
  auto rays = rays_for_batch(poses, settings.resolution, settings.near, settings.far, generator->dtype());
  return volume_render(generator, plane, rays, settings.n_samples, settings.background);
}

RenderOutput generate(const Generator& generator, const torch::Tensor& z, const CameraPose& pose,
                      const RenderSettings& settings) {
  return generate(generator, z, std::vector<CameraPose>{pose}, settings);
}

torch::Tensor foreground_mask(const RenderOutput& render, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("mask threshold must lie in (0, 1)");
  return render.opacity.detach().ge(tau).to(render.opacity.scalar_type());
}

Generator clone_generator(const Generator& generator) {
  Generator copy(generator->arch());
  copy->to(generator->dtype());
  torch::NoGradGuard no_grad;
  auto src = generator->named_parameters();
  for (auto& item : copy->named_parameters()) item.value().copy_(src[item.key()]);
  return copy;
}

}  // namespace adapt3d
