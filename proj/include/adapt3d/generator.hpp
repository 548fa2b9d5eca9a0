#pragma once

#include <functional>
#include <vector>

#include <torch/torch.h>

#include "adapt3d/camera.hpp"

namespace adapt3d {

/// Shape metadata of the tri-plane generator. Stored in every checkpoint
/// and compared on load.
struct GeneratorArch {
  int64_t latent_dim = 64;
  int64_t plane_res = 32;
  int64_t feature_dim = 16;
  int64_t decoder_width = 64;
  int64_t mapping_width = 128;

  bool operator==(const GeneratorArch&) const = default;
};

struct RenderSettings {
  int64_t resolution = 64;
  int64_t n_samples = 32;
  double near = 1.7;
  double far = 3.7;
  double background = 0.5;  // gray level composited behind the scene
};

/// Three axis-aligned feature planes (xy, xz, yz), stored B x 3 x F x R x R.
struct TriPlane {
  torch::Tensor planes;
};

/// Field values at query points: density [B, P] (>= 0), color [B, P, 3] in [0, 1].
struct PointSamples {
  torch::Tensor density;
  torch::Tensor color;
};

/// Image-layout render: rgb [B, 3, H, W], depth and opacity [B, 1, H, W].
struct RenderOutput {
  torch::Tensor rgb;
  torch::Tensor depth;
  torch::Tensor opacity;
};

/// Per-ray quadrature result: rgb [B, P, 3], depth and opacity [B, P],
/// weights [B, P, S].
struct RayRender {
  torch::Tensor rgb;
  torch::Tensor depth;
  torch::Tensor opacity;
  torch::Tensor weights;
};

/// Maps query points [B, P, 3] to density and color.
using RadianceField = std::function<PointSamples(const torch::Tensor& xyz)>;

/// Mapping network (latent -> tri-plane) plus the shared point decoder
/// (summed plane features -> density, color).
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(GeneratorArch arch = {});

  /// z is [B, latent_dim] or [latent_dim].
  TriPlane synthesize_triplane(const torch::Tensor& z) const;

  /// Bilinear plane lookup, feature sum, then the decoder MLP. Points are
  /// clamped to the unit cube.
  PointSamples decode_points(const TriPlane& plane, const torch::Tensor& xyz) const;

  /// Summed tri-plane features at xyz, [B, P, F]. Exposed for tests.
  torch::Tensor sample_features(const TriPlane& plane, const torch::Tensor& xyz) const;

  const GeneratorArch& arch() const { return arch_; }
  torch::Dtype dtype() const;

 private:
  GeneratorArch arch_;
  // Layer forwards are non-const in libtorch; rendering never mutates them.
  mutable torch::nn::Linear map_hidden_{nullptr}, map_out_{nullptr};
  mutable torch::nn::Linear dec_in_{nullptr}, dec_hidden_{nullptr}, dec_out_{nullptr};
};
TORCH_MODULE(Generator);

/// Emission-absorption compositing of precomputed samples. density [B, P, S],
/// color [B, P, S, 3], t_vals [S] at uniform spacing `delta`.
RayRender composite(const torch::Tensor& density, const torch::Tensor& color,
                    const torch::Tensor& t_vals, double delta, double far, double background);

/// Bin-midpoint sample distances for `n_samples` bins spanning [near, far].
torch::Tensor sample_distances(int64_t n_samples, double near, double far, torch::Dtype dtype);

/// Renders arbitrary rays (origins/directions [B, P, 3]) through a field.
RayRender render_rays(const RadianceField& field, const torch::Tensor& origins,
                      const torch::Tensor& directions, int64_t n_samples, double near, double far,
                      double background);

/// Renders a batched ray bundle (B x H x W x 3, or H x W x 3 for B = 1)
/// through the tri-plane decoder.
RenderOutput volume_render(const Generator& generator, const TriPlane& plane,
                           const RayBundle& rays, int64_t n_samples, double background);

/// synthesize_triplane -> rays_for -> volume_render for one pose per latent row.
RenderOutput generate(const Generator& generator, const torch::Tensor& z,
                      const std::vector<CameraPose>& poses, const RenderSettings& settings);

RenderOutput generate(const Generator& generator, const torch::Tensor& z, const CameraPose& pose,
                      const RenderSettings& settings);

/// M = 1[opacity >= tau], detached, same layout as render.opacity.
torch::Tensor foreground_mask(const RenderOutput& render, double tau);

/// Deep copy whose parameters share no storage with the original.
Generator clone_generator(const Generator& generator);

}  // namespace adapt3d
