#pragma once

#include <optional>
#include <string>

#include <torch/torch.h>

#include "adapt3d/camera.hpp"
#include "adapt3d/generator.hpp"

namespace adapt3d {

/// Number of target styles, each addressable by a token `style_NN`.
inline constexpr int kStyleCount = 16;

/// A toy "head": a shaded sphere with a nose bump, eyes, mouth and a hair
/// cap. Every field is a fixed smooth function of the latent code, so a
/// generator conditioned on z can learn the whole family.
struct HeadScene {
  Vec3 center{0, 0, 0};
  double head_radius = 0.55;
  Vec3 skin{0.8, 0.62, 0.5};
  Vec3 hair{0.3, 0.2, 0.12};
  double hairline = 0.35;  // normal.y above which the cap starts
  Vec3 nose_center{0, -0.05, 0.52};
  double nose_radius = 0.12;
};

/// Appearance of one target style: skin and hair recolored, an optional
/// stripe pattern on the skin and a tinted background.
struct StylePalette {
  Vec3 main;
  Vec3 accent;
  Vec3 background;
  bool striped = false;
  double stripe_freq = 0.0;
};

HeadScene scene_from_latent(const torch::Tensor& z);

StylePalette style_palette(int style);

/// "style_07" -> 7. Throws InputError for anything else.
int parse_style_token(const std::string& name);
std::string style_token_name(int style);

/// Ground truth by analytic ray casting: rgb [3, H, W], depth [1, H, W]
/// (far where nothing is hit), opacity [1, H, W] in {0, 1}. When `style` is
/// set the target-domain appearance is used, including its background.
struct SceneImage {
  torch::Tensor rgb;
  torch::Tensor depth;
  torch::Tensor opacity;
};

SceneImage render_scene(const HeadScene& scene, const CameraPose& pose, const RenderSettings& settings,
                        std::optional<int> style = std::nullopt);

/// (far - depth) / (far - near): nearer is brighter, background is 0.
torch::Tensor normalize_depth(const torch::Tensor& depth, double near, double far);

}  // namespace adapt3d
