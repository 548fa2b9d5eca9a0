#include "adapt3d/scene.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "adapt3d/errors.hpp"

namespace adapt3d {
namespace {

constexpr int kSceneFactors = 10;

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 scaled(const Vec3& v, double s) { return {v[0] * s, v[1] * s, v[2] * s}; }

Vec3 clamp01(const Vec3& v) {
  return {std::clamp(v[0], 0.0, 1.0), std::clamp(v[1], 0.0, 1.0), std::clamp(v[2], 0.0, 1.0)};
}

Vec3 unit(const Vec3& v) { return scaled(v, 1.0 / std::sqrt(dot(v, v))); }

Vec3 hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double x = c * (1 - std::abs(std::fmod(h * 6.0, 2.0) - 1));
  const double m = v - c;
  const int sector = static_cast<int>(h * 6.0) % 6;
  Vec3 rgb;
  switch (sector) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

/// Fixed unit projection rows shared by every caller.
const std::vector<std::vector<double>>& latent_projection(int64_t dim) {
  static thread_local int64_t cached_dim = -1;
  static thread_local std::vector<std::vector<double>> rows;
  if (cached_dim != dim) {
    Rng rng(0x5EEDC0DEULL);
    rows.assign(kSceneFactors, std::vector<double>(dim));
    for (auto& row : rows) {
      double norm = 0;
      for (auto& v : row) {
        v = normal(rng);
        norm += v * v;
      }
      for (auto& v : row) v /= std::sqrt(norm);
    }
    cached_dim = dim;
  }
  return rows;
}

/// Nearest positive hit distance of a ray with a sphere, or +inf.
double hit_sphere(const Vec3& origin, const Vec3& dir, const Vec3& center, double radius) {
  const Vec3 oc{origin[0] - center[0], origin[1] - center[1], origin[2] - center[2]};
  const double b = dot(oc, dir);
  const double c = dot(oc, oc) - radius * radius;
  const double disc = b * b - c;
  if (disc < 0) return std::numeric_limits<double>::infinity();
  const double root = std::sqrt(disc);
  const double t0 = -b - root;
  if (t0 > 0) return t0;
  const double t1 = -b + root;
  return t1 > 0 ? t1 : std::numeric_limits<double>::infinity();
}

const Vec3 kLight = unit({0.4, 0.6, 0.7});
const Vec3 kEyeColor{0.06, 0.06, 0.1};

Vec3 surface_color(const HeadScene& scene, const Vec3& p, bool on_nose, const std::optional<StylePalette>& style) {
  Vec3 normal;
  Vec3 base;
  if (on_nose) {
    normal = unit({p[0] - scene.nose_center[0], p[1] - scene.nose_center[1], p[2] - scene.nose_center[2]});
    base = style ? scaled(style->main, 0.8) : Vec3{scene.skin[0] * 0.85 + 0.08, scene.skin[1] * 0.8, scene.skin[2] * 0.8};
  } else {
    normal = unit({p[0] - scene.center[0], p[1] - scene.center[1], p[2] - scene.center[2]});
    const Vec3 eye_l = unit({-0.33, 0.22, 0.92});
    const Vec3 eye_r = unit({0.33, 0.22, 0.92});
    const double eye_cos = std::cos(0.17);
    if (dot(normal, eye_l) > eye_cos || dot(normal, eye_r) > eye_cos) {
      base = kEyeColor;
    } else if (normal[1] > scene.hairline || normal[2] < -0.3) {
      base = style ? style->accent : scene.hair;
    } else if (normal[1] < -0.3 && normal[1] > -0.42 && std::abs(normal[0]) < 0.25 && normal[2] > 0) {
      base = style ? scaled(style->accent, 0.8) : Vec3{0.55, 0.16, 0.16};
    } else {
      base = style ? style->main : scene.skin;
      if (style && style->striped && std::sin(style->stripe_freq * (p[1] - scene.center[1])) > 0.5) {
        base = scaled(base, 0.6);
      }
    }
  }
  const double shade = 0.55 + 0.45 * std::max(0.0, dot(normal, kLight));
  return clamp01(scaled(base, shade));
}

}  // namespace

HeadScene scene_from_latent(const torch::Tensor& z) {
  auto flat = z.detach().to(torch::kDouble).contiguous().view({-1});
  const auto dim = flat.size(0);
  const auto& rows = latent_projection(dim);
  const auto* zp = flat.data_ptr<double>();
  std::array<double, kSceneFactors> a{};
  for (int k = 0; k < kSceneFactors; ++k) {
    double s = 0;
    for (int64_t i = 0; i < dim; ++i) s += rows[k][i] * zp[i];
    a[k] = std::tanh(s);
  }
  HeadScene scene;
  scene.head_radius = 0.34 + 0.04 * a[0];
  scene.center = {0.02 * a[1], 0.025 * a[2], 0.0};
  scene.skin = clamp01({0.80 + 0.12 * a[3], 0.62 + 0.12 * a[4], 0.50 + 0.12 * a[5]});
  scene.hair = clamp01({0.30 + 0.20 * a[6], 0.20 + 0.12 * a[6], 0.12 + 0.10 * a[7]});
  scene.hairline = 0.35 + 0.15 * a[8];
  scene.nose_radius = 0.075 + 0.02 * a[9];
  scene.nose_center = {scene.center[0], scene.center[1] - 0.03, scene.center[2] + 0.95 * scene.head_radius};
  return scene;
}

StylePalette style_palette(int style) {
  if (style < 0 || style >= kStyleCount) throw InputError("style index out of range: " + std::to_string(style));
  const double hue = static_cast<double>(style) / kStyleCount;
  StylePalette palette;
  palette.main = hsv(hue, 0.7, 0.9);
  palette.accent = hsv(hue + 0.45, 0.6, 0.45);
  const double mix = 0.4;
  palette.background = {0.5 * (1 - mix) + palette.main[0] * mix, 0.5 * (1 - mix) + palette.main[1] * mix,
                        0.5 * (1 - mix) + palette.main[2] * mix};
  palette.striped = style % 2 == 1;
  palette.stripe_freq = 14.0 + 2.0 * (style % 4);
  return palette;
}

int parse_style_token(const std::string& name) {
  if (name.size() == 8 && name.starts_with("style_") && std::isdigit(static_cast<unsigned char>(name[6])) &&
      std::isdigit(static_cast<unsigned char>(name[7]))) {
    const int index = (name[6] - '0') * 10 + (name[7] - '0');
    if (index < kStyleCount) return index;
  }
  throw InputError("unknown style token '" + name + "' (expected style_00 .. style_" +
                   std::to_string(kStyleCount - 1) + ")");
}

std::string style_token_name(int style) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "style_%02d", style);
  return buf;
}

SceneImage render_scene(const HeadScene& scene, const CameraPose& pose, const RenderSettings& settings,
                        std::optional<int> style) {
  const auto rays = rays_for(pose, settings.resolution, settings.near, settings.far, torch::kDouble);
  const auto res = settings.resolution;
  const auto palette = style ? std::optional<StylePalette>(style_palette(*style)) : std::nullopt;
  const Vec3 background = palette ? palette->background : Vec3{settings.background, settings.background, settings.background};

  auto rgb = torch::empty({3, res, res}, torch::kDouble);
  auto depth = torch::empty({1, res, res}, torch::kDouble);
  auto opacity = torch::empty({1, res, res}, torch::kDouble);
  const auto* o = rays.origins.data_ptr<double>();
  const auto* d = rays.directions.data_ptr<double>();
  auto* out_rgb = rgb.data_ptr<double>();
  auto* out_depth = depth.data_ptr<double>();
  auto* out_alpha = opacity.data_ptr<double>();
  const auto plane = res * res;
  for (int64_t i = 0; i < plane; ++i) {
    const Vec3 origin{o[3 * i], o[3 * i + 1], o[3 * i + 2]};
    const Vec3 dir{d[3 * i], d[3 * i + 1], d[3 * i + 2]};
    const double t_head = hit_sphere(origin, dir, scene.center, scene.head_radius);
    const double t_nose = hit_sphere(origin, dir, scene.nose_center, scene.nose_radius);
    const double t = std::min(t_head, t_nose);
    Vec3 color = background;
    double hit_depth = settings.far;
    double alpha = 0.0;
    if (std::isfinite(t) && t >= settings.near && t <= settings.far) {
      const Vec3 p{origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]};
      color = surface_color(scene, p, t_nose < t_head, palette);
      hit_depth = t;
      alpha = 1.0;
    }
    for (int c = 0; c < 3; ++c) out_rgb[c * plane + i] = color[c];
    out_depth[i] = hit_depth;
    out_alpha[i] = alpha;
  }
  return {rgb.to(torch::kFloat), depth.to(torch::kFloat), opacity.to(torch::kFloat)};
}

torch::Tensor normalize_depth(const torch::Tensor& depth, double near, double far) {
  return ((far - depth) / (far - near)).clamp(0.0, 1.0);
}

}  // namespace adapt3d
