#include "adapt3d/camera.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "adapt3d/errors.hpp"

namespace adapt3d {
namespace {

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

Vec3 view_direction(const CameraPose& pose) {
  return {std::sin(pose.yaw) * std::cos(pose.pitch), std::sin(pose.pitch),
          std::cos(pose.yaw) * std::cos(pose.pitch)};
}

}  // namespace

void PoseDistribution::validate() const {
  std::ostringstream msg;
  if (!(yaw_min <= yaw_max)) msg << "yaw bounds inverted (" << yaw_min << " > " << yaw_max << "); ";
  if (!(pitch_min <= pitch_max)) msg << "pitch bounds inverted (" << pitch_min << " > " << pitch_max << "); ";
  if (!(std::abs(pitch_min) < std::numbers::pi / 2 && std::abs(pitch_max) < std::numbers::pi / 2))
    msg << "pitch must stay inside (-pi/2, pi/2); ";
  if (!(radius > 0)) msg << "radius must be positive; ";
  if (!(fov > 0 && fov < std::numbers::pi)) msg << "fov must lie in (0, pi); ";
  const auto text = msg.str();
  if (!text.empty()) throw ConfigError("invalid pose distribution: " + text.substr(0, text.size() - 2));
}

CameraPose sample_camera(Rng& rng, const PoseDistribution& dist) {
  dist.validate();
  CameraPose pose;
  pose.yaw = uniform(rng, dist.yaw_min, dist.yaw_max);
  pose.pitch = uniform(rng, dist.pitch_min, dist.pitch_max);
  pose.radius = dist.radius;
  pose.fov = dist.fov;
  return pose;
}

Vec3 camera_position(const CameraPose& pose) {
  const auto v = view_direction(pose);
  return {pose.radius * v[0], pose.radius * v[1], pose.radius * v[2]};
}

std::array<double, 9> camera_to_world(const CameraPose& pose) {
  const auto back = view_direction(pose);
  const Vec3 forward{-back[0], -back[1], -back[2]};
  const auto right = normalized(cross(forward, Vec3{0.0, 1.0, 0.0}));
  const auto up = cross(right, forward);
  return {right[0], up[0], back[0],  //
          right[1], up[1], back[1],  //
          right[2], up[2], back[2]};
}

RayBundle rays_for(const CameraPose& pose, int64_t resolution, double near, double far,
                   torch::Dtype dtype) {
  if (resolution < 4) throw ConfigError("ray resolution must be at least 4");
  if (!(near > 0 && near < far)) throw ConfigError("ray bounds require 0 < near < far");

  const auto rot = camera_to_world(pose);
  const auto eye = camera_position(pose);
  const double half = 0.5 * static_cast<double>(resolution);
  const double tan_half = std::tan(0.5 * pose.fov);

  auto origins = torch::empty({resolution, resolution, 3}, torch::kDouble);
  auto directions = torch::empty({resolution, resolution, 3}, torch::kDouble);
  auto* o = origins.data_ptr<double>();
  auto* d = directions.data_ptr<double>();
  for (int64_t row = 0; row < resolution; ++row) {
    const double y = -(static_cast<double>(row) - half) / half * tan_half;
    for (int64_t col = 0; col < resolution; ++col) {
      const double x = (static_cast<double>(col) - half) / half * tan_half;
      // Camera-space direction (x, y, -1) mapped through the rotation.
      Vec3 dir{rot[0] * x + rot[1] * y - rot[2], rot[3] * x + rot[4] * y - rot[5],
               rot[6] * x + rot[7] * y - rot[8]};
      dir = normalized(dir);
      const auto k = 3 * (row * resolution + col);
      for (int c = 0; c < 3; ++c) {
        o[k + c] = eye[c];
        d[k + c] = dir[c];
      }
    }
  }
  return {origins.to(dtype), directions.to(dtype), near, far};
}

RayBundle rays_for_batch(const std::vector<CameraPose>& poses, int64_t resolution, double near,
                         double far, torch::Dtype dtype) {
  std::vector<torch::Tensor> origins, directions;
  for (const auto& pose : poses) {
    auto rays = rays_for(pose, resolution, near, far, dtype);
    origins.push_back(rays.origins);
    directions.push_back(rays.directions);
  }
  return {torch::stack(origins), torch::stack(directions), near, far};
}

double pose_angle(const CameraPose& a, const CameraPose& b) {
  const auto va = view_direction(a);
  const auto vb = view_direction(b);
  const double dot = va[0] * vb[0] + va[1] * vb[1] + va[2] * vb[2];
  const auto c = cross(va, vb);
  return std::atan2(std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]), dot);
}

}  // namespace adapt3d
