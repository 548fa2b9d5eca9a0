#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

#include "adapt3d/rng.hpp"

namespace adapt3d {

using Vec3 = std::array<double, 3>;

/// Orbit camera looking at the world origin with +y up. Yaw rotates about
/// +y (yaw = 0 sits on +z), positive pitch lifts the camera above the
/// equator.
struct CameraPose {
  double yaw = 0.0;
  double pitch = 0.0;
  double radius = 2.7;
  double fov = 0.35;  // vertical, radians
};

struct PoseDistribution {
  double yaw_min = -0.7853981633974483;
  double yaw_max = 0.7853981633974483;
  double pitch_min = -0.2617993877991494;
  double pitch_max = 0.2617993877991494;
  double radius = 2.7;
  double fov = 0.35;

  /// Throws ConfigError on inverted bounds, non-positive radius or fov
  /// outside (0, pi).
  void validate() const;
};

/// Per-pixel rays of one view, laid out H x W x 3.
struct RayBundle {
  torch::Tensor origins;
  torch::Tensor directions;
  double near = 1.7;
  double far = 3.7;
};

CameraPose sample_camera(Rng& rng, const PoseDistribution& dist);

Vec3 camera_position(const CameraPose& pose);

/// Columns are the camera right, up and backward axes in world space
/// (row-major 3x3).
std::array<double, 9> camera_to_world(const CameraPose& pose);

/// Pinhole rays. The principal point sits on pixel (H/2, W/2), so that
/// pixel's ray passes exactly through the origin.
RayBundle rays_for(const CameraPose& pose, int64_t resolution, double near, double far,
                   torch::Dtype dtype = torch::kFloat);

/// Stacks the bundles of several poses into B x H x W x 3 tensors.
RayBundle rays_for_batch(const std::vector<CameraPose>& poses, int64_t resolution, double near,
                         double far, torch::Dtype dtype = torch::kFloat);

/// Angle in radians between the viewing directions of two orbit poses.
double pose_angle(const CameraPose& a, const CameraPose& b);

}  // namespace adapt3d
