#include <cmath>
#include <numbers>

#include "adapt3d/camera.hpp"
#include "adapt3d/errors.hpp"
#include "test_util.hpp"

using namespace adapt3d;

namespace {

constexpr double kPi = std::numbers::pi;

torch::Tensor rotation_y(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return torch::tensor({c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c}, torch::kDouble).view({3, 3});
}

}  // namespace

TEST(Camera, SamplesStayInsideBounds) {
  PoseDistribution dist;
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const auto pose = sample_camera(rng, dist);
    EXPECT_GE(pose.yaw, -kPi / 4);
    EXPECT_LE(pose.yaw, kPi / 4);
    EXPECT_GE(pose.pitch, -kPi / 12);
    EXPECT_LE(pose.pitch, kPi / 12);
    EXPECT_DOUBLE_EQ(pose.radius, 2.7);
  }
}

TEST(Camera, DegenerateIntervalGivesFrontalPose) {
  PoseDistribution dist;
  dist.yaw_min = dist.yaw_max = 0.0;
  dist.pitch_min = dist.pitch_max = 0.0;
  Rng rng(1);
  const auto pose = sample_camera(rng, dist);
  EXPECT_EQ(pose.yaw, 0.0);
  EXPECT_EQ(pose.pitch, 0.0);
}

TEST(Camera, SamplingIsDeterministic) {
  PoseDistribution dist;
  Rng a(42), b(42);
  for (int i = 0; i < 20; ++i) {
    const auto pa = sample_camera(a, dist);
    const auto pb = sample_camera(b, dist);
    EXPECT_EQ(pa.yaw, pb.yaw);
    EXPECT_EQ(pa.pitch, pb.pitch);
  }
}

TEST(Camera, InvalidBoundsAreConfigErrors) {
  PoseDistribution dist;
  dist.yaw_min = 1.0;
  dist.yaw_max = 0.0;
  Rng rng(0);
  EXPECT_THROW(sample_camera(rng, dist), ConfigError);
  PoseDistribution bad_radius;
  bad_radius.radius = 0.0;
  EXPECT_THROW(bad_radius.validate(), ConfigError);
  PoseDistribution bad_fov;
  bad_fov.fov = kPi;
  EXPECT_THROW(bad_fov.validate(), ConfigError);
}

TEST(Camera, FrontalCentralRayPointsDownNegativeZ) {
  const auto rays = rays_for(CameraPose{0.0, 0.0, 2.7, 0.35}, 16, 1.7, 3.7, torch::kDouble);
  auto d = rays.directions[8][8];
  EXPECT_NEAR(d[0].item<double>(), 0.0, 1e-5);
  EXPECT_NEAR(d[1].item<double>(), 0.0, 1e-5);
  EXPECT_NEAR(d[2].item<double>(), -1.0, 1e-5);
}

TEST(Camera, CentralRayPassesThroughOrigin) {
  Rng rng(3);
  PoseDistribution dist;
  for (int i = 0; i < 50; ++i) {
    const auto pose = sample_camera(rng, dist);
    const auto rays = rays_for(pose, 32, 1.7, 3.7, torch::kDouble);
    auto o = rays.origins[16][16];
    auto d = rays.directions[16][16];
    // Distance from the origin to the line o + s d.
    auto closest = o - (o * d).sum() * d;
    EXPECT_LT(closest.norm().item<double>(), 1e-5);
  }
}

TEST(Camera, DirectionsAreUnitNorm) {
  Rng rng(9);
  PoseDistribution dist;
  for (int i = 0; i < 20; ++i) {
    const auto rays = rays_for(sample_camera(rng, dist), 16, 1.7, 3.7);
    auto norms = rays.directions.to(torch::kDouble).norm(2, -1);
    EXPECT_LT((norms - 1.0).abs().max().item<double>(), 1e-6);
  }
}

TEST(Camera, QuarterTurnYawPutsCameraOnPositiveX) {
  const auto p = camera_position(CameraPose{kPi / 2, 0.0, 2.7, 0.35});
  EXPECT_NEAR(p[0], 2.7, 1e-5);
  EXPECT_NEAR(p[1], 0.0, 1e-5);
  EXPECT_NEAR(p[2], 0.0, 1e-5);
  const auto rays = rays_for(CameraPose{kPi / 2, 0.0, 2.7, 0.35}, 8, 1.7, 3.7, torch::kDouble);
  EXPECT_NEAR(rays.origins[0][0][0].item<double>(), 2.7, 1e-5);
}

TEST(Camera, RaysArePure) {
  const CameraPose pose{0.3, -0.1, 2.7, 0.35};
  const auto a = rays_for(pose, 16, 1.7, 3.7);
  const auto b = rays_for(pose, 16, 1.7, 3.7);
  EXPECT_TRUE(torch::equal(a.origins, b.origins));
  EXPECT_TRUE(torch::equal(a.directions, b.directions));
}

TEST(Camera, YawActsAsWorldRotation) {
  const auto frontal = rays_for(CameraPose{0.0, 0.0, 2.7, 0.35}, 16, 1.7, 3.7, torch::kDouble);
  for (double delta : {-0.6, 0.25, 0.7}) {
    const auto turned = rays_for(CameraPose{delta, 0.0, 2.7, 0.35}, 16, 1.7, 3.7, torch::kDouble);
    auto r = rotation_y(delta);
    auto o = torch::matmul(frontal.origins, r.t());
    auto d = torch::matmul(frontal.directions, r.t());
    EXPECT_LT((o - turned.origins).abs().max().item<double>(), 1e-5);
    EXPECT_LT((d - turned.directions).abs().max().item<double>(), 1e-5);
  }
}

TEST(Camera, RayPreconditions) {
  const CameraPose pose{};
  EXPECT_THROW(rays_for(pose, 3, 1.7, 3.7), ConfigError);
  EXPECT_THROW(rays_for(pose, 8, 3.7, 1.7), ConfigError);
  EXPECT_THROW(rays_for(pose, 8, 0.0, 1.7), ConfigError);
}

TEST(Camera, PoseAngle) {
  const CameraPose a{0.0, 0.0, 2.7, 0.35};
  EXPECT_NEAR(pose_angle(a, a), 0.0, 1e-12);
  EXPECT_NEAR(pose_angle(a, CameraPose{0.5, 0.0, 2.7, 0.35}), 0.5, 1e-12);
  EXPECT_NEAR(pose_angle(a, CameraPose{0.0, -0.2, 1.0, 0.35}), 0.2, 1e-12);
}
