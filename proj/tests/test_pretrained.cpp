// Checks on the bench artifacts that the acceptance pipeline trains and caches
// under its work directory (generator.path, guidance.path, oracle.path).
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "adapt3d/checkpoint.hpp"
#include "adapt3d/config.hpp"
#include "adapt3d/metrics.hpp"
#include "adapt3d/rng.hpp"

namespace fs = std::filesystem;
using namespace adapt3d;

namespace {

Config bench_config() {
  Config cfg;
  cfg.load_file(ADAPT3D_BENCH_CONFIG);
  return cfg;
}

fs::path artifact(const std::string& name) {
  const char* env = std::getenv("ADAPT3D_ARTIFACTS");
  std::ifstream f(fs::path(env ? env : ADAPT3D_ARTIFACTS) / (name + ".path"));
  std::string p;
  std::getline(f, p);
  return p;
}

#define REQUIRE_ARTIFACT(var, name)                                                      \
  const auto var = artifact(name);                                                       \
  ASSERT_TRUE(!var.empty() && fs::exists(var)) << "missing " << name << " artifact; " \
                                                << "run the acceptance test first"

// Loss column of a train.log as written by the CLI ("step=N loss=X").
std::vector<double> logged_losses(const fs::path& log) {
  std::ifstream f(log);
  std::vector<double> out;
  std::string line;
  while (std::getline(f, line)) {
    const auto at = line.find("loss=");
    if (at != std::string::npos) out.push_back(std::stod(line.substr(at + 5)));
  }
  return out;
}

double mean_of(const std::vector<double>& v, size_t from, size_t to) {
  double s = 0.0;
  for (size_t i = from; i < to; ++i) s += v[i];
  return s / static_cast<double>(to - from);
}

void expect_loss_decreased(const fs::path& ckpt) {
  const auto losses = logged_losses(ckpt.parent_path() / "train.log");
  ASSERT_GE(losses.size(), 200u);
  EXPECT_LT(mean_of(losses, losses.size() - 100, losses.size()), mean_of(losses, 0, 100));
}

}  // namespace

TEST(PretrainedGenerator, LossDecreased) {
  REQUIRE_ARTIFACT(path, "generator");
  expect_loss_decreased(path);
}

TEST(PretrainedGenerator, HeldOutPsnrAtLeast20Db) {
  REQUIRE_ARTIFACT(path, "generator");
  const auto cfg = bench_config();
  const auto gen = load_generator(path);
  const auto psnr = held_out_psnr(gen, camera_config(cfg), render_config(cfg), 16, 12345);
  RecordProperty("psnr_db", std::to_string(psnr));
  EXPECT_GE(psnr, 20.0);
}

TEST(PretrainedGenerator, FrontalRenderHasForeground) {
  REQUIRE_ARTIFACT(path, "generator");
  const auto cfg = bench_config();
  const auto gen = load_generator(path);
  torch::NoGradGuard no_grad;
  Rng rng(7);
  const auto z = randn(rng, {8, gen->arch().latent_dim});
  const auto cam = camera_config(cfg);
  const std::vector<CameraPose> frontal(8, CameraPose{0.0, 0.0, cam.radius, cam.fov});
  const auto out = generate(gen, z, frontal, render_config(cfg));
  for (int64_t i = 0; i < 8; ++i) {
    const double frac = (out.opacity[i] > 0.5).to(torch::kDouble).mean().item<double>();
    EXPECT_GE(frac, 0.05) << "sample " << i;
  }
}

TEST(PretrainedGuidance, LossDecreased) {
  REQUIRE_ARTIFACT(path, "guidance");
  expect_loss_decreased(path);
}

TEST(PretrainedGuidance, DenoiserBeatsZeroPredictionAndUsesCondition) {
  REQUIRE_ARTIFACT(path, "guidance");
  const auto cfg = bench_config();
  auto bundle = load_guidance(path);
  TargetDomainSampler sampler(camera_config(cfg), render_config(cfg), target_bias(cfg),
                              cfg.get_int("generator.latent_dim"));
  const int64_t T = bundle.model.schedule.steps;
  const int64_t lo = static_cast<int64_t>(std::ceil(0.3 * T));
  const int64_t hi = static_cast<int64_t>(std::floor(0.7 * T));
  const auto cond = held_out_denoising_loss(bundle.model, sampler, 64, 999, lo, hi, false);
  const auto null = held_out_denoising_loss(bundle.model, sampler, 64, 999, lo, hi, true);
  RecordProperty("loss_cond", std::to_string(cond));
  RecordProperty("loss_null", std::to_string(null));
  // eps ~ N(0, 1) per element, so the zero predictor scores 1.
  EXPECT_LT(cond, 0.9);
  EXPECT_LT(cond, null);
}

TEST(PretrainedGuidance, DistinctPromptsHaveDistinctEmbeddings) {
  REQUIRE_ARTIFACT(path, "guidance");
  auto bundle = load_guidance(path);
  const auto registry = bundle.model.registry();
  std::vector<torch::Tensor> e;
  for (int s = 0; s < kStyleCount; ++s) e.push_back(registry.encode_text({s}).embedding.to(torch::kDouble));
  for (int a = 0; a < kStyleCount; ++a) {
    for (int b = a + 1; b < kStyleCount; ++b) {
      const double cos = torch::cosine_similarity(e[a], e[b], 0).item<double>();
      EXPECT_LT(cos, 0.99) << style_token_name(a) << " vs " << style_token_name(b);
    }
  }
}

TEST(PretrainedGuidance, ReferenceImagesLandNearTheirStyleToken) {
  REQUIRE_ARTIFACT(path, "guidance");
  const auto cfg = bench_config();
  auto bundle = load_guidance(path);
  const auto registry = bundle.model.registry();
  TargetDomainSampler sampler(camera_config(cfg), render_config(cfg), target_bias(cfg),
                              cfg.get_int("generator.latent_dim"));
  std::vector<torch::Tensor> text;
  for (int s = 0; s < kStyleCount; ++s) text.push_back(registry.encode_text({s}).embedding.to(torch::kDouble));
  Rng rng(4242);
  int hits = 0;
  for (int s = 0; s < kStyleCount; ++s) {
    const auto img = registry.encode_image(sampler.reference_image(rng, s)).embedding.to(torch::kDouble);
    int best = -1;
    double best_cos = -2.0;
    for (int k = 0; k < kStyleCount; ++k) {
      const double c = torch::cosine_similarity(img, text[k], 0).item<double>();
      if (c > best_cos) best_cos = c, best = k;
    }
    hits += best == s;
  }
  RecordProperty("hits", hits);
  EXPECT_GE(hits, 12);
}

TEST(PretrainedOracle, PassesItsGate) {
  REQUIRE_ARTIFACT(path, "oracle");
  double held_out = 0.0;
  load_pose_oracle(path, &held_out);
  RecordProperty("held_out_deg", std::to_string(held_out));
  EXPECT_LE(held_out, 3.0);
}

TEST(PretrainedOracle, FrontalRendersPredictNearZeroYaw) {
  REQUIRE_ARTIFACT(opath, "oracle");
  REQUIRE_ARTIFACT(gpath, "generator");
  const auto cfg = bench_config();
  auto oracle = load_pose_oracle(opath);
  const auto gen = load_generator(gpath);
  torch::NoGradGuard no_grad;
  Rng rng(11);
  const int64_t n = 16;
  const auto z = randn(rng, {n, gen->arch().latent_dim});
  const auto cam = camera_config(cfg);
  const std::vector<CameraPose> frontal(n, CameraPose{0.0, 0.0, cam.radius, cam.fov});
  const auto out = generate(gen, z, frontal, render_config(cfg));
  const auto pred = oracle->forward(out.rgb.to(torch::kFloat)).to(torch::kDouble);
  const double mean_abs_yaw_deg = pred.select(1, 0).abs().mean().item<double>() * 180.0 / M_PI;
  RecordProperty("mean_abs_yaw_deg", std::to_string(mean_abs_yaw_deg));
  EXPECT_LE(mean_abs_yaw_deg, 3.0);
}
