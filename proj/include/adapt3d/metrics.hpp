#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "adapt3d/camera.hpp"
#include "adapt3d/conditioning.hpp"
#include "adapt3d/consistency.hpp"
#include "adapt3d/generator.hpp"
#include "adapt3d/guidance.hpp"

namespace adapt3d {

struct PoseOracleArch {
  int64_t resolution = 64;
  int64_t width = 16;

  bool operator==(const PoseOracleArch&) const = default;
};

/// Small CNN regressing (yaw, pitch) in radians from an RGB render.
class PoseOracleImpl : public torch::nn::Module {
 public:
  explicit PoseOracleImpl(PoseOracleArch arch = {});
  /// images [B, 3, H, W] -> [B, 2]
  torch::Tensor forward(const torch::Tensor& images);
  const PoseOracleArch& arch() const { return arch_; }

 private:
  PoseOracleArch arch_;
  torch::nn::Sequential features_{nullptr};
  torch::nn::Linear hidden_{nullptr}, head_{nullptr};
};
TORCH_MODULE(PoseOracle);

struct PoseOracleTrainConfig {
  int64_t dataset = 4000;
  int64_t steps = 3000;
  int64_t batch = 64;
  double lr = 2e-3;
  double gate_deg = 3.0;
  int64_t gate_samples = 256;
  uint64_t seed = 3;
};

struct PoseOracleResult {
  PoseOracle oracle{nullptr};
  double held_out_deg = 0.0;
  bool gate_passed = false;
};

/// Trains on renders of `source` plus procedural ground-truth heads in every
/// style, with random photometric jitter so the regressor keys on geometry.
/// The gate is the mean angular error on held-out source renders.
PoseOracleResult train_pose_oracle(const Generator& source, const PoseDistribution& poses,
                                   const RenderSettings& settings, const PoseOracleTrainConfig& cfg,
                                   const std::function<void(int64_t, double)>& on_step = {});

void save_pose_oracle(const std::filesystem::path& path, const PoseOracle& oracle, double held_out_deg);
PoseOracle load_pose_oracle(const std::filesystem::path& path, double* held_out_deg = nullptr);

/// Evaluation draws shared by every metric: latent rows and poses.
struct EvalSamples {
  torch::Tensor z;  // [n, latent_dim]
  std::vector<CameraPose> poses;
};

EvalSamples eval_samples(int64_t latent_dim, const PoseDistribution& poses, int64_t n, uint64_t seed);

/// Renders every sample in chunks, without gradients.
RenderOutput render_samples(const Generator& generator, const EvalSamples& samples, const RenderSettings& settings);

/// Mean angle in degrees between oracle-predicted and true viewing directions.
double pose_error(const Generator& generator, PoseOracle& oracle, const PoseDistribution& poses,
                  const RenderSettings& settings, int64_t n, uint64_t seed);

double pose_error_of_images(const torch::Tensor& images, const std::vector<CameraPose>& poses, PoseOracle& oracle);

/// Agreement of two renders' spatial structure. Both are reduced to
/// locally contrast-normalized luminance, tokenized, and per layer the Pearson
/// correlation between the off-diagonal entries of the token self-similarity
/// matrices is averaged over layers and samples. In [-1, 1].
double scs_of_images(const torch::Tensor& a, const torch::Tensor& b, const PatchTokenizer& tokenizer);

double scs(const Generator& source, const Generator& target, const PatchTokenizer& tokenizer,
           const PoseDistribution& poses, const RenderSettings& settings, int64_t n, uint64_t seed);

/// Mean squared RGB difference on pixels the target mask marks as
/// background; nullopt when no sample has any background pixel.
std::optional<double> background_preservation(const Generator& source, const Generator& target,
                                              const PoseDistribution& poses, const RenderSettings& settings,
                                              double mask_tau, int64_t n, uint64_t seed);

std::optional<double> background_preservation_of(const RenderOutput& source, const RenderOutput& target,
                                                 double mask_tau);

/// Mean over renders and mid-range timesteps t in [0.3T, 0.7T] of
/// (null-condition denoising loss - target-condition denoising loss).
double align_proxy(const Generator& generator, const Condition& condition, GuidanceModel& guidance,
                   const PoseDistribution& poses, const RenderSettings& settings, int64_t n, uint64_t seed,
                   int64_t draws = 8);

double align_proxy_of_images(const torch::Tensor& images, const Condition& condition, GuidanceModel& guidance,
                             uint64_t seed, int64_t draws = 8);

struct MetricReport {
  std::string config;
  double pose_deg = 0.0;
  double scs = 0.0;
  std::optional<double> bg_mse;
  double align_proxy = 0.0;
  int64_t n = 0;
  uint64_t seed = 0;
  /// Extra scores from plugged-in scorers; reported on record lines only.
  std::map<std::string, double> extras;
};

/// External scorer hook (e.g. a real text-image similarity model).
using ImageScorer = std::function<double(const torch::Tensor& images, const Condition& condition)>;

struct EvalContext {
  Generator source{nullptr};
  PoseOracle oracle{nullptr};
  PatchTokenizer tokenizer;
  GuidanceModel* guidance = nullptr;
  Condition condition;
  PoseDistribution poses;
  RenderSettings render;
  double mask_tau = 0.5;
  int64_t n = 64;
  uint64_t seed = 7;
  int64_t align_draws = 8;
  std::map<std::string, ImageScorer> scorers;
};

MetricReport evaluate(const std::string& name, const Generator& target, const EvalContext& ctx);

std::string csv_header();
std::string csv_row(const MetricReport& report);
/// "config=<name> pose_deg=<f> scs=<f> bg_mse=<f|ABSENT> align_proxy=<f> n=<n> seed=<n> [extras]"
std::string record_line(const MetricReport& report);

}  // namespace adapt3d
