#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "adapt3d/camera.hpp"
#include "adapt3d/conditioning.hpp"
#include "adapt3d/consistency.hpp"
#include "adapt3d/generator.hpp"
#include "adapt3d/guidance.hpp"
#include "adapt3d/rng.hpp"

namespace adapt3d {

enum class OptimizerKind { MomentumSgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First-order optimizer over named parameters with inspectable moments.
///
/// MomentumSgd: v <- mu v + g; theta <- theta - lr v.
/// Adam: the usual bias-corrected update.
class ParamOptimizer {
 public:
  explicit ParamOptimizer(OptimizerConfig cfg = {});

  /// Reads each parameter's .grad() (missing gradients count as zero).
  void step(const std::vector<std::pair<std::string, torch::Tensor>>& params, double lr);

  /// Moments keyed "<param>/<moment>"; zero until the first step touches them.
  std::map<std::string, torch::Tensor>& moments() { return moments_; }
  const std::map<std::string, torch::Tensor>& moments() const { return moments_; }
  int64_t updates() const { return updates_; }
  void set_updates(int64_t n) { updates_ = n; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  torch::Tensor& moment(const std::string& name, const torch::Tensor& like);

  OptimizerConfig cfg_;
  std::map<std::string, torch::Tensor> moments_;
  int64_t updates_ = 0;
};

struct AdaptConfig {
  double lambda = 3.0;
  double lr = 2e-4;
  int64_t iters = 2000;
  uint64_t seed = 0;
  int64_t batch = 1;
  bool use_depth = true;
  bool use_mask = true;
  bool use_hsc = true;
  double mask_tau = 0.5;
  double hsc_temperature = 1.0;
  Weighting weighting = Weighting::Uniform;
  std::optional<double> guidance_scale;
  int64_t checkpoint_every = 500;
  OptimizerConfig optimizer;
  PoseDistribution poses;
  RenderSettings render;

  /// Throws ConfigError on invalid values (negative lambda, lr <= 0, ...).
  void validate() const;
};

/// Mutable adaptation state: frozen source copy, trainable target, optimizer
/// moments, RNG and iteration counter.
struct AdaptState {
  Generator source{nullptr};
  Generator target{nullptr};
  ParamOptimizer optimizer;
  Rng rng;
  int64_t iteration = 0;
};

/// Target <- exact copy of the source, zero moments, RNG seeded from cfg.seed.
AdaptState init_target(const Generator& source, const AdaptConfig& cfg);

/// Frozen pieces an adaptation step consults.
struct AdaptContext {
  const NoiseSchedule* schedule = nullptr;
  const NoisePredictor* predictor = nullptr;
  PatchTokenizer tokenizer;
  Condition condition;
  /// Testing hook: detaches the target render before any loss sees it.
  bool detach_target_render = false;
};

struct StepRecord {
  int64_t step = 0;
  double loss_dsds = 0.0;
  double loss_hsc = 0.0;
  double grad_norm = 0.0;
  int64_t t = 0;
};

std::string format_step_record(const StepRecord& record);

/// One optimizer step on the target generator. Draw order per step: latents,
/// poses, then (t, eps). Throws TrainingError with the triggering latent,
/// pose and timestep when the loss or gradient is not finite.
StepRecord adapt_step(AdaptState& state, const AdaptConfig& cfg, const AdaptContext& ctx);

std::vector<std::pair<std::string, torch::Tensor>> trainable_parameters(const Generator& generator);

/// "adapt_state" archive: source and target weights, optimizer moments, RNG
/// state, iteration, resolved config and the condition.
void save_adapt_state(const std::filesystem::path& path, const AdaptState& state, const AdaptConfig& cfg,
                      const Condition& condition);

struct LoadedAdaptState {
  AdaptState state;
  Condition condition;
  nlohmann::json config;
};

LoadedAdaptState load_adapt_state(const std::filesystem::path& path, const AdaptConfig& cfg);

struct AdaptRunResult {
  std::vector<StepRecord> records;
  std::filesystem::path final_checkpoint;
};

/// Runs adapt_step until state.iteration == cfg.iters. Writes one step log
/// line per iteration to `log` (if set) and a checkpoint every
/// cfg.checkpoint_every iterations plus a final one when `run_dir` is
/// non-empty.
AdaptRunResult run_adaptation(AdaptState& state, const AdaptConfig& cfg, const AdaptContext& ctx,
                              const std::filesystem::path& run_dir = {},
                              const std::function<void(const std::string&)>& log = {});

nlohmann::json to_json(const AdaptConfig& cfg);

}  // namespace adapt3d
