#include "adapt3d/adaptation.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "adapt3d/checkpoint.hpp"
#include "adapt3d/errors.hpp"
#include "adapt3d/scene.hpp"

namespace adapt3d {

ParamOptimizer::ParamOptimizer(OptimizerConfig cfg) : cfg_(cfg) {}

torch::Tensor& ParamOptimizer::moment(const std::string& name, const torch::Tensor& like) {
  auto it = moments_.find(name);
  if (it == moments_.end()) it = moments_.emplace(name, torch::zeros_like(like)).first;
  return it->second;
}

void ParamOptimizer::step(const std::vector<std::pair<std::string, torch::Tensor>>& params, double lr) {
  torch::NoGradGuard no_grad;
  ++updates_;
  for (const auto& [name, param] : params) {
    auto grad = param.grad().defined() ? param.grad() : torch::zeros_like(param);
    if (cfg_.kind == OptimizerKind::MomentumSgd) {
      auto& v = moment(name + "/momentum", param);
      v.mul_(cfg_.momentum).add_(grad);
      param.sub_(lr * v);
    } else {
      auto& m = moment(name + "/adam_m", param);
      auto& v = moment(name + "/adam_v", param);
      m.mul_(cfg_.beta1).add_((1.0 - cfg_.beta1) * grad);
      v.mul_(cfg_.beta2).add_((1.0 - cfg_.beta2) * grad * grad);
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(updates_));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(updates_));
      param.sub_(lr * (m / c1) / ((v / c2).sqrt() + cfg_.eps));
    }
  }
}

void AdaptConfig::validate() const {
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw ConfigError("adapt.lambda must be >= 0");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("adapt.lr must be > 0");
  if (iters < 1) throw ConfigError("adapt.iters must be >= 1");
  if (batch < 1) throw ConfigError("adapt.batch must be >= 1");
  if (!(mask_tau > 0 && mask_tau < 1)) throw ConfigError("adapt.mask_tau must lie in (0, 1)");
  if (!(hsc_temperature > 0)) throw ConfigError("adapt.hsc_temperature must be > 0");
  if (checkpoint_every < 0) throw ConfigError("adapt.checkpoint_every must be >= 0");
  if (optimizer.kind == OptimizerKind::MomentumSgd && !(optimizer.momentum >= 0 && optimizer.momentum < 1)) {
    throw ConfigError("adapt.momentum must lie in [0, 1)");
  }
  poses.validate();
}

AdaptState init_target(const Generator& source, const AdaptConfig& cfg) {
  for (const auto& p : source->parameters()) {
    if (!torch::isfinite(p).all().item<bool>()) throw ConfigError("source generator has non-finite parameters");
  }
  AdaptState state;
  state.source = clone_generator(source);
  for (auto& p : state.source->parameters()) p.set_requires_grad(false);
  state.target = clone_generator(source);
  for (auto& p : state.target->parameters()) p.set_requires_grad(true);
  state.optimizer = ParamOptimizer(cfg.optimizer);
  for (const auto& [name, p] : trainable_parameters(state.target)) {
    if (cfg.optimizer.kind == OptimizerKind::MomentumSgd) {
      state.optimizer.moments()[name + "/momentum"] = torch::zeros_like(p);
    } else {
      state.optimizer.moments()[name + "/adam_m"] = torch::zeros_like(p);
      state.optimizer.moments()[name + "/adam_v"] = torch::zeros_like(p);
    }
  }
  state.rng = Rng(cfg.seed);
  state.iteration = 0;
  return state;
}

std::vector<std::pair<std::string, torch::Tensor>> trainable_parameters(const Generator& generator) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : generator->named_parameters()) out.emplace_back(item.key(), item.value());
  return out;
}

std::string format_step_record(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "step=%lld loss_dsds=%.9g loss_hsc=%.9g grad_norm=%.9g t=%lld",
                static_cast<long long>(r.step), r.loss_dsds, r.loss_hsc, r.grad_norm, static_cast<long long>(r.t));
  return buf;
}

namespace {

std::string dump_trigger(int64_t step, const torch::Tensor& z, const std::vector<CameraPose>& poses, int64_t t) {
  std::ostringstream out;
  out.precision(9);
  out << "non-finite loss or gradient at step " << step << "; t=" << t << "; poses=[";
  for (size_t i = 0; i < poses.size(); ++i) {
    out << (i ? "," : "") << "(yaw=" << poses[i].yaw << " pitch=" << poses[i].pitch << ")";
  }
  out << "]; z=[";
  auto flat = z.to(torch::kDouble).flatten();
  for (int64_t i = 0; i < flat.numel(); ++i) out << (i ? "," : "") << flat[i].item<double>();
  out << "]";
  return out.str();
}

}  // namespace

StepRecord adapt_step(AdaptState& state, const AdaptConfig& cfg, const AdaptContext& ctx) {
  if (!ctx.schedule || !ctx.predictor) throw ConfigError("adaptation context is missing the guidance model");
  if (cfg.use_hsc && !ctx.tokenizer) throw ConfigError("adaptation context is missing the patch tokenizer");
  const auto& settings = cfg.render;
  const auto dtype = state.target->dtype();
  const int64_t step = state.iteration;

  auto z = randn(state.rng, {cfg.batch, state.target->arch().latent_dim}, dtype);
  std::vector<CameraPose> poses;
  for (int64_t b = 0; b < cfg.batch; ++b) poses.push_back(sample_camera(state.rng, cfg.poses));
  const auto draw = draw_guidance(state.rng, *ctx.schedule, {cfg.batch, 3, settings.resolution, settings.resolution},
                                  dtype);
  const auto rays = rays_for_batch(poses, settings.resolution, settings.near, settings.far, dtype);

  RenderOutput src;
  {
    torch::NoGradGuard no_grad;
    src = volume_render(state.source, state.source->synthesize_triplane(z), rays, settings.n_samples,
                        settings.background);
  }
  auto tgt = volume_render(state.target, state.target->synthesize_triplane(z), rays, settings.n_samples,
                           settings.background);
  if (ctx.detach_target_render) {
    tgt.rgb = tgt.rgb.detach();
    tgt.depth = tgt.depth.detach();
    tgt.opacity = tgt.opacity.detach();
  }

  auto mask = cfg.use_mask ? foreground_mask(tgt, cfg.mask_tau) : torch::ones_like(tgt.opacity).detach();
  std::optional<torch::Tensor> depth;
  if (cfg.use_depth) depth = normalize_depth(src.depth, settings.near, settings.far);
  auto cond = ctx.condition.embedding.to(dtype).view({1, -1}).expand({cfg.batch, -1});

  auto term = dsds_term(tgt.rgb, cond, depth, mask, *ctx.predictor, *ctx.schedule, draw, cfg.weighting);
  auto total = term.surrogate;
  StepRecord record;
  record.step = step + 1;
  record.t = draw.t;
  record.loss_dsds = term.loss;
  if (cfg.use_hsc) {
    TokenPyramid source_tokens;
    {
      torch::NoGradGuard no_grad;
      source_tokens = ctx.tokenizer(src.rgb);
    }
    auto hsc = hsc_loss(ctx.tokenizer(tgt.rgb), source_tokens, cfg.hsc_temperature);
    record.loss_hsc = hsc.item<double>();
    total = total + cfg.lambda * hsc;
  }

  const auto params = trainable_parameters(state.target);
  for (const auto& [name, p] : params) {
    if (p.grad().defined()) p.mutable_grad() = torch::Tensor();
  }
  if (total.requires_grad()) total.backward();

  double sq = 0.0;
  for (const auto& [name, p] : params) {
    if (p.grad().defined()) sq += p.grad().to(torch::kDouble).pow(2).sum().item<double>();
  }
  record.grad_norm = std::sqrt(sq);
  if (!std::isfinite(record.loss_dsds) || !std::isfinite(record.loss_hsc) || !std::isfinite(record.grad_norm)) {
    throw TrainingError(dump_trigger(record.step, z, poses, draw.t), record.step);
  }
  state.optimizer.step(params, cfg.lr);
  for (const auto& [name, p] : params) {
    if (p.grad().defined()) p.mutable_grad() = torch::Tensor();
  }
  state.iteration = step + 1;
  return record;
}

namespace {

const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::MomentumSgd ? "momentum_sgd" : "adam"; }
const char* weighting_name(Weighting w) { return w == Weighting::Uniform ? "uniform" : "one_minus_alpha_bar"; }

}  // namespace

nlohmann::json to_json(const AdaptConfig& cfg) {
  nlohmann::json j = {{"lambda", cfg.lambda},
                      {"lr", cfg.lr},
                      {"iters", cfg.iters},
                      {"seed", cfg.seed},
                      {"batch", cfg.batch},
                      {"use_depth", cfg.use_depth},
                      {"use_mask", cfg.use_mask},
                      {"use_hsc", cfg.use_hsc},
                      {"mask_tau", cfg.mask_tau},
                      {"hsc_temperature", cfg.hsc_temperature},
                      {"weighting", weighting_name(cfg.weighting)},
                      {"checkpoint_every", cfg.checkpoint_every},
                      {"optimizer", optimizer_name(cfg.optimizer.kind)},
                      {"momentum", cfg.optimizer.momentum},
                      {"beta1", cfg.optimizer.beta1},
                      {"beta2", cfg.optimizer.beta2},
                      {"adam_eps", cfg.optimizer.eps},
                      {"resolution", cfg.render.resolution},
                      {"n_samples", cfg.render.n_samples},
                      {"near", cfg.render.near},
                      {"far", cfg.render.far},
                      {"background", cfg.render.background},
                      {"yaw_min", cfg.poses.yaw_min},
                      {"yaw_max", cfg.poses.yaw_max},
                      {"pitch_min", cfg.poses.pitch_min},
                      {"pitch_max", cfg.poses.pitch_max},
                      {"radius", cfg.poses.radius},
                      {"fov", cfg.poses.fov}};
  j["guidance_scale"] = cfg.guidance_scale ? nlohmann::json(*cfg.guidance_scale) : nlohmann::json(nullptr);
  return j;
}

void save_adapt_state(const std::filesystem::path& path, const AdaptState& state, const AdaptConfig& cfg,
                      const Condition& condition) {
  Archive archive;
  archive.kind = "adapt_state";
  archive.meta["arch"] = to_json(state.target->arch());
  archive.meta["iteration"] = state.iteration;
  archive.meta["rng_state"] = save_rng(state.rng);
  archive.meta["optimizer"] = optimizer_name(state.optimizer.config().kind);
  archive.meta["optimizer_updates"] = state.optimizer.updates();
  archive.meta["config"] = to_json(cfg);
  archive.meta["condition"] = {{"modality", modality_name(condition.modality)},
                               {"provenance", condition.provenance}};
  put_module(archive, "source", *state.source);
  put_module(archive, "target", *state.target);
  for (const auto& [name, m] : state.optimizer.moments()) archive.put("optim/" + name, m);
  archive.put("condition/embedding", condition.embedding);
  write_archive(path, archive);
}

LoadedAdaptState load_adapt_state(const std::filesystem::path& path, const AdaptConfig& cfg) {
  const auto archive = read_archive(path);
  require_kind(archive, "adapt_state");
  LoadedAdaptState out;
  try {
    const auto arch = generator_arch_from_json(archive.meta.at("arch"));
    const auto stored_opt = archive.meta.at("optimizer").get<std::string>();
    if (stored_opt != optimizer_name(cfg.optimizer.kind)) {
      throw IntegrityError("checkpoint optimizer '" + stored_opt + "' differs from configured '" +
                           optimizer_name(cfg.optimizer.kind) + "'");
    }
    Generator source(arch), target(arch);
    load_module(archive, "source", *source);
    load_module(archive, "target", *target);
    for (auto& p : source->parameters()) p.set_requires_grad(false);
    out.state.source = source;
    out.state.target = target;
    out.state.optimizer = ParamOptimizer(cfg.optimizer);
    for (const auto& [name, tensor] : archive.arrays) {
      if (name.rfind("optim/", 0) == 0) out.state.optimizer.moments()[name.substr(6)] = tensor.clone();
    }
    out.state.optimizer.set_updates(archive.meta.at("optimizer_updates").get<int64_t>());
    out.state.rng = load_rng(archive.meta.at("rng_state").get<std::string>());
    out.state.iteration = archive.meta.at("iteration").get<int64_t>();
    const auto modality = archive.meta.at("condition").at("modality").get<std::string>();
    out.condition.modality = modality == modality_name(Modality::Image) ? Modality::Image : Modality::Text;
    out.condition.provenance = archive.meta.at("condition").at("provenance").get<std::string>();
    out.condition.embedding = archive.get("condition/embedding").clone();
    out.config = archive.meta.at("config");
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed adapt_state manifest: ") + e.what());
  }
  return out;
}

AdaptRunResult run_adaptation(AdaptState& state, const AdaptConfig& cfg, const AdaptContext& ctx,
                              const std::filesystem::path& run_dir,
                              const std::function<void(const std::string&)>& log) {
  cfg.validate();
  AdaptRunResult result;
  while (state.iteration < cfg.iters) {
    auto record = adapt_step(state, cfg, ctx);
    if (log) log(format_step_record(record));
    result.records.push_back(record);
    if (!run_dir.empty() && cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0 &&
        state.iteration < cfg.iters) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%06lld.ckpt", static_cast<long long>(state.iteration));
      save_adapt_state(run_dir / name, state, cfg, ctx.condition);
    }
  }
  if (!run_dir.empty()) {
    result.final_checkpoint = run_dir / "final.ckpt";
    save_adapt_state(result.final_checkpoint, state, cfg, ctx.condition);
  }
  return result;
}

}  // namespace adapt3d
