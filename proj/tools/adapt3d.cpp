// Command-line front end: pretraining, adaptation, evaluation, ablations and
// figure grids. Every command writes into its own run directory.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "CLI11.hpp"

#include "adapt3d/ablation.hpp"
#include "adapt3d/adaptation.hpp"
#include "adapt3d/checkpoint.hpp"
#include "adapt3d/config.hpp"
#include "adapt3d/errors.hpp"
#include "adapt3d/guidance_training.hpp"
#include "adapt3d/image_io.hpp"
#include "adapt3d/metrics.hpp"
#include "adapt3d/scene.hpp"
#include "adapt3d/source_training.hpp"

namespace fs = std::filesystem;
using namespace adapt3d;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out;
};

struct AdaptFlags {
  std::optional<std::string> prompt;
  std::optional<std::string> ref_image;
  std::optional<double> lambda;
  std::optional<int64_t> iters;
  bool no_depth = false;
  bool no_mask = false;
  bool no_hsc = false;
  std::string resume;
};

struct Paths {
  std::string source, guidance, oracle, target, ckpt;
};

Config resolve(const Common& common) {
  Config cfg;
  if (!common.config_file.empty()) cfg.load_file(common.config_file);
  for (const auto& kv : common.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!common.out.empty()) cfg.set("paths.out", common.out);
  return cfg;
}

void apply_paths(Config& cfg, const Paths& p) {
  if (!p.source.empty()) cfg.set("paths.source", p.source);
  if (!p.guidance.empty()) cfg.set("paths.guidance", p.guidance);
  if (!p.oracle.empty()) cfg.set("paths.oracle", p.oracle);
}

void apply_adapt_flags(Config& cfg, const AdaptFlags& f) {
  if (f.prompt && f.ref_image) throw ConfigError("--prompt and --ref-image are mutually exclusive");
  if (f.prompt) {
    cfg.set("adapt.prompt", *f.prompt);
    cfg.set("adapt.ref_image", "");
  }
  if (f.ref_image) cfg.set("adapt.ref_image", *f.ref_image);
  if (f.lambda) cfg.set("adapt.lambda", std::to_string(*f.lambda));
  if (f.iters) cfg.set("adapt.iters", std::to_string(*f.iters));
  if (f.no_depth) cfg.set("adapt.use_depth", "false");
  if (f.no_mask) cfg.set("adapt.use_mask", "false");
  if (f.no_hsc) cfg.set("adapt.use_hsc", "false");
}

/// <out>/<command>-<YYYYmmdd-HHMMSS>-<hash>, suffixed if it already exists.
fs::path make_run_dir(const Config& cfg, const std::string& command) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
  const fs::path root = cfg.get_string("paths.out");
  const auto base = command + "-" + stamp + "-" + cfg.hash().substr(0, 8);
  auto dir = root / base;
  for (int i = 1; fs::exists(dir); ++i) dir = root / (base + "-" + std::to_string(i));
  fs::create_directories(dir);
  std::ofstream(dir / "config.txt") << cfg.resolved();
  std::cout << "run_dir=" << dir.string() << std::endl;
  return dir;
}

fs::path require_path(const Config& cfg, const std::string& key) {
  const auto value = cfg.get_string(key);
  if (value.empty()) throw ConfigError(key + " is not set");
  if (!fs::exists(value)) throw IntegrityError("checkpoint file not found: " + value + " (" + key + ")");
  return value;
}

class Logger {
 public:
  Logger(const fs::path& file, bool echo) : out_(file), echo_(echo) {}
  void operator()(const std::string& line) {
    out_ << line << '\n';
    out_.flush();
    if (echo_) std::cout << line << '\n';
  }

 private:
  std::ofstream out_;
  bool echo_;
};

Generator load_source(const Config& cfg) {
  const auto arch = generator_arch(cfg);
  return load_generator(require_path(cfg, "paths.source"), &arch);
}

GuidanceBundle load_guidance_checked(const Config& cfg) {
  DiffusionArch stored;
  auto bundle = load_guidance(require_path(cfg, "paths.guidance"), &stored);
  if (stored.encoder.image_resolution != cfg.get_int("render.resolution")) {
    throw IntegrityError("guidance checkpoint was trained at resolution " +
                         std::to_string(stored.encoder.image_resolution) + ", config has " +
                         std::to_string(cfg.get_int("render.resolution")));
  }
  return bundle;
}

Condition condition_from(const Config& cfg, const GuidanceModel& model) {
  const auto registry = model.registry();
  const auto ref = cfg.get_string("adapt.ref_image");
  if (!ref.empty()) return registry.encode_image(read_png_rgb(ref, cfg.get_int("render.resolution")), ref);
  const auto prompt = cfg.get_string("adapt.prompt");
  return registry.encode_text(parse_prompt(prompt), prompt);
}

std::unique_ptr<DenoiserPredictor> make_predictor(const AdaptConfig& acfg, const GuidanceModel& model) {
  return std::make_unique<DenoiserPredictor>(model.denoiser, acfg.guidance_scale,
                                             model.registry().null_condition().embedding);
}

EvalContext eval_context(const Config& cfg, const Generator& source, GuidanceBundle& guidance,
                         const Condition& condition) {
  EvalContext ctx;
  ctx.source = source;
  ctx.oracle = load_pose_oracle(require_path(cfg, "paths.oracle"));
  ctx.tokenizer = toy_tokenizer(guidance.patch_encoder);
  ctx.guidance = &guidance.model;
  ctx.condition = condition;
  ctx.poses = camera_config(cfg);
  ctx.render = render_config(cfg);
  ctx.mask_tau = cfg.get_double("adapt.mask_tau");
  ctx.n = cfg.get_int("eval.n");
  ctx.seed = cfg.get_seed("eval.seed");
  ctx.align_draws = cfg.get_int("eval.align_draws");
  if (ctx.n < 1 || ctx.align_draws < 1) throw ConfigError("eval.n and eval.align_draws must be >= 1");
  return ctx;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw InputError("failed to write " + path.string());
}

int cmd_pretrain_generator(const Config& cfg) {
  const auto arch = generator_arch(cfg);
  const auto poses = camera_config(cfg);
  const auto render = render_config(cfg);
  const auto train = source_config(cfg);
  const auto dir = make_run_dir(cfg, "pretrain-generator");
  Logger log(dir / "train.log", false);
  auto gen = pretrain_source(arch, poses, render, train, [&](int64_t step, double loss) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "step=%lld loss=%.9g", static_cast<long long>(step + 1), loss);
    log(buf);
    if ((step + 1) % 250 == 0) std::cout << buf << std::endl;
  });
  const auto psnr = held_out_psnr(gen, poses, render, 16, train.seed + 100);
  save_generator(dir / "generator.ckpt", gen);
  std::cout << "held_out_psnr_db=" << psnr << "\ncheckpoint=" << (dir / "generator.ckpt").string() << std::endl;
  return 0;
}

int cmd_pretrain_diffusion(const Config& cfg) {
  const auto arch = diffusion_arch(cfg);
  const auto train = diffusion_config(cfg);
  TargetDomainSampler sampler(camera_config(cfg), render_config(cfg), target_bias(cfg),
                              cfg.get_int("generator.latent_dim"));
  const auto patch = patch_arch(cfg);
  const auto dir = make_run_dir(cfg, "pretrain-diffusion");
  Logger log(dir / "train.log", false);
  GuidanceBundle bundle;
  bundle.model = pretrain_denoiser(arch, sampler, train, [&](int64_t step, double loss) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "step=%lld loss=%.9g", static_cast<long long>(step + 1), loss);
    log(buf);
    if ((step + 1) % 250 == 0) std::cout << buf << std::endl;
  });
  bundle.patch_encoder = make_patch_encoder(cfg.get_seed("patch.seed"), patch);
  const auto cond = held_out_denoising_loss(bundle.model, sampler, 64, train.seed + 100, 300, 700, false);
  const auto null = held_out_denoising_loss(bundle.model, sampler, 64, train.seed + 100, 300, 700, true);
  save_guidance(dir / "guidance.ckpt", bundle, arch);
  std::cout << "held_out_loss_cond=" << cond << " held_out_loss_null=" << null
            << "\ncheckpoint=" << (dir / "guidance.ckpt").string() << std::endl;
  return 0;
}

int cmd_train_oracle(const Config& cfg) {
  auto source = load_source(cfg);
  const auto train = oracle_config(cfg);
  const auto dir = make_run_dir(cfg, "train-pose-oracle");
  Logger log(dir / "train.log", false);
  auto result = train_pose_oracle(source, camera_config(cfg), render_config(cfg), train, [&](int64_t step, double loss) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "step=%lld loss=%.9g", static_cast<long long>(step + 1), loss);
    log(buf);
  });
  save_pose_oracle(dir / "oracle.ckpt", result.oracle, result.held_out_deg);
  std::cout << "held_out_deg=" << result.held_out_deg << " gate_deg=" << train.gate_deg
            << "\ncheckpoint=" << (dir / "oracle.ckpt").string() << std::endl;
  if (!result.gate_passed) {
    throw TrainingError("pose oracle failed its gate: " + std::to_string(result.held_out_deg) + " deg > " +
                            std::to_string(train.gate_deg) + " deg",
                        train.steps);
  }
  return 0;
}

int cmd_adapt(const Config& cfg, const AdaptFlags& flags) {
  const auto acfg = adapt_config(cfg);
  auto guidance = load_guidance_checked(cfg);
  auto predictor = make_predictor(acfg, guidance.model);

  AdaptState state;
  Condition condition;
  if (!flags.resume.empty()) {
    auto loaded = load_adapt_state(flags.resume, acfg);
    const auto arch = generator_arch(cfg);
    require_same_arch(to_json(loaded.state.target->arch()), to_json(arch), "resumed generator");
    state = std::move(loaded.state);
    condition = loaded.condition;
  } else {
    state = init_target(load_source(cfg), acfg);
    condition = condition_from(cfg, guidance.model);
  }
  const auto dir = make_run_dir(cfg, "adapt");
  AdaptContext ctx;
  ctx.schedule = &guidance.model.schedule;
  ctx.predictor = predictor.get();
  ctx.tokenizer = toy_tokenizer(guidance.patch_encoder);
  ctx.condition = condition;
  Logger log(dir / "train.log", true);
  auto result = run_adaptation(state, acfg, ctx, dir, std::ref(log));
  std::cout << "checkpoint=" << result.final_checkpoint.string() << std::endl;
  return 0;
}

int cmd_eval(const Config& cfg, const Paths& paths) {
  if (paths.target.empty()) throw ConfigError("eval needs --target");
  auto source = load_source(cfg);
  auto guidance = load_guidance_checked(cfg);
  if (!fs::exists(paths.target)) throw IntegrityError("checkpoint file not found: " + paths.target);
  const auto arch = generator_arch(cfg);
  auto target = load_generator(paths.target, &arch);
  auto ctx = eval_context(cfg, source, guidance, condition_from(cfg, guidance.model));
  const auto dir = make_run_dir(cfg, "eval");
  auto report = evaluate(fs::path(paths.target).stem().string(), target, ctx);
  write_text(dir / "metrics.csv", csv_header() + "\n" + csv_row(report) + "\n");
  write_text(dir / "metrics.txt", record_line(report) + "\n");
  std::cout << record_line(report) << std::endl;
  return 0;
}

int cmd_ablate(const Config& cfg) {
  auto source = load_source(cfg);
  auto guidance = load_guidance_checked(cfg);
  const auto acfg = adapt_config(cfg);
  auto predictor = make_predictor(acfg, guidance.model);
  AblationSetup setup;
  setup.base = acfg;
  setup.predictor = predictor.get();
  setup.eval = eval_context(cfg, source, guidance, condition_from(cfg, guidance.model));
  const auto dir = make_run_dir(cfg, "ablate");
  Logger log(dir / "train.log", false);
  std::ofstream partial(dir / "records.txt");
  auto table = ablation_suite(
      setup,
      [&](const MetricReport& r) {
        partial << record_line(r) << std::endl;
        std::cout << record_line(r) << std::endl;
      },
      std::ref(log));
  partial << record_line(table.baseline) << '\n' << record_line(table.no_mask) << std::endl;
  write_text(dir / "ablation.csv", ablation_csv(table));
  write_text(dir / "verdicts.txt", verdict_summary(table));
  std::cout << "baseline " << record_line(table.baseline) << '\n'
            << "no_mask " << record_line(table.no_mask) << '\n'
            << verdict_summary(table) << "csv=" << (dir / "ablation.csv").string() << std::endl;
  return 0;
}

int cmd_render_grid(const Config& cfg, const Paths& paths, int64_t seeds, const std::string& yaws_text, double pitch) {
  if (paths.ckpt.empty()) throw ConfigError("render-grid needs --ckpt");
  if (seeds < 1) throw ConfigError("--seeds must be >= 1");
  if (!fs::exists(paths.ckpt)) throw IntegrityError("checkpoint file not found: " + paths.ckpt);
  const auto yaws = parse_number_list(yaws_text);
  const auto render = render_config(cfg);
  const auto poses = camera_config(cfg);
  auto gen = load_generator(paths.ckpt);
  const auto dir = make_run_dir(cfg, "render-grid");
  std::vector<std::vector<torch::Tensor>> rgb, depth, mask;
  torch::NoGradGuard no_grad;
  for (int64_t s = 0; s < seeds; ++s) {
    Rng rng(static_cast<uint64_t>(s));
    auto z = randn(rng, {1, gen->arch().latent_dim});
    std::vector<CameraPose> views;
    for (double yaw : yaws) views.push_back(CameraPose{yaw, pitch, poses.radius, poses.fov});
    auto out = generate(gen, z.expand({static_cast<int64_t>(views.size()), -1}), views, render);
    auto m = foreground_mask(out, cfg.get_double("adapt.mask_tau"));
    auto d = normalize_depth(out.depth, render.near, render.far) * m;
    std::vector<torch::Tensor> r1, r2, r3;
    for (size_t v = 0; v < views.size(); ++v) {
      r1.push_back(out.rgb[v]);
      r2.push_back(d[v]);
      r3.push_back(m[v]);
    }
    rgb.push_back(r1);
    depth.push_back(r2);
    mask.push_back(r3);
  }
  write_png_rgb(dir / "grid.png", tile_grid(rgb));
  write_png_gray16(dir / "depth_grid.png", tile_grid(depth));
  write_png_gray8(dir / "mask_grid.png", tile_grid(mask));
  std::cout << "grid=" << (dir / "grid.png").string() << " rows=" << seeds << " cols=" << yaws.size() << std::endl;
  return 0;
}

int cmd_render_reference(const Config& cfg, const std::string& style_name, int64_t seed) {
  const int style = parse_style_token(style_name);
  TargetDomainSampler sampler(camera_config(cfg), render_config(cfg), target_bias(cfg),
                              cfg.get_int("generator.latent_dim"));
  Rng rng(static_cast<uint64_t>(seed));
  auto image = sampler.reference_image(rng, style);
  const auto dir = make_run_dir(cfg, "render-reference");
  write_png_rgb(dir / "reference.png", image);
  std::cout << "reference=" << (dir / "reference.png").string() << std::endl;
  return 0;
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

int report_error(const char* kind, int code, const std::string& message) {
  std::cerr << "error kind=" << kind << " exit=" << code << " message=\"" << one_line(message) << "\"" << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  CLI::App app{"Toy 3D generative domain adaptation"};
  app.require_subcommand(1);

  Common common;
  Paths paths;
  AdaptFlags flags;
  int64_t seeds = 4;
  std::string yaws = "-0.5,0,0.5";
  double pitch = 0.0;
  std::string style = "style_07";
  int64_t ref_seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_file, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", common.sets, "override one config key (key=value), repeatable");
    sub->add_option("--out", common.out, "root directory for run directories");
  };
  auto add_artifacts = [&](CLI::App* sub, bool oracle) {
    sub->add_option("--source", paths.source, "source generator checkpoint");
    sub->add_option("--guidance", paths.guidance, "guidance checkpoint");
    if (oracle) sub->add_option("--oracle", paths.oracle, "pose oracle checkpoint");
  };
  auto add_condition = [&](CLI::App* sub) {
    sub->add_option("--prompt", flags.prompt, "target style tokens, e.g. style_07");
    sub->add_option("--ref-image", flags.ref_image, "reference PNG at the render resolution");
  };

  auto* pretrain_diffusion = app.add_subcommand("pretrain-diffusion", "train the toy denoiser and encoders");
  add_common(pretrain_diffusion);
  auto* pretrain_generator = app.add_subcommand("pretrain-generator", "fit the source generator");
  add_common(pretrain_generator);
  auto* train_oracle = app.add_subcommand("train-pose-oracle", "train and gate the pose oracle");
  add_common(train_oracle);
  train_oracle->add_option("--source", paths.source, "source generator checkpoint");

  auto* adapt = app.add_subcommand("adapt", "adapt a copy of the source generator");
  add_common(adapt);
  add_artifacts(adapt, false);
  add_condition(adapt);
  adapt->add_option("--lambda", flags.lambda, "consistency loss weight")->check(CLI::NonNegativeNumber);
  adapt->add_option("--iters", flags.iters, "iterations")->check(CLI::PositiveNumber);
  adapt->add_flag("--no-depth", flags.no_depth, "disable depth conditioning");
  adapt->add_flag("--no-mask", flags.no_mask, "disable the foreground mask");
  adapt->add_flag("--no-hsc", flags.no_hsc, "disable the consistency loss");
  adapt->add_option("--resume", flags.resume, "continue from an adapt checkpoint")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "evaluate a target checkpoint against the source");
  add_common(eval);
  add_artifacts(eval, true);
  add_condition(eval);
  eval->add_option("--target", paths.target, "target generator or adapt checkpoint");

  auto* ablate = app.add_subcommand("ablate", "run the ablation table and lambda sweep");
  add_common(ablate);
  add_artifacts(ablate, true);
  add_condition(ablate);
  ablate->add_option("--lambda", flags.lambda, "lambda of the full-method row")->check(CLI::NonNegativeNumber);
  ablate->add_option("--iters", flags.iters, "iterations per row")->check(CLI::PositiveNumber);

  auto* grid = app.add_subcommand("render-grid", "multi-view image, depth and mask grids");
  add_common(grid);
  grid->add_option("--ckpt", paths.ckpt, "generator or adapt checkpoint");
  grid->add_option("--seeds", seeds, "number of latent seeds (rows)");
  grid->add_option("--yaws", yaws, "comma-separated yaw angles in radians (columns)");
  grid->add_option("--pitch", pitch, "shared pitch in radians");

  auto* reference = app.add_subcommand("render-reference", "frontal target-style reference image");
  add_common(reference);
  reference->add_option("--style", style, "style token, e.g. style_07");
  reference->add_option("--seed", ref_seed, "latent seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("config", 2, e.what());
  }

  try {
    auto cfg = resolve(common);
    apply_paths(cfg, paths);
    if (*pretrain_diffusion) return cmd_pretrain_diffusion(cfg);
    if (*pretrain_generator) return cmd_pretrain_generator(cfg);
    if (*train_oracle) return cmd_train_oracle(cfg);
    if (*adapt) {
      apply_adapt_flags(cfg, flags);
      return cmd_adapt(cfg, flags);
    }
    if (*eval) {
      apply_adapt_flags(cfg, flags);
      return cmd_eval(cfg, paths);
    }
    if (*ablate) {
      apply_adapt_flags(cfg, flags);
      return cmd_ablate(cfg);
    }
    if (*grid) return cmd_render_grid(cfg, paths, seeds, yaws, pitch);
    if (*reference) return cmd_render_reference(cfg, style, ref_seed);
  } catch (const Error& e) {
    return report_error(e.kind(), e.exit_code(), e.what());
  } catch (const c10::Error& e) {
    return report_error("internal", 1, e.what_without_backtrace());
  } catch (const std::exception& e) {
    return report_error("internal", 1, e.what());
  }
  return 0;
}
