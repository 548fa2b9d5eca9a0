#include "adapt3d/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "adapt3d/checkpoint.hpp"
#include "adapt3d/errors.hpp"
#include "adapt3d/rng.hpp"
#include "adapt3d/scene.hpp"

namespace adapt3d {
namespace {

constexpr int64_t kChunk = 16;

double degrees(double rad) { return rad * 180.0 / std::numbers::pi; }

// Luminance with 5x5 local contrast normalization, copied to three channels.
// Raw colors would make a restyled head look less similar to its source than
// a different head does.
torch::Tensor structure_view(const torch::Tensor& images) {
  namespace F = torch::nn::functional;
  const auto x = images.to(torch::kFloat);
  const auto g = (0.299 * x.select(1, 0) + 0.587 * x.select(1, 1) + 0.114 * x.select(1, 2)).unsqueeze(1);
  const auto pool = F::AvgPool2dFuncOptions(5).stride(1).padding(2).count_include_pad(false);
  const auto centered = g - F::avg_pool2d(g, pool);
  const auto spread = F::avg_pool2d(centered.pow(2), pool).sqrt();
  return (centered / (spread + 0.05)).expand({-1, 3, -1, -1}).contiguous();
}

}  // namespace

PoseOracleImpl::PoseOracleImpl(PoseOracleArch arch) : arch_(arch) {
  if (arch_.resolution < 16 || arch_.resolution % 16 != 0) throw ConfigError("pose oracle resolution must be a multiple of 16");
  const auto w = arch_.width;
  features_ = register_module("features", torch::nn::Sequential());
  for (auto [in, out] : {std::pair<int64_t, int64_t>{3, w}, {w, 2 * w}, {2 * w, 4 * w}, {4 * w, 4 * w}}) {
    features_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1)));
    features_->push_back(torch::nn::SiLU());
  }
  const auto side = arch_.resolution / 16;
  hidden_ = register_module("hidden", torch::nn::Linear(4 * w * side * side, 128));
  head_ = register_module("head", torch::nn::Linear(128, 2));
}

torch::Tensor PoseOracleImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(2) != arch_.resolution || images.size(3) != arch_.resolution) {
    throw ShapeError("pose oracle expects [B, 3, " + std::to_string(arch_.resolution) + ", " +
                     std::to_string(arch_.resolution) + "], got " + c10::str(images.sizes()));
  }
  auto h = features_->forward(images * 2.0 - 1.0).flatten(1);
  return head_->forward(torch::silu(hidden_->forward(h)));
}

namespace {

torch::Tensor pose_labels(const std::vector<CameraPose>& poses) {
  auto out = torch::empty({static_cast<int64_t>(poses.size()), 2});
  for (size_t i = 0; i < poses.size(); ++i) {
    out[i][0] = poses[i].yaw;
    out[i][1] = poses[i].pitch;
  }
  return out;
}

// Per-image channel gains, offsets and an occasional channel permutation.
torch::Tensor photometric_jitter(const torch::Tensor& images, Rng& rng) {
  const auto batch = images.size(0);
  auto gain = torch::empty({batch, 3, 1, 1});
  auto offset = torch::empty({batch, 3, 1, 1});
  std::vector<torch::Tensor> rows;
  for (int64_t b = 0; b < batch; ++b) {
    for (int c = 0; c < 3; ++c) {
      gain[b][c] = uniform(rng, 0.6, 1.4);
      offset[b][c] = uniform(rng, -0.15, 0.15);
    }
    auto img = images[b];
    if (uniform(rng, 0.0, 1.0) < 0.5) {
      std::array<int64_t, 3> perm{0, 1, 2};
      for (int i = 2; i > 0; --i) std::swap(perm[i], perm[uniform_int(rng, 0, i)]);
      img = img.index_select(0, torch::tensor({perm[0], perm[1], perm[2]}, torch::kLong));
    }
    rows.push_back(img);
  }
  return (torch::stack(rows) * gain + offset).clamp(0.0, 1.0);
}

}  // namespace

PoseOracleResult train_pose_oracle(const Generator& source, const PoseDistribution& poses,
                                   const RenderSettings& settings, const PoseOracleTrainConfig& cfg,
                                   const std::function<void(int64_t, double)>& on_step) {
  if (cfg.dataset < 1 || cfg.batch < 1 || !(cfg.lr > 0)) throw ConfigError("invalid pose oracle training config");
  torch::manual_seed(cfg.seed);
  Rng rng(cfg.seed);
  const auto latent_dim = source->arch().latent_dim;

  // Half generator renders, half procedural heads in a random style (or none).
  std::vector<torch::Tensor> images;
  std::vector<CameraPose> labels;
  {
    torch::NoGradGuard no_grad;
    const int64_t from_generator = cfg.dataset / 2;
    for (int64_t start = 0; start < from_generator; start += kChunk) {
      const auto count = std::min(kChunk, from_generator - start);
      auto z = randn(rng, {count, latent_dim});
      std::vector<CameraPose> chunk;
      for (int64_t i = 0; i < count; ++i) chunk.push_back(sample_camera(rng, poses));
      auto render = generate(source, z, chunk, settings);
      for (int64_t i = 0; i < count; ++i) images.push_back(render.rgb[i]);
      labels.insert(labels.end(), chunk.begin(), chunk.end());
    }
    for (int64_t i = from_generator; i < cfg.dataset; ++i) {
      auto z = randn(rng, {latent_dim});
      const auto pose = sample_camera(rng, poses);
      const auto style = uniform_int(rng, -1, kStyleCount - 1);
      auto shot = render_scene(scene_from_latent(z), pose, settings,
                               style < 0 ? std::nullopt : std::optional<int>(static_cast<int>(style)));
      images.push_back(shot.rgb);
      labels.push_back(pose);
    }
  }
  auto data = torch::stack(images);
  auto targets = pose_labels(labels);

  PoseOracle oracle(PoseOracleArch{settings.resolution, 16});
  torch::optim::Adam optimizer(oracle->parameters(), torch::optim::AdamOptions(cfg.lr));
  for (int64_t step = 0; step < cfg.steps; ++step) {
    const double lr = step < 2 * cfg.steps / 3 ? cfg.lr : cfg.lr * 0.1;
    for (auto& group : optimizer.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    std::vector<int64_t> idx;
    for (int64_t b = 0; b < cfg.batch; ++b) idx.push_back(uniform_int(rng, 0, cfg.dataset - 1));
    auto index = torch::tensor(idx, torch::kLong);
    auto batch = photometric_jitter(data.index_select(0, index), rng);
    auto loss = torch::mse_loss(oracle->forward(batch), targets.index_select(0, index));
    const double value = loss.item<double>();
    if (!std::isfinite(value)) throw TrainingError("pose oracle training diverged at step " + std::to_string(step), step);
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
    if (on_step) on_step(step, value);
  }
  for (auto& p : oracle->parameters()) p.set_requires_grad(false);

  PoseOracleResult result;
  result.oracle = oracle;
  result.held_out_deg = pose_error(source, oracle, poses, settings, cfg.gate_samples, cfg.seed + 1000);
  result.gate_passed = result.held_out_deg <= cfg.gate_deg;
  return result;
}

void save_pose_oracle(const std::filesystem::path& path, const PoseOracle& oracle, double held_out_deg) {
  Archive archive;
  archive.kind = "pose_oracle";
  archive.meta["arch"] = {{"resolution", oracle->arch().resolution}, {"width", oracle->arch().width}};
  archive.meta["held_out_deg"] = held_out_deg;
  put_module(archive, "oracle", *oracle);
  write_archive(path, archive);
}

PoseOracle load_pose_oracle(const std::filesystem::path& path, double* held_out_deg) {
  const auto archive = read_archive(path);
  require_kind(archive, "pose_oracle");
  PoseOracleArch arch;
  try {
    arch.resolution = archive.meta.at("arch").at("resolution").get<int64_t>();
    arch.width = archive.meta.at("arch").at("width").get<int64_t>();
    if (held_out_deg) *held_out_deg = archive.meta.at("held_out_deg").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed pose oracle manifest: ") + e.what());
  }
  PoseOracle oracle(arch);
  load_module(archive, "oracle", *oracle);
  for (auto& p : oracle->parameters()) p.set_requires_grad(false);
  return oracle;
}

EvalSamples eval_samples(int64_t latent_dim, const PoseDistribution& poses, int64_t n, uint64_t seed) {
  if (n < 1) throw ConfigError("evaluation needs n >= 1");
  Rng rng(seed);
  EvalSamples samples;
  samples.z = randn(rng, {n, latent_dim});
  for (int64_t i = 0; i < n; ++i) samples.poses.push_back(sample_camera(rng, poses));
  return samples;
}

RenderOutput render_samples(const Generator& generator, const EvalSamples& samples, const RenderSettings& settings) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> rgb, depth, opacity;
  const auto n = samples.z.size(0);
  for (int64_t start = 0; start < n; start += kChunk) {
    const auto count = std::min(kChunk, n - start);
    std::vector<CameraPose> chunk(samples.poses.begin() + start, samples.poses.begin() + start + count);
    auto out = generate(generator, samples.z.slice(0, start, start + count).to(generator->dtype()), chunk, settings);
    rgb.push_back(out.rgb);
    depth.push_back(out.depth);
    opacity.push_back(out.opacity);
  }
  return {torch::cat(rgb), torch::cat(depth), torch::cat(opacity)};
}

double pose_error_of_images(const torch::Tensor& images, const std::vector<CameraPose>& poses, PoseOracle& oracle) {
  torch::NoGradGuard no_grad;
  if (images.size(0) != static_cast<int64_t>(poses.size())) throw ShapeError("one pose per image expected");
  auto pred = oracle->forward(images.to(torch::kFloat)).to(torch::kDouble);
  double total = 0.0;
  for (size_t i = 0; i < poses.size(); ++i) {
    CameraPose guess = poses[i];
    guess.yaw = pred[i][0].item<double>();
    guess.pitch = pred[i][1].item<double>();
    total += degrees(pose_angle(guess, poses[i]));
  }
  return total / static_cast<double>(poses.size());
}

double pose_error(const Generator& generator, PoseOracle& oracle, const PoseDistribution& poses,
                  const RenderSettings& settings, int64_t n, uint64_t seed) {
  const auto samples = eval_samples(generator->arch().latent_dim, poses, n, seed);
  return pose_error_of_images(render_samples(generator, samples, settings).rgb, samples.poses, oracle);
}

double scs_of_images(const torch::Tensor& a, const torch::Tensor& b, const PatchTokenizer& tokenizer) {
  torch::NoGradGuard no_grad;
  if (a.sizes() != b.sizes()) throw ShapeError("scs compares renders of equal shape");
  const auto pa = tokenizer(structure_view(a));
  const auto pb = tokenizer(structure_view(b));
  if (pa.layers.size() != pb.layers.size() || pa.layers.empty()) throw ShapeError("token pyramids differ");
  double total = 0.0;
  int64_t terms = 0;
  for (size_t l = 0; l < pa.layers.size(); ++l) {
    auto ta = pa.layers[l].to(torch::kDouble);
    auto tb = pb.layers[l].to(torch::kDouble);
    const auto n = ta.size(1);
    if (n < 2) continue;
    auto off = torch::ones({n, n}, torch::kBool).logical_xor(torch::eye(n, torch::kBool));
    auto sa = torch::matmul(ta, ta.transpose(1, 2)).index({torch::indexing::Slice(), off});
    auto sb = torch::matmul(tb, tb.transpose(1, 2)).index({torch::indexing::Slice(), off});
    sa = sa - sa.mean(1, true);
    sb = sb - sb.mean(1, true);
    auto va = sa.pow(2).sum(1);
    auto vb = sb.pow(2).sum(1);
    for (int64_t i = 0; i < ta.size(0); ++i) {
      const double x = va[i].item<double>();
      const double y = vb[i].item<double>();
      double r;
      if (x < 1e-24 && y < 1e-24) {
        r = 1.0;  // both structureless
      } else if (x < 1e-24 || y < 1e-24) {
        r = 0.0;
      } else {
        r = (sa[i] * sb[i]).sum().item<double>() / std::sqrt(x * y);
      }
      total += std::clamp(r, -1.0, 1.0);
      ++terms;
    }
  }
  if (terms == 0) throw ShapeError("scs needs at least two tokens per layer");
  return total / static_cast<double>(terms);
}

double scs(const Generator& source, const Generator& target, const PatchTokenizer& tokenizer,
           const PoseDistribution& poses, const RenderSettings& settings, int64_t n, uint64_t seed) {
  require_same_arch(to_json(target->arch()), to_json(source->arch()), "scs generator");
  const auto samples = eval_samples(source->arch().latent_dim, poses, n, seed);
  return scs_of_images(render_samples(source, samples, settings).rgb, render_samples(target, samples, settings).rgb,
                       tokenizer);
}

std::optional<double> background_preservation_of(const RenderOutput& source, const RenderOutput& target,
                                                 double mask_tau) {
  auto background = (target.opacity <= mask_tau).to(torch::kDouble);  // [B, 1, H, W]
  const double count = background.sum().item<double>();
  if (count == 0.0) return std::nullopt;
  auto diff = (source.rgb.to(torch::kDouble) - target.rgb.to(torch::kDouble)).pow(2);
  return (diff * background).sum().item<double>() / (3.0 * count);
}

std::optional<double> background_preservation(const Generator& source, const Generator& target,
                                              const PoseDistribution& poses, const RenderSettings& settings,
                                              double mask_tau, int64_t n, uint64_t seed) {
  const auto samples = eval_samples(source->arch().latent_dim, poses, n, seed);
  return background_preservation_of(render_samples(source, samples, settings), render_samples(target, samples, settings),
                                    mask_tau);
}

double align_proxy_of_images(const torch::Tensor& images, const Condition& condition, GuidanceModel& guidance,
                             uint64_t seed, int64_t draws) {
  torch::NoGradGuard no_grad;
  if (draws < 1) throw ConfigError("align_proxy needs at least one draw");
  const auto& sched = guidance.schedule;
  const auto t_lo = static_cast<int64_t>(std::ceil(0.3 * sched.steps));
  const auto t_hi = static_cast<int64_t>(std::floor(0.7 * sched.steps));
  const auto null = guidance.registry().null_condition().embedding.view({1, -1});
  const auto cond = condition.embedding.to(torch::kFloat).view({1, -1});
  Rng rng(seed);
  double total = 0.0;
  const auto n = images.size(0);
  for (int64_t start = 0; start < n; start += kChunk) {
    const auto count = std::min(kChunk, n - start);
    auto x = images.slice(0, start, start + count).to(torch::kFloat).repeat({draws, 1, 1, 1});
    const auto rows = x.size(0);
    auto t = torch::empty({rows}, torch::kLong);
    auto ab = torch::empty({rows, 1, 1, 1});
    for (int64_t r = 0; r < rows; ++r) {
      const auto tr = uniform_int(rng, t_lo, t_hi);
      t[r] = tr;
      ab[r] = sched.alpha_bar(tr);
    }
    auto eps = randn(rng, x.sizes());
    auto noisy = ab.sqrt() * x + (1.0 - ab).sqrt() * eps;
    auto depth = torch::full({rows, 1, x.size(2), x.size(3)}, kNeutralDepth);
    auto loss_null = (guidance.denoiser->forward(noisy, t, depth, null.expand({rows, -1})) - eps).pow(2).mean({1, 2, 3});
    auto loss_cond = (guidance.denoiser->forward(noisy, t, depth, cond.expand({rows, -1})) - eps).pow(2).mean({1, 2, 3});
    total += (loss_null - loss_cond).to(torch::kDouble).sum().item<double>();
  }
  return total / static_cast<double>(n * draws);
}

double align_proxy(const Generator& generator, const Condition& condition, GuidanceModel& guidance,
                   const PoseDistribution& poses, const RenderSettings& settings, int64_t n, uint64_t seed,
                   int64_t draws) {
  const auto samples = eval_samples(generator->arch().latent_dim, poses, n, seed);
  return align_proxy_of_images(render_samples(generator, samples, settings).rgb, condition, guidance, seed, draws);
}

MetricReport evaluate(const std::string& name, const Generator& target, const EvalContext& ctx) {
  if (!ctx.guidance) throw ConfigError("evaluation needs the guidance model");
  require_same_arch(to_json(target->arch()), to_json(ctx.source->arch()), "evaluated generator");
  const auto samples = eval_samples(ctx.source->arch().latent_dim, ctx.poses, ctx.n, ctx.seed);
  const auto src = render_samples(ctx.source, samples, ctx.render);
  const auto tgt = render_samples(target, samples, ctx.render);
  MetricReport report;
  report.config = name;
  report.n = ctx.n;
  report.seed = ctx.seed;
  auto oracle = ctx.oracle;
  report.pose_deg = pose_error_of_images(tgt.rgb, samples.poses, oracle);
  report.scs = scs_of_images(src.rgb, tgt.rgb, ctx.tokenizer);
  report.bg_mse = background_preservation_of(src, tgt, ctx.mask_tau);
  report.align_proxy = align_proxy_of_images(tgt.rgb, ctx.condition, *ctx.guidance, ctx.seed, ctx.align_draws);
  for (const auto& [key, scorer] : ctx.scorers) report.extras[key] = scorer(tgt.rgb, ctx.condition);
  return report;
}

std::string csv_header() { return "config,pose_deg,scs,bg_mse,align_proxy,n,seed"; }

std::string csv_row(const MetricReport& r) {
  char buf[256];
  const std::string bg = r.bg_mse ? [&] {
    char b[32];
    std::snprintf(b, sizeof(b), "%.8f", *r.bg_mse);
    return std::string(b);
  }() : std::string("ABSENT");
  std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%s,%.8f,%lld,%llu", r.config.c_str(), r.pose_deg, r.scs, bg.c_str(),
                r.align_proxy, static_cast<long long>(r.n), static_cast<unsigned long long>(r.seed));
  return buf;
}

std::string record_line(const MetricReport& r) {
  char buf[320];
  char bg[32] = "ABSENT";
  if (r.bg_mse) std::snprintf(bg, sizeof(bg), "%.9g", *r.bg_mse);
  std::snprintf(buf, sizeof(buf), "config=%s pose_deg=%.9g scs=%.9g bg_mse=%s align_proxy=%.9g n=%lld seed=%llu",
                r.config.c_str(), r.pose_deg, r.scs, bg,
                r.align_proxy, static_cast<long long>(r.n), static_cast<unsigned long long>(r.seed));
  std::string line = buf;
  for (const auto& [key, value] : r.extras) {
    std::snprintf(buf, sizeof(buf), " %s=%.9g", key.c_str(), value);
    line += buf;
  }
  return line;
}

}  // namespace adapt3d
