#include "adapt3d/guidance.hpp"

#include <cmath>
#include <numbers>

#include "adapt3d/errors.hpp"

namespace adapt3d {

NoiseSchedule make_schedule(int64_t steps, double beta_start, double beta_end) {
  if (steps < 10) throw ConfigError("noise schedule needs at least 10 steps");
  if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1)) {
    throw ConfigError("noise schedule requires 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule sched;
  sched.steps = steps;
  double prod = 1.0;
  for (int64_t i = 0; i < steps; ++i) {
    const double beta = beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(steps - 1);
    prod *= 1.0 - beta;
    sched.betas.push_back(beta);
    sched.alphas_bar.push_back(prod);
  }
  return sched;
}

NoisyImage q_sample(const torch::Tensor& x, int64_t t, const torch::Tensor& eps, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps) throw ConfigError("timestep out of range: " + std::to_string(t));
  if (x.sizes() != eps.sizes()) {
    throw ShapeError("noise shape " + c10::str(eps.sizes()) + " does not match image " + c10::str(x.sizes()));
  }
  const double ab = sched.alpha_bar(t);
  return {std::sqrt(ab) * x + std::sqrt(1.0 - ab) * eps, t, eps};
}

torch::Tensor recover_clean(const NoisyImage& zt, const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar(zt.t);
  return (zt.values - std::sqrt(1.0 - ab) * zt.eps) / std::sqrt(ab);
}

FilmBlockImpl::FilmBlockImpl(int64_t width, int64_t embed_dim) {
  conv1_ = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, width, 3).padding(1)));
  conv2_ = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, width, 3).padding(1)));
  norm_ = register_module("norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(8, width)));
  film_ = register_module("film", torch::nn::Linear(embed_dim, 2 * width));
}

torch::Tensor FilmBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& embedding) {
  auto h = norm_->forward(conv1_->forward(x));
  auto film = film_->forward(embedding).unsqueeze(-1).unsqueeze(-1).chunk(2, 1);
  h = torch::silu(h * (1.0 + film[0]) + film[1]);
  return x + conv2_->forward(h);
}

DenoiserImpl::DenoiserImpl(DenoiserArch arch, int64_t schedule_steps) : arch_(arch), schedule_steps_(schedule_steps) {
  const auto w = arch_.width;
  const auto e = arch_.embed_dim;
  auto conv3 = [](int64_t in, int64_t out, int64_t stride = 1) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
  };
  in_conv_ = register_module("in_conv", conv3(4, w));
  for (int64_t level = 0; level < arch_.levels; ++level) {
    down_blocks_->push_back(FilmBlock(w, e));
    if (level + 1 < arch_.levels) downsamples_->push_back(conv3(w, w, 2));
  }
  for (int64_t level = 0; level + 1 < arch_.levels; ++level) {
    merges_->push_back(conv3(2 * w, w));
    up_blocks_->push_back(FilmBlock(w, e));
  }
  register_module("down_blocks", down_blocks_);
  register_module("downsamples", downsamples_);
  register_module("merges", merges_);
  register_module("up_blocks", up_blocks_);
  out_conv_ = register_module("out_conv", conv3(w, 3));
  time_fc1_ = register_module("time_fc1", torch::nn::Linear(e, e));
  time_fc2_ = register_module("time_fc2", torch::nn::Linear(e, e));
  cond_fc_ = register_module("cond_fc", torch::nn::Linear(arch_.cond_dim, e));
}

torch::Tensor DenoiserImpl::time_embedding(const torch::Tensor& t) const {
  const auto half = arch_.embed_dim / 2;
  auto options = torch::TensorOptions().dtype(in_conv_->weight.scalar_type());
  auto freqs = torch::exp(torch::arange(half, options) * (-std::log(10000.0) / static_cast<double>(half)));
  // Scale t to a 0..1000 range so the embedding does not depend on T.
  auto scaled = t.to(options.dtype()) * (1000.0 / static_cast<double>(schedule_steps_));
  auto args = scaled.unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

torch::Tensor DenoiserImpl::forward(const torch::Tensor& noisy, const torch::Tensor& t, const torch::Tensor& depth,
                                    const torch::Tensor& cond) {
  const auto scale = int64_t{1} << (arch_.levels - 1);
  if (noisy.size(2) % scale != 0 || noisy.size(3) % scale != 0) {
    throw ShapeError("denoiser input must be divisible by " + std::to_string(scale));
  }
  if (depth.size(0) != noisy.size(0) || depth.size(1) != 1 || depth.size(2) != noisy.size(2) ||
      depth.size(3) != noisy.size(3)) {
    throw ShapeError("depth map " + c10::str(depth.sizes()) + " does not match image " + c10::str(noisy.sizes()));
  }
  if (cond.dim() != 2 || cond.size(1) != arch_.cond_dim) {
    throw ShapeError("condition must be [B, " + std::to_string(arch_.cond_dim) + "]");
  }
  auto emb = time_fc2_->forward(torch::silu(time_fc1_->forward(time_embedding(t))));
  emb = torch::silu(emb + cond_fc_->forward(cond));

  auto h = in_conv_->forward(torch::cat({noisy, depth}, 1));
  std::vector<torch::Tensor> skips;
  for (int64_t level = 0; level < arch_.levels; ++level) {
    h = down_blocks_[level]->as<FilmBlock>()->forward(h, emb);
    if (level + 1 < arch_.levels) {
      skips.push_back(h);
      h = downsamples_[level]->as<torch::nn::Conv2d>()->forward(h);
    }
  }
  for (int64_t i = 0; i + 1 < arch_.levels; ++i) {
    h = torch::nn::functional::interpolate(h, torch::nn::functional::InterpolateFuncOptions()
                                                  .scale_factor(std::vector<double>{2.0, 2.0})
                                                  .mode(torch::kNearest));
    h = merges_[i]->as<torch::nn::Conv2d>()->forward(torch::cat({h, skips.back()}, 1));
    skips.pop_back();
    h = up_blocks_[i]->as<FilmBlock>()->forward(h, emb);
  }
  return out_conv_->forward(torch::silu(h));
}

torch::Tensor denoise(Denoiser& denoiser, const NoisyImage& zt, const torch::Tensor& cond,
                      const std::optional<torch::Tensor>& depth) {
  auto values = zt.values.dim() == 3 ? zt.values.unsqueeze(0) : zt.values;
  const auto batch = values.size(0);
  auto d = depth ? *depth : torch::full({batch, 1, values.size(2), values.size(3)}, kNeutralDepth, values.options());
  if (d.dim() == 3) d = d.unsqueeze(0);
  auto c = cond.dim() == 1 ? cond.unsqueeze(0).expand({batch, cond.size(0)}) : cond;
  auto t = torch::full({batch}, zt.t, torch::kLong);
  auto out = denoiser->forward(values, t, d.to(values.scalar_type()), c.to(values.scalar_type()));
  return zt.values.dim() == 3 ? out[0] : out;
}

DenoiserPredictor::DenoiserPredictor(Denoiser denoiser, std::optional<double> guidance_scale,
                                     torch::Tensor null_embedding)
    : denoiser_(std::move(denoiser)), guidance_scale_(guidance_scale), null_embedding_(std::move(null_embedding)) {
  if (guidance_scale_ && !null_embedding_.defined()) {
    throw ConfigError("classifier-free guidance needs the null embedding");
  }
}

torch::Tensor DenoiserPredictor::predict(const NoisyImage& zt, const torch::Tensor& cond,
                                         const std::optional<torch::Tensor>& depth) const {
  torch::NoGradGuard no_grad;
  auto denoiser = denoiser_;
  auto conditional = denoise(denoiser, zt, cond, depth);
  if (!guidance_scale_) return conditional;
  auto unconditional = denoise(denoiser, zt, null_embedding_, depth);
  return unconditional + *guidance_scale_ * (conditional - unconditional);
}

double timestep_weight(Weighting mode, const NoiseSchedule& sched, int64_t t) {
  return mode == Weighting::Uniform ? 1.0 : 1.0 - sched.alpha_bar(t);
}

std::pair<int64_t, int64_t> distillation_range(const NoiseSchedule& sched) {
  const auto steps = static_cast<double>(sched.steps);
  return {static_cast<int64_t>(std::ceil(0.02 * steps)), static_cast<int64_t>(std::floor(0.98 * steps))};
}

GuidanceDraw draw_guidance(Rng& rng, const NoiseSchedule& sched, at::IntArrayRef shape, torch::Dtype dtype) {
  const auto [lo, hi] = distillation_range(sched);
  GuidanceDraw draw;
  draw.t = uniform_int(rng, lo, hi);
  draw.eps = randn(rng, shape, dtype);
  return draw;
}

ScoreTerm sds_term(const torch::Tensor& x, const torch::Tensor& cond, const NoisePredictor& predictor,
                   const NoiseSchedule& sched, const GuidanceDraw& draw, Weighting weighting) {
  const auto zt = q_sample(x.detach(), draw.t, draw.eps.to(x.scalar_type()), sched);
  auto eps_hat = predictor.predict(zt, cond, std::nullopt);
  auto residual = (timestep_weight(weighting, sched, draw.t) * (eps_hat - zt.eps)).detach();
  return {(residual * x).sum(), residual, residual.square().mean().item<double>()};
}

ScoreTerm dsds_term(const torch::Tensor& x, const torch::Tensor& cond, const std::optional<torch::Tensor>& depth,
                    const torch::Tensor& mask, const NoisePredictor& predictor, const NoiseSchedule& sched,
                    const GuidanceDraw& draw, Weighting weighting) {
  const auto h = x.size(-2), w = x.size(-1);
  if (mask.size(-2) != h || mask.size(-1) != w) {
    throw ShapeError("mask " + c10::str(mask.sizes()) + " does not match image " + c10::str(x.sizes()));
  }
  if (depth && (depth->size(-2) != h || depth->size(-1) != w)) {
    throw ShapeError("depth " + c10::str(depth->sizes()) + " does not match image " + c10::str(x.sizes()));
  }
  const auto zt = q_sample(x.detach(), draw.t, draw.eps.to(x.scalar_type()), sched);
  std::optional<torch::Tensor> d;
  if (depth) d = depth->detach();
  auto eps_hat = predictor.predict(zt, cond, d);
  auto residual = (timestep_weight(weighting, sched, draw.t) * mask.detach() * (eps_hat - zt.eps)).detach();
  return {(residual * x).sum(), residual, residual.square().mean().item<double>()};
}

}  // namespace adapt3d
