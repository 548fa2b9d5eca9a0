#include "adapt3d/consistency.hpp"

#include "adapt3d/errors.hpp"
#include "adapt3d/rng.hpp"

namespace F = torch::nn::functional;

namespace adapt3d {

PatchEncoderImpl::PatchEncoderImpl(PatchEncoderArch arch) : arch_(arch) {
  stage1_ = register_module("stage1", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, arch_.dim1, 4).stride(4)));
  stage2_ = register_module("stage2", torch::nn::Conv2d(torch::nn::Conv2dOptions(arch_.dim1, arch_.dim2, 2).stride(2)));
  stage3_ = register_module("stage3", torch::nn::Conv2d(torch::nn::Conv2dOptions(arch_.dim2, arch_.dim3, 2).stride(2)));
}

std::vector<torch::Tensor> PatchEncoderImpl::feature_maps(const torch::Tensor& images) {
  auto f1 = stage1_->forward(images);
  auto f2 = stage2_->forward(torch::tanh(f1));
  auto f3 = stage3_->forward(torch::tanh(f2));
  return {f1, f2, f3};
}

namespace {

void orthogonal_fill(torch::Tensor weight, Rng& rng) {
  const auto rows = weight.size(0);
  const auto cols = weight.numel() / rows;
  const auto big = std::max(rows, cols);
  auto gaussian = randn(rng, {big, std::min(rows, cols)}, torch::kDouble);
  auto q = std::get<0>(torch::linalg_qr(gaussian));  // [big, min] with orthonormal columns
  auto w = rows >= cols ? q : q.t();                 // [rows, cols]
  // Unit-variance inputs map to roughly unit-variance outputs.
  w = w * std::sqrt(static_cast<double>(big) / static_cast<double>(cols));
  weight.copy_(w.reshape(weight.sizes()).to(weight.scalar_type()));
}

}  // namespace

PatchEncoder make_patch_encoder(uint64_t seed, PatchEncoderArch arch) {
  PatchEncoder encoder(arch);
  Rng rng(seed);
  torch::NoGradGuard no_grad;
  for (auto& item : encoder->named_parameters()) {
    auto& p = item.value();
    if (p.dim() > 1) {
      orthogonal_fill(p, rng);
    } else {
      p.copy_(0.1 * randn(rng, p.sizes(), torch::kDouble).to(p.scalar_type()));
    }
    p.set_requires_grad(false);
  }
  return encoder;
}

TokenPyramid encode_patches(const torch::Tensor& images, PatchEncoder& encoder) {
  auto batch = images.dim() == 3 ? images.unsqueeze(0) : images;
  if (batch.size(2) % 16 != 0 || batch.size(3) % 16 != 0) {
    throw ShapeError("patch encoder input " + c10::str(images.sizes()) + " must be divisible by 16");
  }
  TokenPyramid pyramid;
  for (auto& map : encoder->feature_maps(batch)) {
    // [B, D, h, w] -> [B, h*w, D] in raster order.
    auto tokens = map.flatten(2).transpose(1, 2);
    pyramid.layers.push_back(F::normalize(tokens, F::NormalizeFuncOptions().dim(-1)));
  }
  return pyramid;
}

PatchTokenizer toy_tokenizer(PatchEncoder encoder) {
  return [encoder](const torch::Tensor& images) mutable { return encode_patches(images, encoder); };
}

torch::Tensor hsc_token_terms(const torch::Tensor& target, const torch::Tensor& source, double temperature) {
  auto logits = torch::matmul(target, source.transpose(-1, -2)) / temperature;  // [B, N, N]
  return -torch::log_softmax(logits, -1).diagonal(0, -2, -1);
}

torch::Tensor hsc_loss(const TokenPyramid& target, const TokenPyramid& source, double temperature) {
  if (target.layers.size() != source.layers.size()) {
    throw ShapeError("token pyramids have different layer counts");
  }
  if (!(temperature > 0)) throw ConfigError("HSC temperature must be positive");
  torch::Tensor total;
  for (size_t l = 0; l < target.layers.size(); ++l) {
    const auto& t = target.layers[l];
    const auto& s = source.layers[l];
    if (t.sizes() != s.sizes()) {
      throw ShapeError("token layer " + std::to_string(l) + " differs: " + c10::str(t.sizes()) + " vs " +
                       c10::str(s.sizes()));
    }
    auto term = hsc_token_terms(t, s.detach(), temperature).sum();
    total = total.defined() ? total + term : term;
  }
  return total;
}

}  // namespace adapt3d
