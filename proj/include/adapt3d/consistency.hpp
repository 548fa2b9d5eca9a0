#pragma once

#include <functional>
#include <vector>

#include <torch/torch.h>

namespace adapt3d {

/// Multi-scale patch tokens, finest layer first. Layer l is [B, N_l, D_l],
/// tokens in raster order of their patch position, each L2-normalized.
struct TokenPyramid {
  std::vector<torch::Tensor> layers;
};

struct PatchEncoderArch {
  int64_t dim1 = 32;
  int64_t dim2 = 64;
  int64_t dim3 = 128;

  bool operator==(const PatchEncoderArch&) const = default;
};

/// Three-stage strided conv pyramid producing features at strides 4, 8 and
/// 16 of the input. Weights are fixed random orthogonal matrices.
class PatchEncoderImpl : public torch::nn::Module {
 public:
  explicit PatchEncoderImpl(PatchEncoderArch arch = {});

  /// Raw (unnormalized) feature maps at strides 4, 8, 16.
  std::vector<torch::Tensor> feature_maps(const torch::Tensor& images);

  const PatchEncoderArch& arch() const { return arch_; }

 private:
  PatchEncoderArch arch_;
  torch::nn::Conv2d stage1_{nullptr}, stage2_{nullptr}, stage3_{nullptr};
};
TORCH_MODULE(PatchEncoder);

/// Deterministic orthogonal initialization from `seed`; biases are small
/// random offsets so that an all-black patch still maps to a nonzero token.
PatchEncoder make_patch_encoder(uint64_t seed, PatchEncoderArch arch = {});

/// Any callable honoring the TokenPyramid contract can stand in for the
/// toy encoder.
using PatchTokenizer = std::function<TokenPyramid(const torch::Tensor& images)>;

PatchTokenizer toy_tokenizer(PatchEncoder encoder);

/// images [B, 3, H, W] (or [3, H, W]) with H, W divisible by 16.
/// Differentiable with respect to the images.
TokenPyramid encode_patches(const torch::Tensor& images, PatchEncoder& encoder);

/// Per-token contrastive terms -log softmax_j(v^t_i . v^s_j / tau)[i] of one
/// layer: target, source [B, N, D] -> [B, N].
torch::Tensor hsc_token_terms(const torch::Tensor& target, const torch::Tensor& source, double temperature = 1.0);

/// Sum over layers, positions and batch of the per-token terms. The source
/// pyramid is detached, so gradients reach only the target tokens.
torch::Tensor hsc_loss(const TokenPyramid& target, const TokenPyramid& source, double temperature = 1.0);

}  // namespace adapt3d
