#pragma once

#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "adapt3d/scene.hpp"

namespace adapt3d {

enum class Modality { Text, Image };

const char* modality_name(Modality m);

/// A modality-tagged conditioning vector in the shared embedding space.
struct Condition {
  Modality modality = Modality::Text;
  torch::Tensor embedding;  // [cond_dim]
  std::string provenance;
};

/// Token id reserved for the unconditional (null) prompt.
inline constexpr int64_t kNullToken = kStyleCount;

struct EncoderArch {
  int64_t cond_dim = 32;
  int64_t image_resolution = 64;
  int64_t image_width = 32;

  bool operator==(const EncoderArch&) const = default;
};

/// Token table + mean pooling + linear projection.
class TextEncoderImpl : public torch::nn::Module {
 public:
  explicit TextEncoderImpl(EncoderArch arch = {});
  /// tokens [B, L] of ids in [0, kNullToken] -> [B, cond_dim]
  torch::Tensor forward(const torch::Tensor& tokens);
  const EncoderArch& arch() const { return arch_; }

 private:
  EncoderArch arch_;
  torch::nn::Embedding table_{nullptr};
  torch::nn::Linear proj_{nullptr};
};
TORCH_MODULE(TextEncoder);

/// Three strided convolutions, global average pooling, linear projection.
class ImageEncoderImpl : public torch::nn::Module {
 public:
  explicit ImageEncoderImpl(EncoderArch arch = {});
  /// images [B, 3, H, W] in [0, 1] -> [B, cond_dim]
  torch::Tensor forward(const torch::Tensor& images);
  const EncoderArch& arch() const { return arch_; }

 private:
  EncoderArch arch_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
  torch::nn::Linear proj_{nullptr};
};
TORCH_MODULE(ImageEncoder);

/// Whitespace-separated style names -> token ids. Throws InputError on an
/// unknown name.
std::vector<int64_t> parse_prompt(const std::string& prompt);

/// Frozen toy text encoding. An empty sequence yields the null embedding.
Condition encode_text(const std::vector<int64_t>& tokens, TextEncoder& encoder);

/// Frozen toy image encoding; `image` is [3, H, W] at the encoder's resolution.
Condition encode_image(const torch::Tensor& image, ImageEncoder& encoder, const std::string& provenance = {});

/// Dispatches encode requests to the encoder registered for each modality.
/// Both slots start out bound to the toy encoders; `register_*` swaps in an
/// external implementation after checking its output dimension.
class EncoderRegistry {
 public:
  using TextFn = std::function<torch::Tensor(const std::vector<int64_t>&)>;
  using ImageFn = std::function<torch::Tensor(const torch::Tensor&)>;

  EncoderRegistry(TextEncoder text, ImageEncoder image);

  void register_text(int64_t output_dim, TextFn fn);
  void register_image(int64_t output_dim, ImageFn fn);

  Condition encode_text(const std::vector<int64_t>& tokens, const std::string& provenance = {}) const;
  Condition encode_image(const torch::Tensor& image, const std::string& provenance = {}) const;
  Condition null_condition() const { return encode_text({}, "null"); }

  int64_t cond_dim() const { return cond_dim_; }

 private:
  int64_t cond_dim_;
  TextFn text_;
  ImageFn image_;
};

}  // namespace adapt3d
