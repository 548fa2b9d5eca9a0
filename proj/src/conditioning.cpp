#include "adapt3d/conditioning.hpp"

#include <sstream>

#include "adapt3d/errors.hpp"

namespace adapt3d {

const char* modality_name(Modality m) { return m == Modality::Text ? "text" : "image"; }

TextEncoderImpl::TextEncoderImpl(EncoderArch arch) : arch_(arch) {
  table_ = register_module("table", torch::nn::Embedding(kNullToken + 1, arch_.cond_dim));
  proj_ = register_module("proj", torch::nn::Linear(arch_.cond_dim, arch_.cond_dim));
}

torch::Tensor TextEncoderImpl::forward(const torch::Tensor& tokens) {
  return proj_->forward(table_->forward(tokens).mean(1));
}

ImageEncoderImpl::ImageEncoderImpl(EncoderArch arch) : arch_(arch) {
  const auto w = arch_.image_width;
  auto conv = [](int64_t in, int64_t out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1));
  };
  conv1_ = register_module("conv1", conv(3, w / 2));
  conv2_ = register_module("conv2", conv(w / 2, w));
  conv3_ = register_module("conv3", conv(w, w));
  proj_ = register_module("proj", torch::nn::Linear(w, arch_.cond_dim));
}

torch::Tensor ImageEncoderImpl::forward(const torch::Tensor& images) {
  auto h = torch::silu(conv1_->forward(images * 2.0 - 1.0));
  h = torch::silu(conv2_->forward(h));
  h = torch::silu(conv3_->forward(h));
  return proj_->forward(h.mean({2, 3}));
}

std::vector<int64_t> parse_prompt(const std::string& prompt) {
  std::istringstream is(prompt);
  std::vector<int64_t> tokens;
  for (std::string word; is >> word;) tokens.push_back(parse_style_token(word));
  return tokens;
}

Condition encode_text(const std::vector<int64_t>& tokens, TextEncoder& encoder) {
  torch::NoGradGuard no_grad;
  std::vector<int64_t> ids = tokens.empty() ? std::vector<int64_t>{kNullToken} : tokens;
  std::string provenance;
  for (auto id : ids) {
    if (id < 0 || id > kNullToken) throw InputError("token id out of vocabulary: " + std::to_string(id));
    if (!provenance.empty()) provenance += ' ';
    provenance += id == kNullToken ? "<null>" : style_token_name(static_cast<int>(id));
  }
  auto t = torch::tensor(ids, torch::kLong).unsqueeze(0);
  return {Modality::Text, encoder->forward(t)[0].detach().clone(), provenance};
}

Condition encode_image(const torch::Tensor& image, ImageEncoder& encoder, const std::string& provenance) {
  const auto res = encoder->arch().image_resolution;
  if (image.dim() != 3 || image.size(0) != 3 || image.size(1) != res || image.size(2) != res) {
    throw InputError("reference image must be 3 x " + std::to_string(res) + " x " + std::to_string(res) +
                     ", got " + c10::str(image.sizes()));
  }
  torch::NoGradGuard no_grad;
  auto dtype = encoder->parameters().front().scalar_type();
  return {Modality::Image, encoder->forward(image.unsqueeze(0).to(dtype))[0].detach().clone(), provenance};
}

EncoderRegistry::EncoderRegistry(TextEncoder text, ImageEncoder image) : cond_dim_(text->arch().cond_dim) {
  if (image->arch().cond_dim != cond_dim_) throw ConfigError("text and image encoders disagree on cond_dim");
  text_ = [text](const std::vector<int64_t>& tokens) mutable {
    auto enc = text;
    return adapt3d::encode_text(tokens, enc).embedding;
  };
  image_ = [image](const torch::Tensor& img) mutable {
    auto enc = image;
    return adapt3d::encode_image(img, enc).embedding;
  };
}

void EncoderRegistry::register_text(int64_t output_dim, TextFn fn) {
  if (output_dim != cond_dim_) {
    throw ConfigError("text encoder output dim " + std::to_string(output_dim) + " != condition dim " +
                      std::to_string(cond_dim_));
  }
  text_ = std::move(fn);
}

void EncoderRegistry::register_image(int64_t output_dim, ImageFn fn) {
  if (output_dim != cond_dim_) {
    throw ConfigError("image encoder output dim " + std::to_string(output_dim) + " != condition dim " +
                      std::to_string(cond_dim_));
  }
  image_ = std::move(fn);
}

namespace {

torch::Tensor checked(torch::Tensor embedding, int64_t dim) {
  embedding = embedding.detach().reshape({-1});
  if (embedding.size(0) != dim) {
    throw ShapeError("encoder returned " + std::to_string(embedding.size(0)) + " values, expected " +
                     std::to_string(dim));
  }
  if (!torch::isfinite(embedding).all().item<bool>()) throw InputError("encoder produced a non-finite embedding");
  return embedding;
}

}  // namespace

Condition EncoderRegistry::encode_text(const std::vector<int64_t>& tokens, const std::string& provenance) const {
  Condition c{Modality::Text, checked(text_(tokens), cond_dim_), provenance};
  if (c.provenance.empty()) {
    for (auto id : tokens) {
      if (!c.provenance.empty()) c.provenance += ' ';
      c.provenance += style_token_name(static_cast<int>(id));
    }
  }
  return c;
}

Condition EncoderRegistry::encode_image(const torch::Tensor& image, const std::string& provenance) const {
  return {Modality::Image, checked(image_(image), cond_dim_), provenance};
}

}  // namespace adapt3d
