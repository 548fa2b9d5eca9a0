#include "adapt3d/conditioning.hpp"
#include "adapt3d/errors.hpp"
#include "adapt3d/scene.hpp"
#include "test_util.hpp"

using namespace adapt3d;

namespace {

EncoderArch small_encoder() { return EncoderArch{32, 32, 16}; }

}  // namespace

TEST(Conditioning, TextEncodingIsDeterministic) {
  TextEncoder enc(small_encoder());
  auto a = encode_text({3, 5}, enc);
  auto b = encode_text({3, 5}, enc);
  EXPECT_TRUE(torch::equal(a.embedding, b.embedding));
  EXPECT_EQ(a.modality, Modality::Text);
  EXPECT_EQ(a.embedding.sizes(), (std::vector<int64_t>{32}));
  EXPECT_FALSE(a.embedding.requires_grad());
}

TEST(Conditioning, EmptyPromptUsesNullToken) {
  TextEncoder enc(small_encoder());
  auto empty = encode_text({}, enc);
  auto null = encode_text({kNullToken}, enc);
  EXPECT_TRUE(torch::equal(empty.embedding, null.embedding));
}

TEST(Conditioning, OutOfVocabularyIsInputError) {
  TextEncoder enc(small_encoder());
  EXPECT_THROW(encode_text({17}, enc), InputError);
  EXPECT_THROW(encode_text({-1}, enc), InputError);
  EXPECT_THROW(parse_prompt("style_16"), InputError);
  EXPECT_THROW(parse_prompt("cat"), InputError);
  EXPECT_THROW(parse_style_token("style_7"), InputError);
}

TEST(Conditioning, PromptParsing) {
  EXPECT_EQ(parse_prompt("style_07"), (std::vector<int64_t>{7}));
  EXPECT_EQ(parse_prompt("  style_00   style_15 "), (std::vector<int64_t>{0, 15}));
  EXPECT_TRUE(parse_prompt("").empty());
  EXPECT_EQ(style_token_name(3), "style_03");
}

TEST(Conditioning, ImageEncodingIsDeterministicAndFinite) {
  ImageEncoder enc(small_encoder());
  auto img = torch::rand({3, 32, 32});
  auto a = encode_image(img, enc, "x.png");
  auto b = encode_image(img, enc, "x.png");
  EXPECT_TRUE(torch::equal(a.embedding, b.embedding));
  EXPECT_EQ(a.modality, Modality::Image);
  EXPECT_EQ(a.provenance, "x.png");
  auto zero = encode_image(torch::zeros({3, 32, 32}), enc);
  EXPECT_TRUE(torch::isfinite(zero.embedding).all().item<bool>());
}

TEST(Conditioning, ImageResolutionMismatchIsInputError) {
  ImageEncoder enc(small_encoder());
  EXPECT_THROW(encode_image(torch::rand({3, 16, 16}), enc), InputError);
  EXPECT_THROW(encode_image(torch::rand({1, 32, 32}), enc), InputError);
}

TEST(Conditioning, RegistryDefaultsToToyEncoders) {
  TextEncoder text(small_encoder());
  ImageEncoder image(small_encoder());
  EncoderRegistry registry(text, image);
  EXPECT_TRUE(torch::equal(registry.encode_text({4}).embedding, encode_text({4}, text).embedding));
  auto img = torch::rand({3, 32, 32});
  EXPECT_TRUE(torch::equal(registry.encode_image(img).embedding, encode_image(img, image).embedding));
}

TEST(Conditioning, RegistryDispatchesToRegisteredEncoder) {
  EncoderRegistry registry{TextEncoder(small_encoder()), ImageEncoder(small_encoder())};
  registry.register_text(32, [](const std::vector<int64_t>& t) {
    return torch::full({32}, static_cast<double>(t.size()));
  });
  registry.register_image(32, [](const torch::Tensor& img) { return img.mean().expand({32}).clone(); });
  EXPECT_EQ(registry.encode_text({1, 2, 3}).embedding[0].item<double>(), 3.0);
  EXPECT_NEAR(registry.encode_image(torch::full({3, 32, 32}, 0.25)).embedding[5].item<double>(), 0.25, 1e-7);
}

TEST(Conditioning, RegistryRejectsWrongDimension) {
  EncoderRegistry registry{TextEncoder(small_encoder()), ImageEncoder(small_encoder())};
  EXPECT_THROW(registry.register_text(16, [](const std::vector<int64_t>&) { return torch::zeros({16}); }),
               ConfigError);
  EXPECT_THROW(registry.register_image(64, [](const torch::Tensor&) { return torch::zeros({64}); }), ConfigError);
}
