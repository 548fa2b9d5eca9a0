#include <cmath>
#include <filesystem>

#include "adapt3d/ablation.hpp"
#include "adapt3d/errors.hpp"
#include "adapt3d/guidance_training.hpp"
#include "adapt3d/metrics.hpp"
#include "adapt3d/rng.hpp"
#include "adapt3d/scene.hpp"
#include "test_util.hpp"

using namespace adapt3d;
using namespace adapt3d::testing;
namespace fs = std::filesystem;

namespace {

constexpr double kDeg = 180.0 / 3.14159265358979323846;

PatchTokenizer tokenizer() { return toy_tokenizer(make_patch_encoder(11)); }

/// Oracle that always answers (yaw, pitch).
PoseOracle constant_oracle(double yaw, double pitch, int64_t resolution = 32) {
  PoseOracle oracle(PoseOracleArch{resolution, 4});
  torch::NoGradGuard ng;
  auto params = oracle->named_parameters();
  params["head.weight"].zero_();
  params["head.bias"].copy_(torch::tensor({yaw, pitch}));
  return oracle;
}

RenderOutput flat_render(double rgb, double opacity, int64_t n = 2, int64_t res = 8) {
  return {torch::full({n, 3, res, res}, rgb), torch::full({n, 1, res, res}, 2.5),
          torch::full({n, 1, res, res}, opacity)};
}

MetricReport report(const std::string& name, double pose, double scs, std::optional<double> bg, double align) {
  MetricReport r;
  r.config = name;
  r.pose_deg = pose;
  r.scs = scs;
  r.bg_mse = bg;
  r.align_proxy = align;
  r.n = 64;
  r.seed = 7;
  return r;
}

AblationTable passing_table() {
  AblationTable t;
  t.baseline = report("source", 2.0, 1.0, 0.0, 0.0);
  t.rows = {report("sds", 20, 0.4, 0.05, 0.02),          report("sds+depth", 15, 0.5, 0.04, 0.02),
            report("sds+depth+mask", 12, 0.6, 0.01, 0.02), report("full", 8, 0.8, 0.008, 0.015),
            report("lambda_0", 12, 0.6, 0.01, 0.02),       report("lambda_1", 10, 0.7, 0.009, 0.018),
            report("lambda_3", 8, 0.8, 0.008, 0.015),      report("lambda_5", 7, 0.85, 0.007, 0.01)};
  t.no_mask = report("full-no-mask", 9, 0.7, 0.03, 0.015);
  return t;
}

bool verdict(const AblationTable& t, const std::string& name) {
  for (const auto& v : ablation_verdicts(t))
    if (v.name == name) return v.pass;
  ADD_FAILURE() << "no verdict " << name;
  return false;
}

}  // namespace

TEST(Scs, IdenticalRendersScoreOne) {
  auto img = torch::rand({4, 3, 32, 32});
  EXPECT_NEAR(scs_of_images(img, img, tokenizer()), 1.0, 1e-6);
}

TEST(Scs, Symmetric) {
  auto a = torch::rand({3, 3, 32, 32});
  auto b = (a + 0.3 * torch::rand({3, 3, 32, 32})).clamp(0, 1);
  EXPECT_NEAR(scs_of_images(a, b, tokenizer()), scs_of_images(b, a, tokenizer()), 1e-12);
  EXPECT_GT(scs_of_images(a, b, tokenizer()), 0.5);
}

TEST(Scs, IndependentNoiseScoresNearZero) {
  torch::manual_seed(17);
  auto a = torch::rand({64, 3, 32, 32});
  auto b = torch::rand({64, 3, 32, 32});
  EXPECT_LT(std::abs(scs_of_images(a, b, tokenizer())), 0.2);
}

// Ground-truth renders: recoloring a head keeps its structure, turning it or
// swapping the identity does not.
TEST(Scs, RestyleScoresAboveGeometryChanges) {
  RenderSettings rs;
  rs.resolution = 32;
  PoseDistribution cam;
  Rng rng(3);
  std::vector<torch::Tensor> src, restyled, restyled_fg, turned, other;
  for (int i = 0; i < 32; ++i) {
    auto z = randn(rng, {2, 16});
    const auto scene = scene_from_latent(z[0]);
    const int style = static_cast<int>(uniform_int(rng, 0, kStyleCount - 1));
    CameraPose p{uniform(rng, cam.yaw_min, cam.yaw_max), 0.0, cam.radius, cam.fov};
    CameraPose q = p;
    q.yaw += p.yaw > 0 ? -0.35 : 0.35;
    const auto a = render_scene(scene, p, rs);
    const auto b = render_scene(scene, p, rs, style);
    src.push_back(a.rgb);
    restyled.push_back(b.rgb);
    restyled_fg.push_back(b.rgb * a.opacity + a.rgb * (1 - a.opacity));
    turned.push_back(render_scene(scene, q, rs).rgb);
    other.push_back(render_scene(scene_from_latent(z[1]), p, rs).rgb);
  }
  const auto tok = tokenizer();
  const auto s = torch::stack(src);
  const double full = scs_of_images(s, torch::stack(restyled), tok);
  const double fg = scs_of_images(s, torch::stack(restyled_fg), tok);
  const double yaw = scs_of_images(s, torch::stack(turned), tok);
  const double identity = scs_of_images(s, torch::stack(other), tok);
  EXPECT_GT(std::min(full, fg), yaw + 0.1);
  EXPECT_GT(yaw, identity);
}

TEST(Scs, ShapeMismatchIsShapeError) {
  EXPECT_THROW(scs_of_images(torch::rand({1, 3, 32, 32}), torch::rand({2, 3, 32, 32}), tokenizer()), ShapeError);
}

TEST(BackgroundPreservation, IdenticalRendersGiveZero) {
  auto r = flat_render(0.4, 0.1);
  auto v = background_preservation_of(r, r, 0.5);
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(*v, 0.0);
}

TEST(BackgroundPreservation, AbsentWhenTargetIsAllForeground) {
  EXPECT_FALSE(background_preservation_of(flat_render(0.4, 0.0), flat_render(0.4, 0.9), 0.5).has_value());
}

TEST(BackgroundPreservation, AveragesOverBackgroundPixelsOnly) {
  auto src = flat_render(0.5, 0.0, 1, 4);
  auto tgt = flat_render(0.5, 0.0, 1, 4);
  // Half the pixels become foreground with a large change; the background
  // half changes by 0.1 in every channel.
  tgt.opacity.narrow(3, 0, 2).fill_(1.0);
  tgt.rgb.narrow(3, 0, 2).fill_(1.0);
  tgt.rgb.narrow(3, 2, 2).fill_(0.6);
  auto v = background_preservation_of(src, tgt, 0.5);
  ASSERT_TRUE(v.has_value());
  EXPECT_NEAR(*v, 0.01, 1e-7);
}

TEST(PoseError, ConstantOracleMatchesGeometry) {
  auto oracle = constant_oracle(0.0, 0.0);
  std::vector<CameraPose> poses{{0.0, 0.0, 2.7, 0.35}, {0.4, 0.0, 2.7, 0.35}, {0.0, -0.2, 2.7, 0.35}};
  const double expected = (0.0 + 0.4 + 0.2) / 3.0 * kDeg;
  EXPECT_NEAR(pose_error_of_images(torch::rand({3, 3, 32, 32}), poses, oracle), expected, 1e-3);
}

TEST(PoseError, WrongResolutionIsShapeError) {
  auto oracle = constant_oracle(0.0, 0.0);
  EXPECT_THROW(pose_error_of_images(torch::rand({1, 3, 16, 16}), {CameraPose{}}, oracle), ShapeError);
}

TEST(PoseOracleCheckpoint, RoundTrip) {
  auto oracle = constant_oracle(0.1, -0.05);
  auto path = fs::temp_directory_path() / "adapt3d_test_oracle.ckpt";
  save_pose_oracle(path, oracle, 1.25);
  double held_out = 0.0;
  auto loaded = load_pose_oracle(path, &held_out);
  EXPECT_EQ(held_out, 1.25);
  EXPECT_TRUE(same_parameters(*oracle, *loaded));
}

TEST(EvalSamples, DeterministicAndInBounds) {
  PoseDistribution dist;
  auto a = eval_samples(8, dist, 10, 7);
  auto b = eval_samples(8, dist, 10, 7);
  EXPECT_TRUE(torch::equal(a.z, b.z));
  ASSERT_EQ(a.poses.size(), 10u);
  for (size_t i = 0; i < a.poses.size(); ++i) {
    EXPECT_EQ(a.poses[i].yaw, b.poses[i].yaw);
    EXPECT_LE(std::abs(a.poses[i].yaw), dist.yaw_max);
  }
  EXPECT_FALSE(torch::equal(a.z, eval_samples(8, dist, 10, 8).z));
}

TEST(AlignProxy, DeterministicAndFinite) {
  DiffusionArch arch;
  arch.denoiser = DenoiserArch{8, 2, 16, 16};
  arch.encoder = EncoderArch{16, 16, 8};
  DiffusionPretrainConfig cfg;
  cfg.steps = 0;
  auto model = pretrain_denoiser(arch, TargetDomainSampler(PoseDistribution{}, tiny_render(16), {}, 8), cfg);
  auto cond = encode_text({3}, model.text_encoder);
  auto images = torch::rand({5, 3, 16, 16});
  const double a = align_proxy_of_images(images, cond, model, 4, 2);
  const double b = align_proxy_of_images(images, cond, model, 4, 2);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(std::isfinite(a));
  // The null condition scores itself at exactly zero.
  auto null = encode_text({}, model.text_encoder);
  EXPECT_EQ(align_proxy_of_images(images, null, model, 4, 2), 0.0);
}

TEST(Report, CsvFormat) {
  EXPECT_EQ(csv_header(), "config,pose_deg,scs,bg_mse,align_proxy,n,seed");
  EXPECT_EQ(csv_row(report("full", 12.5, 0.75, 0.001, -0.0002)), "full,12.500000,0.750000,0.00100000,-0.00020000,64,7");
  EXPECT_EQ(csv_row(report("sds", 1, 0, std::nullopt, 0)), "sds,1.000000,0.000000,ABSENT,0.00000000,64,7");
  EXPECT_EQ(record_line(report("sds", 1, 0.5, std::nullopt, 0)),
            "config=sds pose_deg=1 scs=0.5 bg_mse=ABSENT align_proxy=0 n=64 seed=7");
  auto r = report("x", 1, 1, 0.25, 1);
  r.extras["clip"] = 0.5;
  EXPECT_EQ(record_line(r), "config=x pose_deg=1 scs=1 bg_mse=0.25 align_proxy=1 n=64 seed=7 clip=0.5");
}

TEST(Ablation, RowLayout) {
  auto rows = ablation_rows(3.0);
  ASSERT_EQ(rows.size(), 8u);
  const std::vector<std::string> names{"sds",      "sds+depth", "sds+depth+mask", "full",
                                       "lambda_0", "lambda_1",  "lambda_3",       "lambda_5"};
  for (size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].name, names[i]);
  EXPECT_FALSE(rows[0].use_depth || rows[0].use_mask || rows[0].use_hsc);
  EXPECT_TRUE(rows[3].use_depth && rows[3].use_mask && rows[3].use_hsc);
  EXPECT_EQ(rows[3].lambda, 3.0);
  EXPECT_EQ(rows[7].lambda, 5.0);
}

TEST(Ablation, CsvHasHeaderAndOneLinePerRow) {
  auto csv = ablation_csv(passing_table());
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
  EXPECT_EQ(csv.rfind(csv_header() + "\n", 0), 0u);
}

TEST(Ablation, VerdictsPassOnOrderedTable) {
  auto t = passing_table();
  for (const auto& v : ablation_verdicts(t)) EXPECT_TRUE(v.pass) << v.name << ": " << v.detail;
}

TEST(Ablation, TiesCountAgainstAcceptance) {
  auto t = passing_table();
  t.rows[3].pose_deg = t.rows[0].pose_deg;  // full == sds
  EXPECT_FALSE(verdict(t, "pose_order"));
  t = passing_table();
  t.rows[3].scs = t.rows[0].scs;
  EXPECT_FALSE(verdict(t, "scs_order"));
  t = passing_table();
  t.rows[6].pose_deg = t.rows[4].pose_deg;  // lambda 3 == lambda 0
  EXPECT_FALSE(verdict(t, "lambda_pose"));
  t = passing_table();
  t.no_mask.bg_mse = t.rows[3].bg_mse;
  EXPECT_FALSE(verdict(t, "background"));
}

TEST(Ablation, OrderViolationsFail) {
  auto t = passing_table();
  t.rows[1].pose_deg = 25;  // +depth worse than sds
  EXPECT_FALSE(verdict(t, "pose_order"));
  t = passing_table();
  t.rows[5].align_proxy = 0.03;  // lambda_1 above lambda_0
  EXPECT_FALSE(verdict(t, "lambda_align"));
  t = passing_table();
  t.rows[3].bg_mse.reset();
  EXPECT_FALSE(verdict(t, "background"));
  t = passing_table();
  t.rows[3].align_proxy = -0.1;
  EXPECT_FALSE(verdict(t, "align_above_baseline"));
}
