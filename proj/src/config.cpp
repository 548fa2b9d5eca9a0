#include "adapt3d/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "adapt3d/errors.hpp"

namespace adapt3d {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_int(const std::string& s, int64_t& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == s.size() && std::isfinite(out);
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") {
    out = true;
  } else if (s == "false" || s == "0" || s == "no" || s == "off") {
    out = false;
  } else {
    return false;
  }
  return true;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Config::Config() {
  using T = Type;
  const PoseDistribution cam;
  const RenderSettings render;
  const GeneratorArch gen;
  const SourcePretrainConfig src;
  const DiffusionArch diff;
  const DiffusionPretrainConfig dtrain;
  const TargetPoseBias bias;
  const PatchEncoderArch patch;
  const PoseOracleTrainConfig oracle;
  const AdaptConfig adapt;
  const std::vector<std::tuple<std::string, T, std::string, std::string>> table = {
      {"camera.yaw_min", T::Double, fmt(cam.yaw_min), "lower yaw bound (rad)"},
      {"camera.yaw_max", T::Double, fmt(cam.yaw_max), "upper yaw bound (rad)"},
      {"camera.pitch_min", T::Double, fmt(cam.pitch_min), "lower pitch bound (rad)"},
      {"camera.pitch_max", T::Double, fmt(cam.pitch_max), "upper pitch bound (rad)"},
      {"camera.radius", T::Double, fmt(cam.radius), "orbit radius"},
      {"camera.fov", T::Double, fmt(cam.fov), "vertical field of view (rad)"},
      {"render.resolution", T::Int, std::to_string(render.resolution), "image side in pixels"},
      {"render.n_samples", T::Int, std::to_string(render.n_samples), "samples per ray"},
      {"render.near", T::Double, fmt(render.near), "near bound along each ray"},
      {"render.far", T::Double, fmt(render.far), "far bound along each ray"},
      {"render.background", T::Double, fmt(render.background), "background gray level"},
      {"generator.latent_dim", T::Int, std::to_string(gen.latent_dim), "latent size"},
      {"generator.plane_res", T::Int, std::to_string(gen.plane_res), "tri-plane side"},
      {"generator.feature_dim", T::Int, std::to_string(gen.feature_dim), "tri-plane channels"},
      {"generator.decoder_width", T::Int, std::to_string(gen.decoder_width), "decoder hidden width"},
      {"generator.mapping_width", T::Int, std::to_string(gen.mapping_width), "mapping hidden width"},
      {"source.steps", T::Int, std::to_string(src.steps), "source pretraining steps"},
      {"source.lr", T::Double, fmt(src.lr), "source pretraining learning rate"},
      {"source.batch", T::Int, std::to_string(src.batch), "images per step"},
      {"source.rays_per_image", T::Int, std::to_string(src.rays_per_image), "rays per image per step"},
      {"source.depth_weight", T::Double, fmt(src.depth_weight), "depth loss weight"},
      {"source.seed", T::Int, std::to_string(src.seed), "source pretraining seed"},
      {"diffusion.schedule_steps", T::Int, std::to_string(diff.schedule_steps), "noise schedule length T"},
      {"diffusion.beta_start", T::Double, fmt(diff.beta_start), "first beta"},
      {"diffusion.beta_end", T::Double, fmt(diff.beta_end), "last beta"},
      {"diffusion.width", T::Int, std::to_string(diff.denoiser.width), "denoiser base width"},
      {"diffusion.levels", T::Int, std::to_string(diff.denoiser.levels), "denoiser resolution levels"},
      {"diffusion.cond_dim", T::Int, std::to_string(diff.denoiser.cond_dim), "condition embedding size"},
      {"diffusion.embed_dim", T::Int, std::to_string(diff.denoiser.embed_dim), "timestep embedding size"},
      {"diffusion.image_width", T::Int, std::to_string(diff.encoder.image_width), "image encoder width"},
      {"diffusion.steps", T::Int, std::to_string(dtrain.steps), "denoiser pretraining steps"},
      {"diffusion.lr", T::Double, fmt(dtrain.lr), "denoiser learning rate"},
      {"diffusion.batch", T::Int, std::to_string(dtrain.batch), "denoiser batch"},
      {"diffusion.cond_dropout", T::Double, fmt(dtrain.cond_dropout), "null-condition rate"},
      {"diffusion.depth_dropout", T::Double, fmt(dtrain.depth_dropout), "rate of training without depth"},
      {"diffusion.image_cond_fraction", T::Double, fmt(dtrain.image_cond_fraction), "rate of image conditions"},
      {"diffusion.align_weight", T::Double, fmt(dtrain.align_weight), "image/text alignment loss weight"},
      {"diffusion.seed", T::Int, std::to_string(dtrain.seed), "denoiser pretraining seed"},
      {"diffusion.frontal_fraction", T::Double, fmt(bias.frontal_fraction), "near-frontal share of target images"},
      {"diffusion.frontal_yaw_std", T::Double, fmt(bias.yaw_std), "yaw spread of frontal images"},
      {"diffusion.frontal_pitch_std", T::Double, fmt(bias.pitch_std), "pitch spread of frontal images"},
      {"patch.seed", T::Int, "11", "patch encoder seed"},
      {"patch.dim1", T::Int, std::to_string(patch.dim1), "stride-4 token size"},
      {"patch.dim2", T::Int, std::to_string(patch.dim2), "stride-8 token size"},
      {"patch.dim3", T::Int, std::to_string(patch.dim3), "stride-16 token size"},
      {"oracle.dataset", T::Int, std::to_string(oracle.dataset), "training images"},
      {"oracle.steps", T::Int, std::to_string(oracle.steps), "training steps"},
      {"oracle.batch", T::Int, std::to_string(oracle.batch), "batch size"},
      {"oracle.lr", T::Double, fmt(oracle.lr), "learning rate"},
      {"oracle.gate_deg", T::Double, fmt(oracle.gate_deg), "maximum held-out error (deg)"},
      {"oracle.gate_samples", T::Int, std::to_string(oracle.gate_samples), "held-out renders"},
      {"oracle.seed", T::Int, std::to_string(oracle.seed), "oracle seed"},
      {"adapt.lambda", T::Double, fmt(adapt.lambda), "consistency loss weight"},
      {"adapt.lr", T::Double, fmt(adapt.lr), "learning rate"},
      {"adapt.iters", T::Int, std::to_string(adapt.iters), "iterations"},
      {"adapt.seed", T::Int, std::to_string(adapt.seed), "adaptation seed"},
      {"adapt.use_depth", T::Bool, "true", "depth-conditioned guidance"},
      {"adapt.use_mask", T::Bool, "true", "foreground-masked guidance"},
      {"adapt.use_hsc", T::Bool, "true", "consistency loss"},
      {"adapt.mask_tau", T::Double, fmt(adapt.mask_tau), "opacity threshold of the mask"},
      {"adapt.hsc_temperature", T::Double, fmt(adapt.hsc_temperature), "consistency loss temperature"},
      {"adapt.weighting", T::String, "uniform", "timestep weighting: uniform | one_minus_alpha_bar"},
      {"adapt.guidance_scale", T::String, "none", "classifier-free guidance scale or none"},
      {"adapt.checkpoint_every", T::Int, std::to_string(adapt.checkpoint_every), "checkpoint period (0 = final only)"},
      {"adapt.optimizer", T::String, "adam", "adam | momentum_sgd"},
      {"adapt.momentum", T::Double, fmt(adapt.optimizer.momentum), "momentum coefficient"},
      {"adapt.prompt", T::String, "style_07", "target style tokens"},
      {"adapt.ref_image", T::String, "", "reference PNG (overrides the prompt when set)"},
      {"eval.n", T::Int, "64", "evaluation samples"},
      {"eval.seed", T::Int, "7", "evaluation seed"},
      {"eval.align_draws", T::Int, "8", "timestep draws per sample for align_proxy"},
      {"paths.out", T::String, "runs", "root of run directories"},
      {"paths.source", T::String, "", "source generator checkpoint"},
      {"paths.guidance", T::String, "", "guidance checkpoint"},
      {"paths.oracle", T::String, "", "pose oracle checkpoint"},
  };
  for (const auto& [key, type, value, help] : table) entries_[key] = Entry{type, value, help};
}

const Config::Entry& Config::entry(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void Config::set(const std::string& key, const std::string& raw) {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  const auto value = trim(raw);
  int64_t i;
  double d;
  bool b;
  switch (it->second.type) {
    case Type::Int:
      if (!parse_int(value, i)) throw ConfigError("config key '" + key + "' expects an integer, got '" + value + "'");
      break;
    case Type::Double:
      if (!parse_double(value, d)) throw ConfigError("config key '" + key + "' expects a number, got '" + value + "'");
      break;
    case Type::Bool:
      if (!parse_bool(value, b)) throw ConfigError("config key '" + key + "' expects true/false, got '" + value + "'");
      break;
    case Type::String:
      break;
  }
  it->second.value = value;
}

void Config::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = trim(line);
    if (body.empty() || body[0] == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      set(trim(body.substr(0, eq)), body.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void Config::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  load_text(buf.str(), path.string());
}

int64_t Config::get_int(const std::string& key) const {
  int64_t v = 0;
  parse_int(entry(key).value, v);
  return v;
}

uint64_t Config::get_seed(const std::string& key) const {
  const auto v = get_int(key);
  if (v < 0) throw ConfigError("config key '" + key + "' must be a non-negative seed");
  return static_cast<uint64_t>(v);
}

double Config::get_double(const std::string& key) const {
  double v = 0;
  parse_double(entry(key).value, v);
  return v;
}

bool Config::get_bool(const std::string& key) const {
  bool v = false;
  parse_bool(entry(key).value, v);
  return v;
}

std::string Config::get_string(const std::string& key) const { return entry(key).value; }

std::string Config::resolved() const {
  std::string out;
  for (const auto& [key, e] : entries_) out += key + " = " + e.value + "\n";
  return out;
}

std::string Config::hash() const {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : resolved()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

PoseDistribution camera_config(const Config& cfg) {
  PoseDistribution d;
  d.yaw_min = cfg.get_double("camera.yaw_min");
  d.yaw_max = cfg.get_double("camera.yaw_max");
  d.pitch_min = cfg.get_double("camera.pitch_min");
  d.pitch_max = cfg.get_double("camera.pitch_max");
  d.radius = cfg.get_double("camera.radius");
  d.fov = cfg.get_double("camera.fov");
  d.validate();
  return d;
}

RenderSettings render_config(const Config& cfg) {
  RenderSettings s;
  s.resolution = cfg.get_int("render.resolution");
  s.n_samples = cfg.get_int("render.n_samples");
  s.near = cfg.get_double("render.near");
  s.far = cfg.get_double("render.far");
  s.background = cfg.get_double("render.background");
  if (s.resolution < 16 || s.resolution % 16 != 0) throw ConfigError("render.resolution must be a multiple of 16");
  if (s.n_samples < 8) throw ConfigError("render.n_samples must be >= 8");
  if (!(s.near > 0 && s.near < s.far)) throw ConfigError("render.near/far must satisfy 0 < near < far");
  return s;
}

GeneratorArch generator_arch(const Config& cfg) {
  GeneratorArch a;
  a.latent_dim = cfg.get_int("generator.latent_dim");
  a.plane_res = cfg.get_int("generator.plane_res");
  a.feature_dim = cfg.get_int("generator.feature_dim");
  a.decoder_width = cfg.get_int("generator.decoder_width");
  a.mapping_width = cfg.get_int("generator.mapping_width");
  if (a.latent_dim < 1 || a.plane_res < 2 || a.feature_dim < 1 || a.decoder_width < 1 || a.mapping_width < 1) {
    throw ConfigError("generator dimensions must be positive (plane_res >= 2)");
  }
  return a;
}

SourcePretrainConfig source_config(const Config& cfg) {
  SourcePretrainConfig c;
  c.steps = cfg.get_int("source.steps");
  c.lr = cfg.get_double("source.lr");
  c.batch = cfg.get_int("source.batch");
  c.rays_per_image = cfg.get_int("source.rays_per_image");
  c.depth_weight = cfg.get_double("source.depth_weight");
  c.seed = cfg.get_seed("source.seed");
  if (c.steps < 0 || !(c.lr > 0) || c.batch < 1 || c.rays_per_image < 1) throw ConfigError("invalid source.* values");
  return c;
}

DiffusionArch diffusion_arch(const Config& cfg) {
  DiffusionArch a;
  a.schedule_steps = cfg.get_int("diffusion.schedule_steps");
  a.beta_start = cfg.get_double("diffusion.beta_start");
  a.beta_end = cfg.get_double("diffusion.beta_end");
  a.denoiser.width = cfg.get_int("diffusion.width");
  a.denoiser.levels = cfg.get_int("diffusion.levels");
  a.denoiser.cond_dim = cfg.get_int("diffusion.cond_dim");
  a.denoiser.embed_dim = cfg.get_int("diffusion.embed_dim");
  a.encoder.cond_dim = a.denoiser.cond_dim;
  a.encoder.image_resolution = cfg.get_int("render.resolution");
  a.encoder.image_width = cfg.get_int("diffusion.image_width");
  make_schedule(a.schedule_steps, a.beta_start, a.beta_end);  // validates
  if (a.denoiser.width < 8 || a.denoiser.width % 8 != 0) throw ConfigError("diffusion.width must be a multiple of 8");
  if (a.denoiser.levels < 1 || (cfg.get_int("render.resolution") >> (a.denoiser.levels - 1)) < 2) {
    throw ConfigError("diffusion.levels too deep for render.resolution");
  }
  return a;
}

DiffusionPretrainConfig diffusion_config(const Config& cfg) {
  DiffusionPretrainConfig c;
  c.steps = cfg.get_int("diffusion.steps");
  c.lr = cfg.get_double("diffusion.lr");
  c.batch = cfg.get_int("diffusion.batch");
  c.cond_dropout = cfg.get_double("diffusion.cond_dropout");
  c.depth_dropout = cfg.get_double("diffusion.depth_dropout");
  c.image_cond_fraction = cfg.get_double("diffusion.image_cond_fraction");
  c.align_weight = cfg.get_double("diffusion.align_weight");
  c.seed = cfg.get_seed("diffusion.seed");
  auto unit = [](double v) { return v >= 0 && v <= 1; };
  if (c.steps < 0 || !(c.lr > 0) || c.batch < 1 || !unit(c.cond_dropout) || !unit(c.depth_dropout) ||
      !unit(c.image_cond_fraction) || c.align_weight < 0) {
    throw ConfigError("invalid diffusion.* values");
  }
  return c;
}

TargetPoseBias target_bias(const Config& cfg) {
  TargetPoseBias b;
  b.frontal_fraction = cfg.get_double("diffusion.frontal_fraction");
  b.yaw_std = cfg.get_double("diffusion.frontal_yaw_std");
  b.pitch_std = cfg.get_double("diffusion.frontal_pitch_std");
  if (!(b.frontal_fraction >= 0 && b.frontal_fraction <= 1) || b.yaw_std < 0 || b.pitch_std < 0) {
    throw ConfigError("invalid diffusion.frontal_* values");
  }
  return b;
}

PatchEncoderArch patch_arch(const Config& cfg) {
  PatchEncoderArch a;
  a.dim1 = cfg.get_int("patch.dim1");
  a.dim2 = cfg.get_int("patch.dim2");
  a.dim3 = cfg.get_int("patch.dim3");
  if (a.dim1 < 1 || a.dim2 < 1 || a.dim3 < 1) throw ConfigError("patch dimensions must be positive");
  return a;
}

PoseOracleTrainConfig oracle_config(const Config& cfg) {
  PoseOracleTrainConfig c;
  c.dataset = cfg.get_int("oracle.dataset");
  c.steps = cfg.get_int("oracle.steps");
  c.batch = cfg.get_int("oracle.batch");
  c.lr = cfg.get_double("oracle.lr");
  c.gate_deg = cfg.get_double("oracle.gate_deg");
  c.gate_samples = cfg.get_int("oracle.gate_samples");
  c.seed = cfg.get_seed("oracle.seed");
  if (c.dataset < 2 || c.steps < 0 || c.batch < 1 || !(c.lr > 0) || c.gate_samples < 1) {
    throw ConfigError("invalid oracle.* values");
  }
  return c;
}

AdaptConfig adapt_config(const Config& cfg) {
  AdaptConfig a;
  a.lambda = cfg.get_double("adapt.lambda");
  a.lr = cfg.get_double("adapt.lr");
  a.iters = cfg.get_int("adapt.iters");
  a.seed = cfg.get_seed("adapt.seed");
  a.use_depth = cfg.get_bool("adapt.use_depth");
  a.use_mask = cfg.get_bool("adapt.use_mask");
  a.use_hsc = cfg.get_bool("adapt.use_hsc");
  a.mask_tau = cfg.get_double("adapt.mask_tau");
  a.hsc_temperature = cfg.get_double("adapt.hsc_temperature");
  const auto weighting = cfg.get_string("adapt.weighting");
  if (weighting == "uniform") {
    a.weighting = Weighting::Uniform;
  } else if (weighting == "one_minus_alpha_bar") {
    a.weighting = Weighting::OneMinusAlphaBar;
  } else {
    throw ConfigError("adapt.weighting must be uniform or one_minus_alpha_bar");
  }
  const auto scale = cfg.get_string("adapt.guidance_scale");
  if (scale != "none") {
    double s;
    if (!parse_double(scale, s) || s < 0) throw ConfigError("adapt.guidance_scale must be 'none' or a number >= 0");
    a.guidance_scale = s;
  }
  a.checkpoint_every = cfg.get_int("adapt.checkpoint_every");
  const auto opt = cfg.get_string("adapt.optimizer");
  if (opt == "momentum_sgd") {
    a.optimizer.kind = OptimizerKind::MomentumSgd;
  } else if (opt == "adam") {
    a.optimizer.kind = OptimizerKind::Adam;
  } else {
    throw ConfigError("adapt.optimizer must be momentum_sgd or adam");
  }
  a.optimizer.momentum = cfg.get_double("adapt.momentum");
  a.poses = camera_config(cfg);
  a.render = render_config(cfg);
  a.validate();
  return a;
}

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    double v;
    if (!parse_double(trim(item), v)) throw ConfigError("expected a comma-separated number list, got '" + text + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty number list");
  return out;
}

}  // namespace adapt3d
