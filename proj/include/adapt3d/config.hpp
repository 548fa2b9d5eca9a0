#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "adapt3d/adaptation.hpp"
#include "adapt3d/camera.hpp"
#include "adapt3d/consistency.hpp"
#include "adapt3d/generator.hpp"
#include "adapt3d/guidance_training.hpp"
#include "adapt3d/metrics.hpp"
#include "adapt3d/source_training.hpp"

namespace adapt3d {

/// Flat "section.key = value" configuration. Every key has a default and a
/// type; setting an unknown key or an unparsable value is a ConfigError.
class Config {
 public:
  enum class Type { Int, Double, Bool, String };

  struct Entry {
    Type type;
    std::string value;
    std::string help;
  };

  Config();

  void set(const std::string& key, const std::string& value);

  /// "key = value" lines; blank lines and lines starting with '#' are skipped.
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& origin = "<text>");

  int64_t get_int(const std::string& key) const;
  uint64_t get_seed(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  /// Sorted "key = value" lines; loading them back reproduces this config.
  std::string resolved() const;

  /// 16 hex digits (FNV-1a of resolved()).
  std::string hash() const;

 private:
  const Entry& entry(const std::string& key) const;

  std::map<std::string, Entry> entries_;
};

PoseDistribution camera_config(const Config& cfg);
RenderSettings render_config(const Config& cfg);
GeneratorArch generator_arch(const Config& cfg);
SourcePretrainConfig source_config(const Config& cfg);
DiffusionArch diffusion_arch(const Config& cfg);
DiffusionPretrainConfig diffusion_config(const Config& cfg);
TargetPoseBias target_bias(const Config& cfg);
PatchEncoderArch patch_arch(const Config& cfg);
PoseOracleTrainConfig oracle_config(const Config& cfg);
/// Validated adaptation settings (render and camera sections included).
AdaptConfig adapt_config(const Config& cfg);

/// Comma-separated numbers, e.g. "-0.5,0,0.5".
std::vector<double> parse_number_list(const std::string& text);

}  // namespace adapt3d
