#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

#include "adapt3d/consistency.hpp"
#include "adapt3d/generator.hpp"
#include "adapt3d/guidance.hpp"

namespace adapt3d {

/// On-disk layout, all integers little-endian:
///
///   8 bytes   magic "A3DCKPT\0"
///   u64       manifest length M
///   M bytes   manifest (UTF-8 JSON): format_version, kind, meta, arrays
///             [{name, shape, offset, count}], payload_bytes, payload_crc32
///   P bytes   payload: every array as float32, concatenated in manifest order
///   u32       CRC-32 of all preceding bytes
///
/// Array names are stable: "<module>/<parameter path>" for weights,
/// "optim/<parameter>/<moment>" for optimizer state.
inline constexpr int kCheckpointFormatVersion = 1;

struct Archive {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> arrays;

  void put(const std::string& name, const torch::Tensor& value);
  bool has(const std::string& name) const;
  /// Throws IntegrityError if absent.
  const torch::Tensor& get(const std::string& name) const;
};

/// Writes to a temporary sibling, then renames over `path`.
void write_archive(const std::filesystem::path& path, const Archive& archive);

/// Throws IntegrityError on a missing, truncated or corrupt file.
Archive read_archive(const std::filesystem::path& path);

void put_module(Archive& archive, const std::string& prefix, const torch::nn::Module& module);

/// Copies "<prefix>/<name>" arrays into the module's parameters and buffers,
/// checking every shape. Keeps the module's dtype.
void load_module(const Archive& archive, const std::string& prefix, torch::nn::Module& module);

/// Throws IntegrityError naming both values when the stored arch differs.
void require_kind(const Archive& archive, const std::string& kind);

nlohmann::json to_json(const GeneratorArch& arch);
GeneratorArch generator_arch_from_json(const nlohmann::json& j);

void save_generator(const std::filesystem::path& path, const Generator& generator);

/// Accepts a "generator" checkpoint or an "adapt_state" checkpoint (returns
/// its target generator). When `expected` is given, the stored architecture
/// must match it.
Generator load_generator(const std::filesystem::path& path, const GeneratorArch* expected = nullptr);

struct DiffusionArch;

/// Everything pretrain-diffusion produces: schedule, denoiser, both
/// condition encoders and the frozen patch encoder.
struct GuidanceBundle {
  GuidanceModel model;
  PatchEncoder patch_encoder{nullptr};
};

void save_guidance(const std::filesystem::path& path, const GuidanceBundle& bundle, const DiffusionArch& arch);
GuidanceBundle load_guidance(const std::filesystem::path& path, DiffusionArch* arch_out = nullptr);

/// Checks two architecture descriptions field by field and throws an
/// IntegrityError listing the mismatches.
void require_same_arch(const nlohmann::json& stored, const nlohmann::json& expected, const std::string& what);

}  // namespace adapt3d
