#include "adapt3d/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "adapt3d/errors.hpp"
#include "adapt3d/guidance_training.hpp"

namespace adapt3d {
namespace {

constexpr char kMagic[8] = {'A', '3', 'D', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

uint32_t crc32_of(const char* data, size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<size_t>(size, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<uint32_t>(crc);
}

template <typename T>
void append_le(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

template <typename T>
T read_le(const std::string& in, size_t offset) {
  T value;
  std::memcpy(&value, in.data() + offset, sizeof(T));
  return value;
}

}  // namespace

void Archive::put(const std::string& name, const torch::Tensor& value) {
  for (auto& item : arrays) {
    if (item.first == name) {
      item.second = value;
      return;
    }
  }
  arrays.emplace_back(name, value);
}

bool Archive::has(const std::string& name) const {
  for (const auto& item : arrays)
    if (item.first == name) return true;
  return false;
}

const torch::Tensor& Archive::get(const std::string& name) const {
  for (const auto& item : arrays)
    if (item.first == name) return item.second;
  throw IntegrityError("checkpoint is missing array '" + name + "'");
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  std::string payload;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, tensor] : archive.arrays) {
    auto flat = tensor.detach().to(torch::kCPU).to(torch::kFloat).contiguous();
    entries.push_back({{"name", name},
                       {"shape", std::vector<int64_t>(tensor.sizes().begin(), tensor.sizes().end())},
                       {"offset", payload.size()},
                       {"count", flat.numel()}});
    payload.append(reinterpret_cast<const char*>(flat.data_ptr<float>()), flat.numel() * sizeof(float));
  }
  nlohmann::json manifest = {{"format_version", kCheckpointFormatVersion},
                             {"kind", archive.kind},
                             {"meta", archive.meta},
                             {"arrays", entries},
                             {"payload_bytes", payload.size()},
                             {"payload_crc32", crc32_of(payload.data(), payload.size())}};
  const auto text = manifest.dump();

  std::string blob(kMagic, sizeof(kMagic));
  append_le<uint64_t>(blob, text.size());
  blob += text;
  blob += payload;
  append_le<uint32_t>(blob, crc32_of(blob.data(), blob.size()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IntegrityError("cannot open " + tmp.string() + " for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IntegrityError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open checkpoint " + path.string());
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto where = " (" + path.string() + ")";

  constexpr size_t kHeader = sizeof(kMagic) + sizeof(uint64_t);
  if (blob.size() < kHeader + sizeof(uint32_t) || std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IntegrityError("not a checkpoint or truncated header" + where);
  }
  const auto body = blob.size() - sizeof(uint32_t);
  if (read_le<uint32_t>(blob, body) != crc32_of(blob.data(), body)) {
    throw IntegrityError("checksum mismatch: file is truncated or corrupt" + where);
  }
  const auto manifest_len = read_le<uint64_t>(blob, sizeof(kMagic));
  if (manifest_len > body - kHeader) throw IntegrityError("manifest length exceeds file size" + where);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(blob.substr(kHeader, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("unreadable manifest: ") + e.what() + where);
  }
  try {
    if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw IntegrityError("unsupported checkpoint format version " + manifest.at("format_version").dump() + where);
    }
    const size_t payload_start = kHeader + manifest_len;
    const auto payload_bytes = manifest.at("payload_bytes").get<size_t>();
    if (payload_start + payload_bytes != body) throw IntegrityError("payload size mismatch" + where);
    if (manifest.at("payload_crc32").get<uint32_t>() != crc32_of(blob.data() + payload_start, payload_bytes)) {
      throw IntegrityError("payload checksum mismatch" + where);
    }

    Archive archive;
    archive.kind = manifest.at("kind").get<std::string>();
    archive.meta = manifest.at("meta");
    for (const auto& entry : manifest.at("arrays")) {
      const auto shape = entry.at("shape").get<std::vector<int64_t>>();
      const auto offset = entry.at("offset").get<size_t>();
      const auto count = entry.at("count").get<int64_t>();
      int64_t expected = 1;
      for (auto s : shape) expected *= s;
      if (expected != count || offset + count * sizeof(float) > payload_bytes) {
        throw IntegrityError("array '" + entry.at("name").get<std::string>() + "' has an inconsistent extent" + where);
      }
      auto tensor = torch::empty(shape, torch::kFloat);
      std::memcpy(tensor.data_ptr<float>(), blob.data() + payload_start + offset, count * sizeof(float));
      archive.arrays.emplace_back(entry.at("name").get<std::string>(), tensor);
    }
    return archive;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed manifest: ") + e.what() + where);
  }
}

void put_module(Archive& archive, const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& item : module.named_parameters()) archive.put(prefix + "/" + item.key(), item.value());
  for (const auto& item : module.named_buffers()) archive.put(prefix + "/" + item.key(), item.value());
}

void load_module(const Archive& archive, const std::string& prefix, torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  auto copy_into = [&](const std::string& key, torch::Tensor& dst) {
    const auto& src = archive.get(prefix + "/" + key);
    if (src.sizes() != dst.sizes()) {
      throw IntegrityError("array '" + prefix + "/" + key + "' has shape " + c10::str(src.sizes()) + ", expected " +
                           c10::str(dst.sizes()));
    }
    dst.copy_(src.to(dst.scalar_type()));
  };
  for (auto& item : module.named_parameters()) copy_into(item.key(), item.value());
  for (auto& item : module.named_buffers()) copy_into(item.key(), item.value());
}

void require_kind(const Archive& archive, const std::string& kind) {
  if (archive.kind != kind) {
    throw IntegrityError("expected a '" + kind + "' checkpoint, found '" + archive.kind + "'");
  }
}

void require_same_arch(const nlohmann::json& stored, const nlohmann::json& expected, const std::string& what) {
  std::string diffs;
  for (auto it = expected.begin(); it != expected.end(); ++it) {
    if (!stored.contains(it.key())) {
      diffs += " " + it.key() + " missing;";
    } else if (stored.at(it.key()) != it.value()) {
      diffs += " " + it.key() + " stored=" + stored.at(it.key()).dump() + " expected=" + it.value().dump() + ";";
    }
  }
  if (!diffs.empty()) throw IntegrityError(what + " architecture mismatch:" + diffs);
}

nlohmann::json to_json(const GeneratorArch& arch) {
  return {{"latent_dim", arch.latent_dim},
          {"plane_res", arch.plane_res},
          {"feature_dim", arch.feature_dim},
          {"decoder_width", arch.decoder_width},
          {"mapping_width", arch.mapping_width}};
}

GeneratorArch generator_arch_from_json(const nlohmann::json& j) {
  try {
    GeneratorArch arch;
    arch.latent_dim = j.at("latent_dim").get<int64_t>();
    arch.plane_res = j.at("plane_res").get<int64_t>();
    arch.feature_dim = j.at("feature_dim").get<int64_t>();
    arch.decoder_width = j.at("decoder_width").get<int64_t>();
    arch.mapping_width = j.at("mapping_width").get<int64_t>();
    return arch;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed generator architecture: ") + e.what());
  }
}

void save_generator(const std::filesystem::path& path, const Generator& generator) {
  Archive archive;
  archive.kind = "generator";
  archive.meta["arch"] = to_json(generator->arch());
  put_module(archive, "generator", *generator);
  write_archive(path, archive);
}

Generator load_generator(const std::filesystem::path& path, const GeneratorArch* expected) {
  const auto archive = read_archive(path);
  std::string prefix;
  nlohmann::json arch_json;
  if (archive.kind == "generator") {
    prefix = "generator";
    arch_json = archive.meta.value("arch", nlohmann::json::object());
  } else if (archive.kind == "adapt_state") {
    prefix = "target";
    arch_json = archive.meta.value("arch", nlohmann::json::object());
  } else {
    throw IntegrityError("expected a generator or adapt_state checkpoint, found '" + archive.kind + "'");
  }
  if (expected) require_same_arch(arch_json, to_json(*expected), "generator");
  Generator generator(generator_arch_from_json(arch_json));
  load_module(archive, prefix, *generator);
  return generator;
}

namespace {

nlohmann::json to_json(const DiffusionArch& arch) {
  return {{"schedule_steps", arch.schedule_steps},
          {"beta_start", arch.beta_start},
          {"beta_end", arch.beta_end},
          {"denoiser_width", arch.denoiser.width},
          {"denoiser_levels", arch.denoiser.levels},
          {"cond_dim", arch.denoiser.cond_dim},
          {"embed_dim", arch.denoiser.embed_dim},
          {"image_resolution", arch.encoder.image_resolution},
          {"image_width", arch.encoder.image_width}};
}

DiffusionArch diffusion_arch_from_json(const nlohmann::json& j) {
  try {
    DiffusionArch arch;
    arch.schedule_steps = j.at("schedule_steps").get<int64_t>();
    arch.beta_start = j.at("beta_start").get<double>();
    arch.beta_end = j.at("beta_end").get<double>();
    arch.denoiser.width = j.at("denoiser_width").get<int64_t>();
    arch.denoiser.levels = j.at("denoiser_levels").get<int64_t>();
    arch.denoiser.cond_dim = j.at("cond_dim").get<int64_t>();
    arch.denoiser.embed_dim = j.at("embed_dim").get<int64_t>();
    arch.encoder.cond_dim = arch.denoiser.cond_dim;
    arch.encoder.image_resolution = j.at("image_resolution").get<int64_t>();
    arch.encoder.image_width = j.at("image_width").get<int64_t>();
    return arch;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed diffusion architecture: ") + e.what());
  }
}

}  // namespace

void save_guidance(const std::filesystem::path& path, const GuidanceBundle& bundle, const DiffusionArch& arch) {
  Archive archive;
  archive.kind = "guidance";
  archive.meta["arch"] = to_json(arch);
  archive.meta["patch_encoder"] = {{"dim1", bundle.patch_encoder->arch().dim1},
                                   {"dim2", bundle.patch_encoder->arch().dim2},
                                   {"dim3", bundle.patch_encoder->arch().dim3}};
  put_module(archive, "denoiser", *bundle.model.denoiser);
  put_module(archive, "text_encoder", *bundle.model.text_encoder);
  put_module(archive, "image_encoder", *bundle.model.image_encoder);
  put_module(archive, "patch_encoder", *bundle.patch_encoder);
  write_archive(path, archive);
}

GuidanceBundle load_guidance(const std::filesystem::path& path, DiffusionArch* arch_out) {
  const auto archive = read_archive(path);
  require_kind(archive, "guidance");
  const auto arch = diffusion_arch_from_json(archive.meta.value("arch", nlohmann::json::object()));
  PatchEncoderArch patch_arch;
  try {
    const auto& p = archive.meta.at("patch_encoder");
    patch_arch.dim1 = p.at("dim1").get<int64_t>();
    patch_arch.dim2 = p.at("dim2").get<int64_t>();
    patch_arch.dim3 = p.at("dim3").get<int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed patch encoder metadata: ") + e.what());
  }
  GuidanceBundle bundle;
  bundle.model.schedule = make_schedule(arch.schedule_steps, arch.beta_start, arch.beta_end);
  bundle.model.denoiser = Denoiser(arch.denoiser, arch.schedule_steps);
  bundle.model.text_encoder = TextEncoder(arch.encoder);
  bundle.model.image_encoder = ImageEncoder(arch.encoder);
  bundle.patch_encoder = PatchEncoder(patch_arch);
  load_module(archive, "denoiser", *bundle.model.denoiser);
  load_module(archive, "text_encoder", *bundle.model.text_encoder);
  load_module(archive, "image_encoder", *bundle.model.image_encoder);
  load_module(archive, "patch_encoder", *bundle.patch_encoder);
  for (torch::nn::Module* m : std::initializer_list<torch::nn::Module*>{
           bundle.model.denoiser.get(), bundle.model.text_encoder.get(), bundle.model.image_encoder.get(),
           bundle.patch_encoder.get()}) {
    for (auto& p : m->parameters()) p.set_requires_grad(false);
  }
  if (arch_out) *arch_out = arch;
  return bundle;
}

}  // namespace adapt3d
