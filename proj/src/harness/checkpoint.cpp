#include "ffts/harness/checkpoint.hpp"

#include "../bytes.hpp"

#include <fstream>
#include <iterator>
#include <set>

namespace ffts::harness {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "FFTSCKPT";
constexpr int kFormatVersion = 1;

}  // namespace

std::string encode_checkpoint(const ParameterSet& params, const CheckpointMeta& meta) {
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& e : params.entries()) {
    const std::size_t nbytes = e.tensor.numel() * 8;
    tensors.push_back({{"name", e.name}, {"shape", e.tensor.shape}, {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
  }
  json manifest = {{"format_version", kFormatVersion},
                   {"config_hash", meta.config_hash},
                   {"round_index", meta.round_index},
                   {"numeric_width", 8},
                   {"byte_order", "little"},
                   {"model_config", meta.model_config},
                   {"atm_names", params.atm_names()},
                   {"tensors", tensors},
                   {"payload_bytes", offset}};
  const std::string text = manifest.dump();
  std::string out(kMagic);
  detail::put_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& e : params.entries()) {
    for (double v : e.tensor.data) detail::put_f64(out, v);
  }
  return out;
}

std::pair<ParameterSet, CheckpointMeta> decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 8 || bytes.substr(0, kMagic.size()) != kMagic) {
    throw RuntimeError("checkpoint: bad magic");
  }
  const auto manifest_len = detail::get_le<std::uint64_t>(bytes, kMagic.size());
  const std::size_t manifest_start = kMagic.size() + 8;
  if (bytes.size() < manifest_start + manifest_len) {
    throw RuntimeError("checkpoint: truncated manifest (expected " +
                       std::to_string(manifest_start + manifest_len) + " bytes, got " +
                       std::to_string(bytes.size()) + ")");
  }
  json manifest;
  try {
    manifest = json::parse(bytes.substr(manifest_start, manifest_len));
  } catch (const json::exception& e) {
    throw RuntimeError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  const std::string_view payload = bytes.substr(manifest_start + manifest_len);
  const auto width = manifest.at("numeric_width").get<std::size_t>();
  if (width != 4 && width != 8) {
    throw RuntimeError("checkpoint: unsupported numeric width " + std::to_string(width));
  }
  const auto expected = manifest.at("payload_bytes").get<std::size_t>();
  if (payload.size() != expected) {
    throw RuntimeError("checkpoint: payload holds " + std::to_string(payload.size()) +
                       " bytes, manifest expects " + std::to_string(expected));
  }

  std::vector<std::string> atm_list = manifest.at("atm_names").get<std::vector<std::string>>();
  const std::set<std::string> atm(atm_list.begin(), atm_list.end());
  ParameterSet params;
  std::size_t cursor = 0;
  for (const auto& t : manifest.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    Tensor tensor(t.at("shape").get<std::vector<std::size_t>>());
    const auto offset = t.at("offset").get<std::size_t>();
    const auto nbytes = t.at("nbytes").get<std::size_t>();
    if (nbytes != tensor.numel() * width || offset != cursor || offset + nbytes > payload.size()) {
      throw RuntimeError("checkpoint: tensor '" + name + "' with shape " +
                         shape_string(tensor.shape) + " does not match its byte range");
    }
    for (std::size_t i = 0; i < tensor.numel(); ++i) {
      tensor.data[i] = width == 8 ? detail::get_f64(payload, offset + 8 * i)
                                  : detail::get_f32(payload, offset + 4 * i);
    }
    cursor += nbytes;
    params.add(name, std::move(tensor), atm.count(name) != 0);
  }
  if (cursor != payload.size()) throw RuntimeError("checkpoint: trailing payload bytes");
  for (const auto& n : atm_list) {
    if (!params.contains(n)) throw RuntimeError("checkpoint: atm name '" + n + "' has no tensor");
  }

  CheckpointMeta meta;
  meta.config_hash = manifest.value("config_hash", std::string{});
  meta.round_index = manifest.value("round_index", -1);
  meta.model_config = manifest.value("model_config", json());
  return {std::move(params), std::move(meta)};
}

void save_checkpoint(const ParameterSet& params, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(params, meta);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeError("failed writing " + path.string());
}

std::pair<ParameterSet, CheckpointMeta> load_checkpoint(const std::filesystem::path& path,
                                                        std::optional<std::string> expected_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto result = decode_checkpoint(bytes);
  if (expected_hash && result.second.config_hash != *expected_hash) {
    throw UsageError("checkpoint " + path.string() + " was written for config " +
                     result.second.config_hash + ", expected " + *expected_hash);
  }
  return result;
}

}  // namespace ffts::harness
