#pragma once

#include "ffts/tensor.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

namespace ffts::harness {

struct CheckpointMeta {
  std::string config_hash;
  int round_index = -1;
  /// Serialized ModelConfig; null when unknown (e.g. in-memory round trips).
  nlohmann::json model_config;
};

/// Layout: 8-byte magic "FFTSCKPT", u64 little-endian manifest length, the
/// JSON manifest, then every tensor as little-endian IEEE-754 float64 in
/// manifest order.
std::string encode_checkpoint(const ParameterSet& params, const CheckpointMeta& meta);
std::pair<ParameterSet, CheckpointMeta> decode_checkpoint(std::string_view bytes);

void save_checkpoint(const ParameterSet& params, const CheckpointMeta& meta,
                     const std::filesystem::path& path);
/// When `expected_hash` is set, a checkpoint carrying a different config hash
/// is rejected.
std::pair<ParameterSet, CheckpointMeta> load_checkpoint(
    const std::filesystem::path& path, std::optional<std::string> expected_hash = std::nullopt);

}  // namespace ffts::harness
