#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "rnc/tensor.hpp"

namespace rnc {

/// On-disk layout: `<stem>.json` manifest listing every parameter's name,
/// shape, trainable flag, byte offset and element count, plus `<stem>.bin`
/// holding the values as little-endian float64 in manifest order. The
/// manifest also carries a free-form `meta` object for model configuration.
struct Checkpoint {
  ParameterSet params;
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& stem, const ParameterSet& params,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& stem);
bool checkpoint_exists(const std::filesystem::path& stem);

std::filesystem::path manifest_path(const std::filesystem::path& stem);
std::filesystem::path blob_path(const std::filesystem::path& stem);

/// FNV-1a over parameter names, shapes and value bits.
std::uint64_t hash_parameters(const ParameterSet& params);
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 1469598103934665603ULL);
std::string hex64(std::uint64_t v);

}  // namespace rnc
