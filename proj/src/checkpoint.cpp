#include "rnc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "rnc/errors.hpp"

namespace rnc {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFormat = "rnc-checkpoint-v1";

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
    return r;
  }
}

}  // namespace

fs::path manifest_path(const fs::path& stem) {
  auto p = stem;
  p += ".json";
  return p;
}

fs::path blob_path(const fs::path& stem) {
  auto p = stem;
  p += ".bin";
  return p;
}

bool checkpoint_exists(const fs::path& stem) {
  return fs::exists(manifest_path(stem)) && fs::exists(blob_path(stem));
}

void save_checkpoint(const fs::path& stem, const ParameterSet& params, const nlohmann::json& meta) {
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["dtype"] = "float64-le";
  manifest["blob"] = blob_path(stem).filename().string();
  manifest["meta"] = meta;
  auto& entries = manifest["params"] = nlohmann::json::array();

  std::ofstream blob(blob_path(stem), std::ios::binary | std::ios::trunc);
  if (!blob) throw DataError("cannot write " + blob_path(stem).string());
  std::uint64_t offset = 0;
  for (const auto& p : params.items()) {
    entries.push_back({{"name", p.name},
                       {"shape", p.tensor.shape()},
                       {"trainable", p.trainable},
                       {"offset", offset},
                       {"count", p.tensor.size()}});
    for (double v : p.tensor.values()) {
      auto bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
      blob.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
    offset += p.tensor.size() * sizeof(double);
  }
  if (!blob) throw DataError("short write to " + blob_path(stem).string());

  std::ofstream out(manifest_path(stem), std::ios::trunc);
  if (!out) throw DataError("cannot write " + manifest_path(stem).string());
  out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& stem) {
  std::ifstream in(manifest_path(stem));
  if (!in) throw MissingArtifactError("checkpoint manifest not found: " + manifest_path(stem).string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint manifest " + manifest_path(stem).string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat) {
    throw DataError("unsupported checkpoint format in " + manifest_path(stem).string());
  }
  auto blob_file = stem.has_parent_path()
                       ? stem.parent_path() / manifest.at("blob").get<std::string>()
                       : fs::path(manifest.at("blob").get<std::string>());
  std::ifstream blob(blob_file, std::ios::binary);
  if (!blob) throw MissingArtifactError("checkpoint blob not found: " + blob_file.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());

  Checkpoint ck;
  ck.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& e : manifest.at("params")) {
    auto shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto count = e.at("count").get<std::uint64_t>();
    if (count != shape_size(shape) || offset + count * sizeof(double) > bytes.size()) {
      throw DataError("checkpoint entry '" + e.at("name").get<std::string>() + "' is inconsistent");
    }
    std::vector<double> values(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, bytes.data() + offset + i * sizeof(double), sizeof bits);
      values[i] = std::bit_cast<double>(to_little_endian(bits));
    }
    const bool trainable = e.value("trainable", true);
    ck.params.add(e.at("name").get<std::string>(), Tensor::from(std::move(shape), std::move(values)),
                  trainable);
  }
  return ck;
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  auto h = seed;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t hash_parameters(const ParameterSet& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params.items()) {
    h = fnv1a(p.name.data(), p.name.size(), h);
    for (auto e : p.tensor.shape()) {
      std::uint64_t v = e;
      h = fnv1a(&v, sizeof v, h);
    }
    auto vals = p.tensor.values();
    h = fnv1a(vals.data(), vals.size() * sizeof(double), h);
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace rnc
