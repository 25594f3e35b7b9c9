#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <string_view>

#include "bimanual/nn.hpp"

namespace bimanual {

// Layout, little-endian:
//   "BMCK" | u32 version | u64 header bytes | header JSON (UTF-8)
//   u32 block count | per block: u32 name bytes, name, u32 ndim, u64 extent x ndim, f32 x numel
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const nlohmann::json& header, const nn::Module& module);

/// Copies stored blocks into the module's parameters (matched by name and shape) and
/// returns the header. Missing, extra or mis-shaped blocks throw std::runtime_error.
nlohmann::json deserialize_checkpoint(std::string_view bytes, const nn::Module& module);
nlohmann::json checkpoint_header(std::string_view bytes);

void save_checkpoint(const std::string& path, const nlohmann::json& header, const nn::Module& module);
nlohmann::json load_checkpoint(const std::string& path, const nn::Module& module);
nlohmann::json read_checkpoint_header(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

std::uint64_t fnv1a64(std::string_view bytes);
/// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace bimanual
