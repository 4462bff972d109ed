#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "v2m/core/tensor.hpp"

// MVTENSR1 container:
//   bytes 0..7   "MVTENSR1"
//   bytes 8..15  header length L, uint64 little-endian
//   next L bytes UTF-8 JSON header, at least {"dtype": "f32"|"f64", "shape": [...]}
//   payload      raw little-endian values, row-major
// A bundle is the same container whose header also lists named sub-tensors
// ("tensors": [{"name", "shape", "offset"}]) packed in the payload.
namespace v2m::io {

enum class DType { kF32, kF64 };

inline constexpr char kMagic[9] = "MVTENSR1";

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype = DType::kF32,
                                        const nlohmann::json& extra = nlohmann::json::object());
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes, nlohmann::json* header_out = nullptr);

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::kF32);
Tensor read_tensor(const std::filesystem::path& path);

struct Bundle {
  std::map<std::string, Tensor> tensors;
  nlohmann::json meta = nlohmann::json::object();
};

void write_bundle(const std::filesystem::path& path, const Bundle& b, DType dtype = DType::kF32);
Bundle read_bundle(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace v2m::io
