#include "v2m/core/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "v2m/core/error.hpp"

namespace v2m::io {
namespace {

static_assert(std::endian::native == std::endian::little, "MVTENSR1 I/O assumes a little-endian host");

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

const char* dtype_name(DType d) { return d == DType::kF32 ? "f32" : "f64"; }

void append_values(std::vector<std::uint8_t>& out, std::span<const double> values, DType dtype) {
  const std::size_t width = dtype == DType::kF32 ? 4 : 8;
  const std::size_t start = out.size();
  out.resize(start + values.size() * width);
  std::uint8_t* dst = out.data() + start;
  for (double v : values) {
    if (dtype == DType::kF32) {
      const float f = static_cast<float>(v);
      std::memcpy(dst, &f, 4);
    } else {
      std::memcpy(dst, &v, 8);
    }
    dst += width;
  }
}

std::vector<std::uint8_t> assemble(const nlohmann::json& header, const std::vector<std::uint8_t>& payload) {
  const std::string h = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_u64(out, h.size());
  out.insert(out.end(), h.begin(), h.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

struct Parsed {
  nlohmann::json header;
  DType dtype;
  const std::uint8_t* payload;
  std::size_t payload_len;
};

Parsed parse(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw IoError("not an MVTENSR1 file (bad magic)");
  }
  const std::uint64_t hlen = get_u64(bytes.data() + 8);
  if (hlen > bytes.size() - 16) throw IoError("MVTENSR1 header length exceeds file size");
  Parsed p;
  try {
    p.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("MVTENSR1 header is not valid JSON: ") + e.what());
  }
  const std::string dt = p.header.value("dtype", "");
  if (dt == "f32") {
    p.dtype = DType::kF32;
  } else if (dt == "f64") {
    p.dtype = DType::kF64;
  } else {
    throw IoError("MVTENSR1 unsupported dtype '" + dt + "'");
  }
  p.payload = bytes.data() + 16 + hlen;
  p.payload_len = bytes.size() - 16 - hlen;
  return p;
}

std::vector<double> read_values(const Parsed& p, std::size_t offset, std::size_t count) {
  const std::size_t width = p.dtype == DType::kF32 ? 4 : 8;
  if ((offset + count) * width > p.payload_len) throw IoError("MVTENSR1 payload truncated");
  std::vector<double> out(count);
  const std::uint8_t* src = p.payload + offset * width;
  for (std::size_t i = 0; i < count; ++i, src += width) {
    if (p.dtype == DType::kF32) {
      float f;
      std::memcpy(&f, src, 4);
      out[i] = f;
    } else {
      std::memcpy(&out[i], src, 8);
    }
  }
  return out;
}

Shape shape_from_json(const nlohmann::json& j) {
  Shape s;
  for (const auto& d : j) s.push_back(d.get<std::size_t>());
  return s;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype, const nlohmann::json& extra) {
  nlohmann::json header = extra;
  header["dtype"] = dtype_name(dtype);
  header["shape"] = t.shape();
  std::vector<std::uint8_t> payload;
  append_values(payload, t.data(), dtype);
  return assemble(header, payload);
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes, nlohmann::json* header_out) {
  Parsed p = parse(bytes);
  Shape shape = shape_from_json(p.header.at("shape"));
  const std::size_t width = p.dtype == DType::kF32 ? 4 : 8;
  const std::size_t n = shape_numel(shape);
  if (n * width != p.payload_len) throw IoError("MVTENSR1 payload size does not match shape");
  if (header_out) *header_out = p.header;
  return Tensor(std::move(shape), read_values(p, 0, n));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::filesystem::path& path) {
  auto b = read_file(path);
  return {b.begin(), b.end()};
}

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  write_file(path, encode_tensor(t, dtype));
}

Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path)); }

void write_bundle(const std::filesystem::path& path, const Bundle& b, DType dtype) {
  nlohmann::json header;
  header["dtype"] = dtype_name(dtype);
  header["meta"] = b.meta;
  nlohmann::json list = nlohmann::json::array();
  std::vector<std::uint8_t> payload;
  std::size_t offset = 0;
  for (const auto& [name, t] : b.tensors) {
    list.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    append_values(payload, t.data(), dtype);
    offset += t.size();
  }
  header["tensors"] = list;
  header["shape"] = Shape{offset};
  write_file(path, assemble(header, payload));
}

Bundle read_bundle(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  Parsed p = parse(bytes);
  Bundle b;
  b.meta = p.header.value("meta", nlohmann::json::object());
  for (const auto& e : p.header.at("tensors")) {
    Shape shape = shape_from_json(e.at("shape"));
    const std::size_t n = shape_numel(shape);
    b.tensors.emplace(e.at("name").get<std::string>(),
                      Tensor(std::move(shape), read_values(p, e.at("offset").get<std::size_t>(), n)));
  }
  return b;
}

}  // namespace v2m::io
