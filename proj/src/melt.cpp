// SPDX-License-Identifier: Apache-2.0
#include "motioneditor/melt.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace motioneditor {

namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const std::string& in, size_t& pos) {
  if (pos + 4 > in.size()) throw FormatError("MELT: truncated header");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace

std::string encode_melt(const Tensor& t) {
  std::string out = "MELT";
  out.push_back(static_cast<char>(kMeltVersion));
  out.push_back(static_cast<char>(kMeltDtypeF32));
  put_u32(out, static_cast<uint32_t>(t.rank()));
  for (int64_t e : t.shape()) put_u32(out, static_cast<uint32_t>(e));
  for (float v : t.data()) put_u32(out, std::bit_cast<uint32_t>(v));
  return out;
}

Tensor decode_melt(const std::string& bytes) {
  if (bytes.size() < 10 || bytes.compare(0, 4, "MELT") != 0) throw FormatError("MELT: bad magic");
  if (static_cast<uint8_t>(bytes[4]) != kMeltVersion) {
    throw FormatError("MELT: unsupported version " + std::to_string(static_cast<uint8_t>(bytes[4])));
  }
  if (static_cast<uint8_t>(bytes[5]) != kMeltDtypeF32) {
    throw FormatError("MELT: unsupported dtype code " + std::to_string(static_cast<uint8_t>(bytes[5])));
  }
  size_t pos = 6;
  const uint32_t rank = get_u32(bytes, pos);
  if (rank > 16) throw FormatError("MELT: implausible rank " + std::to_string(rank));
  Shape shape;
  for (uint32_t i = 0; i < rank; ++i) {
    const uint32_t e = get_u32(bytes, pos);
    if (e == 0) throw FormatError("MELT: zero extent");
    shape.push_back(e);
  }
  const int64_t n = shape_numel(shape);
  if (bytes.size() - pos != static_cast<size_t>(n) * 4) {
    throw FormatError("MELT: payload is " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                      std::to_string(n * 4));
  }
  std::vector<float> data(static_cast<size_t>(n));
  for (auto& v : data) v = std::bit_cast<float>(get_u32(bytes, pos));
  return Tensor(std::move(shape), std::move(data));
}

void write_melt(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_melt(t);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Tensor read_melt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_melt(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace motioneditor
