// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "motioneditor/tensor.hpp"

namespace motioneditor {

/// Malformed or unsupported file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor container layout (all integers little-endian):
///   "MELT" | version u8 | dtype u8 (0 = f32) | rank u32 | dims u32 x rank | f32 payload
inline constexpr uint8_t kMeltVersion = 1;
inline constexpr uint8_t kMeltDtypeF32 = 0;

std::string encode_melt(const Tensor& t);
Tensor decode_melt(const std::string& bytes);

void write_melt(const std::filesystem::path& path, const Tensor& t);
Tensor read_melt(const std::filesystem::path& path);

}  // namespace motioneditor
