#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "echoslice/resampler.hpp"

namespace echoslice {

/// 8-bit grayscale PNG, default zlib settings (deterministic output).
std::vector<std::uint8_t> encode_png(const Image8& image);
/// Accepts any PNG libpng can read; color input is converted to gray.
Image8 decode_png(std::span<const std::uint8_t> bytes);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace echoslice
