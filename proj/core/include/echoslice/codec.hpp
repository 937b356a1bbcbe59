#pragma once

// Frame stream codec.
//
// Stream layout (all integers little-endian u32):
//
//   [0..4)            total stream size in bytes
//   [4..8)            frame count T
//   [8..8+4T)         byte offset of each frame
//   per frame:        32-byte checksum field, then a zlib stream holding
//                     I*J*K voxel intensities (rho fastest, then phi, theta)
//
// Our writer stores CRC-32 (IEEE) of the compressed payload in bytes 0..3 of
// the checksum field and zero-fills bytes 4..31.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "echoslice/volume.hpp"

namespace echoslice {

enum class StreamSource { dicom_private_tag, standalone_container };

struct RawStream {
  std::vector<std::uint8_t> bytes;
  StreamSource source = StreamSource::standalone_container;
};

struct FrameIndex {
  std::uint32_t total_size_bytes = 0;
  std::uint32_t frame_count = 0;
  std::vector<std::uint32_t> offsets;
};

enum class ChecksumPolicy { ignore, warn, strict };

inline constexpr std::size_t kChecksumFieldBytes = 32;
inline constexpr int kCompressionLevel = 6;

struct DecodeOptions {
  ChecksumPolicy policy = ChecksumPolicy::ignore;
  /// Order in which logical axes (0=rho, 1=phi, 2=theta) vary in the
  /// payload, fastest first. Vendor streams with a different layout are
  /// permuted into the canonical order on decode.
  std::array<int, 3> payload_axis_order{0, 1, 2};
  /// Receives checksum mismatches under ChecksumPolicy::warn.
  std::function<void(std::string_view)> on_warning;
  /// Worker threads for decode_volume; 0 or 1 decodes serially.
  unsigned threads = 1;
};

std::uint32_t crc32_ieee(std::span<const std::uint8_t> data);

FrameIndex parse_stream_header(const RawStream& stream);

/// Inflates one frame. `dims` supplies the expected voxel count and the
/// shape used when permuting a non-canonical payload axis order.
std::vector<std::uint8_t> decode_frame(const RawStream& stream, const FrameIndex& index,
                                       std::size_t frame_no, const VolumeDims& dims,
                                       const DecodeOptions& options = {});

/// Errors from individual frames are rethrown prefixed with "frame N: ".
VolumeSequence decode_volume(const RawStream& stream, const VolumeMeta& meta,
                             const DecodeOptions& options = {});

RawStream encode_volume(const VolumeSequence& volume);

}  // namespace echoslice
