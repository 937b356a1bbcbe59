#include "echoslice/codec.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <limits>
#include <mutex>
#include <string>
#include <thread>

#include <zlib.h>

#include "echoslice/error.hpp"

namespace echoslice {
namespace {

constexpr std::size_t kMaxDeflateRatio = 1040;

std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t pos) {
  return static_cast<std::uint32_t>(bytes[pos]) |
         (static_cast<std::uint32_t>(bytes[pos + 1]) << 8) |
         (static_cast<std::uint32_t>(bytes[pos + 2]) << 16) |
         (static_cast<std::uint32_t>(bytes[pos + 3]) << 24);
}

void write_u32(std::vector<std::uint8_t>& out, std::size_t pos, std::uint32_t v) {
  out[pos] = static_cast<std::uint8_t>(v & 0xFF);
  out[pos + 1] = static_cast<std::uint8_t>((v >> 8) & 0xFF);
  out[pos + 2] = static_cast<std::uint8_t>((v >> 16) & 0xFF);
  out[pos + 3] = static_cast<std::uint8_t>((v >> 24) & 0xFF);
}

void validate_axis_order(const std::array<int, 3>& order) {
  std::array<bool, 3> seen{};
  for (int a : order) {
    if (a < 0 || a > 2 || seen[static_cast<std::size_t>(a)]) {
      throw input_error("invalid payload axis order");
    }
    seen[static_cast<std::size_t>(a)] = true;
  }
}

// Inflates exactly `expected` bytes; anything else is a size mismatch.
std::vector<std::uint8_t> inflate_exact(std::span<const std::uint8_t> payload,
                                        std::size_t expected) {
  std::vector<std::uint8_t> out(expected + 1);
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw Error(ErrorKind::internal, "zlib init failed");
  zs.next_in = const_cast<Bytef*>(payload.data());
  zs.avail_in = static_cast<uInt>(payload.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const std::size_t produced = zs.total_out;
  inflateEnd(&zs);

  if (rc == Z_STREAM_END) {
    if (produced != expected) throw input_error("frame size mismatch");
    out.resize(expected);
    return out;
  }
  if ((rc == Z_BUF_ERROR || rc == Z_OK) && zs.avail_out == 0) {
    throw input_error("frame size mismatch");
  }
  throw input_error("corrupt frame payload");
}

std::vector<std::uint8_t> to_canonical_order(const std::vector<std::uint8_t>& payload,
                                             const VolumeDims& dims,
                                             const std::array<int, 3>& order) {
  if (order == std::array<int, 3>{0, 1, 2}) return payload;
  const std::array<std::size_t, 3> n{dims.i, dims.j, dims.k};
  const std::size_t n0 = n[static_cast<std::size_t>(order[0])];
  const std::size_t n1 = n[static_cast<std::size_t>(order[1])];
  std::vector<std::uint8_t> out(payload.size());
  std::array<std::size_t, 3> idx{};
  for (idx[2] = 0; idx[2] < dims.k; ++idx[2]) {
    for (idx[1] = 0; idx[1] < dims.j; ++idx[1]) {
      for (idx[0] = 0; idx[0] < dims.i; ++idx[0]) {
        const std::size_t a0 = idx[static_cast<std::size_t>(order[0])];
        const std::size_t a1 = idx[static_cast<std::size_t>(order[1])];
        const std::size_t a2 = idx[static_cast<std::size_t>(order[2])];
        out[idx[0] + dims.i * (idx[1] + dims.j * idx[2])] = payload[a0 + n0 * (a1 + n1 * a2)];
      }
    }
  }
  return out;
}

}  // namespace

std::uint32_t crc32_ieee(std::span<const std::uint8_t> data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks so large buffers are safe.
  constexpr std::size_t chunk = std::numeric_limits<uInt>::max();
  for (std::size_t pos = 0; pos < data.size(); pos += chunk) {
    const std::size_t len = std::min(chunk, data.size() - pos);
    crc = crc32(crc, data.data() + pos, static_cast<uInt>(len));
  }
  return static_cast<std::uint32_t>(crc);
}

FrameIndex parse_stream_header(const RawStream& stream) {
  const std::span<const std::uint8_t> bytes(stream.bytes);
  if (bytes.size() < 8) throw input_error("stream too short for header");

  FrameIndex index;
  index.total_size_bytes = read_u32(bytes, 0);
  index.frame_count = read_u32(bytes, 4);
  if (index.total_size_bytes > bytes.size()) {
    throw input_error("declared total size exceeds stream length");
  }
  if (index.total_size_bytes < 8) throw input_error("corrupt header: total size too small");
  if (index.frame_count == 0) throw input_error("empty stream");

  const std::uint64_t header_end = 8 + 4ULL * index.frame_count;
  if (header_end > index.total_size_bytes) throw input_error("truncated offset table");

  index.offsets.reserve(index.frame_count);
  for (std::uint32_t f = 0; f < index.frame_count; ++f) {
    const std::uint32_t off = read_u32(bytes, 8 + 4 * static_cast<std::size_t>(f));
    if (off < header_end || off >= index.total_size_bytes ||
        (!index.offsets.empty() && off <= index.offsets.back())) {
      throw input_error("corrupt offset table");
    }
    index.offsets.push_back(off);
  }
  return index;
}

std::vector<std::uint8_t> decode_frame(const RawStream& stream, const FrameIndex& index,
                                       std::size_t frame_no, const VolumeDims& dims,
                                       const DecodeOptions& options) {
  if (frame_no >= index.offsets.size()) {
    throw input_error("frame " + std::to_string(frame_no) + " out of range (T=" +
                      std::to_string(index.offsets.size()) + ")");
  }
  if (index.total_size_bytes > stream.bytes.size()) {
    throw input_error("declared total size exceeds stream length");
  }
  validate_axis_order(options.payload_axis_order);

  const std::size_t begin = index.offsets[frame_no];
  const std::size_t end = frame_no + 1 < index.offsets.size() ? index.offsets[frame_no + 1]
                                                               : index.total_size_bytes;
  if (end <= begin || end - begin < kChecksumFieldBytes) throw input_error("truncated frame");

  const std::span<const std::uint8_t> frame =
      std::span<const std::uint8_t>(stream.bytes).subspan(begin, end - begin);
  const auto checksum = frame.first(kChecksumFieldBytes);
  const auto payload = frame.subspan(kChecksumFieldBytes);

  if (options.policy != ChecksumPolicy::ignore) {
    const std::uint32_t stored = read_u32(checksum, 0);
    if (stored != 0 && stored != crc32_ieee(payload)) {
      if (options.policy == ChecksumPolicy::strict) throw input_error("checksum failed");
      if (options.on_warning) {
        options.on_warning("frame " + std::to_string(frame_no) + ": checksum mismatch");
      }
    }
  }

  if (dims.frame_voxels() > payload.size() * kMaxDeflateRatio) throw input_error("frame size mismatch");
  auto voxels = inflate_exact(payload, dims.frame_voxels());
  return to_canonical_order(voxels, dims, options.payload_axis_order);
}

VolumeSequence decode_volume(const RawStream& stream, const VolumeMeta& meta,
                             const DecodeOptions& options) {
  meta.validate();
  const FrameIndex index = parse_stream_header(stream);
  if (index.frame_count != meta.dims.t) {
    throw input_error("frame count mismatch: stream has " + std::to_string(index.frame_count) +
                      ", metadata declares " + std::to_string(meta.dims.t));
  }

  const std::size_t per_frame = meta.dims.frame_voxels();
  // Deflate cannot expand more than ~1032:1, so this rejects absurd dims before allocating.
  if (meta.dims.total_voxels() > stream.bytes.size() * kMaxDeflateRatio) {
    throw input_error("stream too short for declared dims");
  }
  std::vector<std::uint8_t> voxels(meta.dims.total_voxels());

  auto decode_into = [&](std::size_t f) {
    try {
      auto frame = decode_frame(stream, index, f, meta.dims, options);
      std::copy(frame.begin(), frame.end(),
                voxels.begin() + static_cast<std::ptrdiff_t>(f * per_frame));
    } catch (const Error& e) {
      throw Error(e.kind(), "frame " + std::to_string(f) + ": " + e.what());
    }
  };

  const unsigned threads =
      std::min<unsigned>(std::max(1u, options.threads), static_cast<unsigned>(meta.dims.t));
  if (threads <= 1) {
    for (std::size_t f = 0; f < meta.dims.t; ++f) decode_into(f);
  } else {
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::size_t failed_frame = meta.dims.t;
    std::exception_ptr failure;
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t f = next++; f < meta.dims.t; f = next++) {
          try {
            decode_into(f);
          } catch (...) {
            std::lock_guard lock(mu);
            // Report the lowest failing frame so errors are schedule-independent.
            if (f < failed_frame) {
              failed_frame = f;
              failure = std::current_exception();
            }
          }
        }
      });
    }
    pool.clear();
    if (failure) std::rethrow_exception(failure);
  }
  return VolumeSequence(meta, std::move(voxels));
}

RawStream encode_volume(const VolumeSequence& volume) {
  const auto& dims = volume.dims();
  const std::size_t header = 8 + 4 * dims.t;

  std::vector<std::vector<std::uint8_t>> compressed(dims.t);
  std::uint64_t total = header;
  for (std::size_t f = 0; f < dims.t; ++f) {
    const auto frame = volume.frame(f);
    uLongf bound = compressBound(static_cast<uLong>(frame.size()));
    compressed[f].resize(bound);
    const int rc = compress2(compressed[f].data(), &bound, frame.data(),
                             static_cast<uLong>(frame.size()), kCompressionLevel);
    if (rc != Z_OK) throw Error(ErrorKind::internal, "zlib compression failed");
    compressed[f].resize(bound);
    total += kChecksumFieldBytes + bound;
  }
  if (total > std::numeric_limits<std::uint32_t>::max()) {
    throw input_error("volume too large for 32-bit stream offsets");
  }

  RawStream out;
  out.source = StreamSource::standalone_container;
  out.bytes.assign(static_cast<std::size_t>(total), 0);
  write_u32(out.bytes, 0, static_cast<std::uint32_t>(total));
  write_u32(out.bytes, 4, static_cast<std::uint32_t>(dims.t));

  std::size_t pos = header;
  for (std::size_t f = 0; f < dims.t; ++f) {
    write_u32(out.bytes, 8 + 4 * f, static_cast<std::uint32_t>(pos));
    write_u32(out.bytes, pos, crc32_ieee(compressed[f]));
    std::copy(compressed[f].begin(), compressed[f].end(),
              out.bytes.begin() + static_cast<std::ptrdiff_t>(pos + kChecksumFieldBytes));
    pos += kChecksumFieldBytes + compressed[f].size();
  }
  return out;
}

}  // namespace echoslice
