#pragma once

// E3DC standalone container:
//   "E3DC" | version (1 byte) | u32 LE length | VolumeMeta as JSON | frame stream

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "echoslice/codec.hpp"
#include "echoslice/volume.hpp"

namespace echoslice {

inline constexpr std::uint8_t kContainerVersion = 1;

struct Container {
  VolumeMeta meta;
  RawStream stream;
};

bool has_container_magic(std::span<const std::uint8_t> bytes) noexcept;

std::vector<std::uint8_t> write_container(const VolumeMeta& meta, const RawStream& stream);
Container read_container(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_container(const VolumeSequence& volume);
VolumeSequence decode_container(std::span<const std::uint8_t> bytes,
                                const DecodeOptions& options = {});

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and rename, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace echoslice
