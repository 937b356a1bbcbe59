#include "echoslice/container.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iterator>
#include <string>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "echoslice/error.hpp"

namespace echoslice {
namespace {

constexpr std::uint8_t kMagic[4] = {'E', '3', 'D', 'C'};
constexpr std::size_t kPreamble = 4 + 1 + 4;

}  // namespace

bool has_container_magic(std::span<const std::uint8_t> bytes) noexcept {
  return bytes.size() >= 4 && std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin());
}

std::vector<std::uint8_t> write_container(const VolumeMeta& meta, const RawStream& stream) {
  const std::string json = nlohmann::json(meta).dump();
  std::vector<std::uint8_t> out;
  out.reserve(kPreamble + json.size() + stream.bytes.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(kContainerVersion);
  const auto len = static_cast<std::uint32_t>(json.size());
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((len >> s) & 0xFF));
  out.insert(out.end(), json.begin(), json.end());
  out.insert(out.end(), stream.bytes.begin(), stream.bytes.end());
  return out;
}

Container read_container(std::span<const std::uint8_t> bytes) {
  if (!has_container_magic(bytes)) throw input_error("not an E3DC container");
  if (bytes.size() < kPreamble) throw input_error("truncated E3DC header");
  if (bytes[4] != kContainerVersion) {
    throw input_error("unsupported E3DC version " + std::to_string(bytes[4]));
  }
  std::uint32_t len = 0;
  for (int b = 0; b < 4; ++b) len |= static_cast<std::uint32_t>(bytes[5 + b]) << (8 * b);
  if (len > bytes.size() - kPreamble) throw input_error("truncated E3DC metadata");

  Container c;
  try {
    const auto first = bytes.begin() + kPreamble;
    c.meta = nlohmann::json::parse(first, first + len).get<VolumeMeta>();
  } catch (const nlohmann::json::exception& e) {
    throw input_error(std::string("invalid E3DC metadata: ") + e.what());
  }
  c.meta.validate();
  c.stream.source = StreamSource::standalone_container;
  c.stream.bytes.assign(bytes.begin() + kPreamble + len, bytes.end());
  return c;
}

std::vector<std::uint8_t> encode_container(const VolumeSequence& volume) {
  return write_container(volume.meta(), encode_volume(volume));
}

VolumeSequence decode_container(std::span<const std::uint8_t> bytes,
                                const DecodeOptions& options) {
  const Container c = read_container(bytes);
  return decode_volume(c.stream, c.meta, options);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp" + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::internal, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::internal, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace echoslice
