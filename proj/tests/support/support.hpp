#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "echoslice/geometry.hpp"
#include "echoslice/volume.hpp"

namespace echoslice::testing {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  /// Inclusive on both ends.
  std::size_t index(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(engine_);
  }
  std::uint8_t byte() { return static_cast<std::uint8_t>(index(0, 255)); }
  bool coin() { return index(0, 1) == 1; }
  /// Uniform on the sphere.
  Vec3 unit_vector();
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

using VoxelFn = std::function<std::uint8_t(std::size_t i, std::size_t j, std::size_t k, std::size_t t)>;

VolumeSequence make_volume(const VolumeMeta& meta, const VoxelFn& fn);
VolumeMeta random_meta(Rng& rng, std::size_t max_spatial, std::size_t max_frames);
VolumeSequence random_volume(Rng& rng, std::size_t max_spatial, std::size_t max_frames);

/// Directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Shell-safe single-quoted string.
std::string shell_quote(const std::string& s);

}  // namespace echoslice::testing
