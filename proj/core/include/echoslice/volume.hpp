#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace echoslice {

/// Extent of the acquisition pyramid. Lengths in cm, angles in degrees.
struct BoundsMatrix {
  double rho_min = 0.0;
  double rho_max = 1.0;
  double phi_min = 0.0;
  double phi_max = 1.0;
  double theta_min = 0.0;
  double theta_max = 1.0;

  /// Throws if any axis is empty or rho_min is negative.
  void validate() const;

  friend bool operator==(const BoundsMatrix&, const BoundsMatrix&) = default;
};

/// Voxel counts along (rho, phi, theta) plus the number of frames.
struct VolumeDims {
  std::size_t i = 2;
  std::size_t j = 2;
  std::size_t k = 2;
  std::size_t t = 1;

  std::size_t frame_voxels() const noexcept { return i * j * k; }
  std::size_t total_voxels() const noexcept { return i * j * k * t; }

  friend bool operator==(const VolumeDims&, const VolumeDims&) = default;
};

struct VolumeMeta {
  VolumeDims dims;
  BoundsMatrix bounds;
  std::optional<double> frame_interval_ms;

  /// Interpolation needs two samples per spatial axis and at least one frame.
  void validate() const;

  friend bool operator==(const VolumeMeta&, const VolumeMeta&) = default;
};

/// Decoded 4D echo: 8-bit voxels laid out with rho fastest, then phi, then
/// theta, then frame. Immutable once built; safe to share across threads.
class VolumeSequence {
 public:
  VolumeSequence(VolumeMeta meta, std::vector<std::uint8_t> voxels);

  const VolumeMeta& meta() const noexcept { return meta_; }
  const VolumeDims& dims() const noexcept { return meta_.dims; }
  std::span<const std::uint8_t> voxels() const noexcept { return voxels_; }
  std::span<const std::uint8_t> frame(std::size_t t) const;

  std::uint8_t at(std::size_t i, std::size_t j, std::size_t k, std::size_t t) const noexcept {
    const auto& d = meta_.dims;
    return voxels_[i + d.i * (j + d.j * (k + d.k * t))];
  }

  friend bool operator==(const VolumeSequence&, const VolumeSequence&) = default;

 private:
  VolumeMeta meta_;
  std::vector<std::uint8_t> voxels_;
};

void to_json(nlohmann::json& j, const BoundsMatrix& b);
void from_json(const nlohmann::json& j, BoundsMatrix& b);
void to_json(nlohmann::json& j, const VolumeMeta& m);
void from_json(const nlohmann::json& j, VolumeMeta& m);

}  // namespace echoslice
