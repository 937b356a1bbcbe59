#pragma once

// Minimal explicit-VR little-endian DICOM walker. Only locates the private
// elements that carry the 3D payload; everything else is skipped.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "echoslice/codec.hpp"
#include "echoslice/volume.hpp"

namespace echoslice {

struct DicomTag {
  std::uint16_t group = 0;
  std::uint16_t element = 0;

  /// Accepts "200D,3001", "(200d,3001)" or "0x200D,0x3001".
  static DicomTag parse(std::string_view text);
  std::string str() const;

  friend auto operator<=>(const DicomTag&, const DicomTag&) = default;
};

enum class AngleUnit { degrees, radians };

/// Where the vendor stores each piece and in what units. Bounds are stored
/// as [rho_min, rho_max, phi_min, phi_max, theta_min, theta_max].
struct TagConfig {
  DicomTag dims{0x200D, 0x3001};
  DicomTag bounds{0x200D, 0x3002};
  DicomTag stream{0x200D, 0x3003};
  std::optional<DicomTag> frame_interval = DicomTag{0x200D, 0x3004};
  double rho_to_cm = 100.0;
  AngleUnit angle_unit = AngleUnit::radians;
  std::array<int, 3> payload_axis_order{0, 1, 2};
};

void to_json(nlohmann::json& j, const TagConfig& c);
void from_json(const nlohmann::json& j, TagConfig& c);

struct DicomElement {
  DicomTag tag;
  std::array<char, 2> vr{};
  std::span<const std::uint8_t> value;
};

/// Top-level elements of an explicit-VR LE dataset, preamble optional.
/// Undefined-length sequences are skipped, not descended into.
std::vector<DicomElement> walk_dicom(std::span<const std::uint8_t> bytes);

struct DicomPayload {
  RawStream stream;
  VolumeMeta meta;  ///< normalized to cm and degrees
};

DicomPayload parse_dicom_private_payload(std::span<const std::uint8_t> bytes,
                                         const TagConfig& config);

/// Companion writer for fixtures: emits a Part-10 file whose private tags
/// hold `meta` (converted back to the configured source units) and `stream`.
std::vector<std::uint8_t> write_dicom_fixture(const VolumeMeta& meta, const RawStream& stream,
                                              const TagConfig& config);

bool looks_like_dicom(std::span<const std::uint8_t> bytes) noexcept;

}  // namespace echoslice
