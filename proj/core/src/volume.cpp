#include "echoslice/volume.hpp"

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "echoslice/error.hpp"

namespace echoslice {

void BoundsMatrix::validate() const {
  const double values[] = {rho_min, rho_max, phi_min, phi_max, theta_min, theta_max};
  for (double v : values) {
    if (!std::isfinite(v)) throw input_error("invalid bounds: non-finite value");
  }
  if (!(rho_max > rho_min)) throw input_error("invalid bounds: rho_max must exceed rho_min");
  if (!(phi_max > phi_min)) throw input_error("invalid bounds: phi_max must exceed phi_min");
  if (!(theta_max > theta_min)) throw input_error("invalid bounds: theta_max must exceed theta_min");
  if (rho_min < 0.0) throw input_error("invalid bounds: rho_min must be non-negative");
}

void VolumeMeta::validate() const {
  if (dims.i < 2 || dims.j < 2 || dims.k < 2) {
    throw input_error("invalid dims: each spatial axis needs at least 2 samples");
  }
  if (dims.t < 1) throw input_error("invalid dims: at least one frame required");
  // Hostile headers must not overflow the voxel count.
  std::size_t total = 1;
  for (std::size_t n : {dims.i, dims.j, dims.k, dims.t}) {
    if (__builtin_mul_overflow(total, n, &total) || total > (std::size_t{1} << 40)) {
      throw input_error("invalid dims: volume too large");
    }
  }
  bounds.validate();
  if (frame_interval_ms && !(*frame_interval_ms > 0.0)) {
    throw input_error("invalid frame interval");
  }
}

VolumeSequence::VolumeSequence(VolumeMeta meta, std::vector<std::uint8_t> voxels)
    : meta_(std::move(meta)), voxels_(std::move(voxels)) {
  meta_.validate();
  if (voxels_.size() != meta_.dims.total_voxels()) {
    throw input_error("voxel count " + std::to_string(voxels_.size()) +
                      " does not match dims (expected " +
                      std::to_string(meta_.dims.total_voxels()) + ")");
  }
}

std::span<const std::uint8_t> VolumeSequence::frame(std::size_t t) const {
  if (t >= meta_.dims.t) {
    throw input_error("frame " + std::to_string(t) + " out of range (T=" +
                      std::to_string(meta_.dims.t) + ")");
  }
  const std::size_t n = meta_.dims.frame_voxels();
  return std::span<const std::uint8_t>(voxels_).subspan(t * n, n);
}

void to_json(nlohmann::json& j, const BoundsMatrix& b) {
  j = nlohmann::json{{"rho", {b.rho_min, b.rho_max}},
                     {"phi", {b.phi_min, b.phi_max}},
                     {"theta", {b.theta_min, b.theta_max}}};
}

void from_json(const nlohmann::json& j, BoundsMatrix& b) {
  b.rho_min = j.at("rho").at(0).get<double>();
  b.rho_max = j.at("rho").at(1).get<double>();
  b.phi_min = j.at("phi").at(0).get<double>();
  b.phi_max = j.at("phi").at(1).get<double>();
  b.theta_min = j.at("theta").at(0).get<double>();
  b.theta_max = j.at("theta").at(1).get<double>();
}

void to_json(nlohmann::json& j, const VolumeMeta& m) {
  j = nlohmann::json{{"dims", {m.dims.i, m.dims.j, m.dims.k, m.dims.t}},
                     {"bounds", m.bounds}};
  if (m.frame_interval_ms) j["frame_interval_ms"] = *m.frame_interval_ms;
}

void from_json(const nlohmann::json& j, VolumeMeta& m) {
  const auto& d = j.at("dims");
  if (!d.is_array() || d.size() != 4) throw input_error("meta.dims must have 4 entries");
  m.dims = VolumeDims{d[0].get<std::size_t>(), d[1].get<std::size_t>(),
                      d[2].get<std::size_t>(), d[3].get<std::size_t>()};
  m.bounds = j.at("bounds").get<BoundsMatrix>();
  if (j.contains("frame_interval_ms") && !j["frame_interval_ms"].is_null()) {
    m.frame_interval_ms = j["frame_interval_ms"].get<double>();
  } else {
    m.frame_interval_ms.reset();
  }
}

}  // namespace echoslice
