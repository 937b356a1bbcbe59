#include "support.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace echoslice::testing {

Vec3 Rng::unit_vector() {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const Vec3 v{n(engine_), n(engine_), n(engine_)};
    const double len = norm(v);
    if (len > 1e-6) return v / len;
  }
}

VolumeSequence make_volume(const VolumeMeta& meta, const VoxelFn& fn) {
  const auto& d = meta.dims;
  std::vector<std::uint8_t> voxels(d.total_voxels());
  std::size_t n = 0;
  for (std::size_t t = 0; t < d.t; ++t)
    for (std::size_t k = 0; k < d.k; ++k)
      for (std::size_t j = 0; j < d.j; ++j)
        for (std::size_t i = 0; i < d.i; ++i) voxels[n++] = fn(i, j, k, t);
  return VolumeSequence(meta, std::move(voxels));
}

VolumeMeta random_meta(Rng& rng, std::size_t max_spatial, std::size_t max_frames) {
  VolumeMeta m;
  m.dims = {rng.index(2, max_spatial), rng.index(2, max_spatial), rng.index(2, max_spatial),
            rng.index(1, max_frames)};
  const double rho_min = rng.uniform(0.0, 3.0);
  const double phi = rng.uniform(10.0, 45.0);
  const double theta = rng.uniform(10.0, 45.0);
  m.bounds = {rho_min, rho_min + rng.uniform(2.0, 15.0), -phi, phi, -theta, theta};
  if (rng.coin()) m.frame_interval_ms = rng.uniform(10.0, 60.0);
  return m;
}

VolumeSequence random_volume(Rng& rng, std::size_t max_spatial, std::size_t max_frames) {
  const VolumeMeta meta = random_meta(rng, max_spatial, max_frames);
  // Mix smooth structure with noise so compression is neither trivial nor hopeless.
  const std::size_t pattern = rng.index(0, 2);
  std::vector<std::uint8_t> voxels(meta.dims.total_voxels());
  for (std::size_t n = 0; n < voxels.size(); ++n) {
    switch (pattern) {
      case 0: voxels[n] = rng.byte(); break;
      case 1: voxels[n] = static_cast<std::uint8_t>((n * 7) % 251); break;
      default: voxels[n] = rng.index(0, 9) == 0 ? rng.byte() : 0; break;
    }
  }
  return VolumeSequence(meta, std::move(voxels));
}

TempDir::TempDir() {
  static std::atomic<unsigned> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("echoslice-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace echoslice::testing
