#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "echoslice/geometry.hpp"
#include "echoslice/volume.hpp"

namespace echoslice {

inline constexpr double kDefaultCmPerPixel = 0.05;

struct SliceExtent {
  double s_min = 0.0;
  double s_max = 0.0;
  double t_min = 0.0;
  double t_max = 0.0;
};

struct ViewRenderConfig {
  double cm_per_pix = kDefaultCmPerPixel;
  bool flip_h = false;
  bool flip_v = false;
  double rotation_deg = 0.0;

  void validate() const;
  friend bool operator==(const ViewRenderConfig&, const ViewRenderConfig&) = default;
};

void to_json(nlohmann::json& j, const ViewRenderConfig& c);
void from_json(const nlohmann::json& j, ViewRenderConfig& c);

/// Pixel lattice on a plane: column i sits at s_min + i*cm_per_pix along u,
/// row j at t_min + j*cm_per_pix along v (t grows downward).
class SamplingGrid {
 public:
  SamplingGrid() = default;
  SamplingGrid(PlaneBasis basis, SliceExtent extent, double cm_per_pix, std::size_t width,
               std::size_t height);

  const PlaneBasis& basis() const noexcept { return basis_; }
  const SliceExtent& extent() const noexcept { return extent_; }
  double cm_per_pix() const noexcept { return cm_per_pix_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }

  double s_at(std::size_t col) const noexcept { return extent_.s_min + static_cast<double>(col) * cm_per_pix_; }
  double t_at(std::size_t row) const noexcept { return extent_.t_min + static_cast<double>(row) * cm_per_pix_; }
  CartesianPoint point(std::size_t row, std::size_t col) const noexcept {
    return basis_.at(s_at(col), t_at(row));
  }
  /// Row-major materialization of every lattice point.
  std::vector<CartesianPoint> lattice() const;

 private:
  PlaneBasis basis_{};
  SliceExtent extent_{};
  double cm_per_pix_ = kDefaultCmPerPixel;
  std::size_t width_ = 1;
  std::size_t height_ = 1;
};

struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  ///< row-major

  Image8() = default;
  Image8(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h, 0) {}

  std::uint8_t& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
  std::uint8_t at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }

  friend bool operator==(const Image8&, const Image8&) = default;
};

struct Pixel {
  std::ptrdiff_t row = 0;
  std::ptrdiff_t col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// A rendered slice plus everything needed to map its pixels back to 3D.
struct SliceImage {
  Image8 image;
  double cm_per_pix = kDefaultCmPerPixel;
  PlaneAD plane;
  std::size_t frame_no = 0;
  SamplingGrid grid;
  ViewRenderConfig config;
};

/// Cartesian positions of every voxel on the six faces of index space.
std::vector<CartesianPoint> boundary_shell(const VolumeMeta& meta);

/// Projection extremes of `cloud` onto the basis; throws "plane outside
/// volume" when every point lies strictly on one side of the plane.
SliceExtent slice_extent(std::span<const CartesianPoint> cloud, const PlaneBasis& basis);
SliceExtent slice_extent(const VolumeMeta& meta, const PlaneBasis& basis);
/// False when every shell point lies strictly on one side of the plane.
bool plane_hits_volume(std::span<const CartesianPoint> shell, const PlaneAD& plane);

SamplingGrid make_sampling_grid(const PlaneBasis& basis, const SliceExtent& extent,
                                double cm_per_pix);

/// Trilinear interpolation on the (rho, phi, theta) grid; 0 outside bounds.
double sample_trilinear(const VolumeSequence& volume, std::size_t frame_no,
                        const SphericalPoint& p);

Image8 interpolate(const VolumeSequence& volume, std::size_t frame_no, const SamplingGrid& grid,
                   unsigned threads = 1);

Image8 flip_horizontal(const Image8& image);
Image8 flip_vertical(const Image8& image);
/// Counter-clockwise on screen. Multiples of 90 degrees permute indices
/// exactly; other angles resample bilinearly onto an enlarged zero-filled canvas.
Image8 rotate_image(const Image8& image, double degrees);
/// Orientation pipeline applied after interpolation: flip_h, flip_v, rotate.
Image8 orient(const Image8& raw, const ViewRenderConfig& config);

struct RenderOptions {
  unsigned threads = 1;
  /// Precomputed boundary_shell of the volume; computed on demand when empty.
  std::span<const CartesianPoint> shell;
};

SliceImage render_slice(const VolumeSequence& volume, const PlaneAD& plane, std::size_t frame_no,
                        const ViewRenderConfig& config, const RenderOptions& options = {});

/// Lattice point shown at a rendered pixel. Exact for flips and quarter
/// turns; nearest-lattice for other rotations.
CartesianPoint pixel_to_world(const SamplingGrid& grid, const ViewRenderConfig& config,
                              Pixel pixel);
/// Rendered position of lattice node (row, col).
Pixel lattice_to_pixel(const SamplingGrid& grid, const ViewRenderConfig& config, std::size_t row,
                       std::size_t col);
/// Rendered pixel of the lattice node nearest to the projection of `q`;
/// empty when that node lies outside the lattice.
std::optional<Pixel> world_to_pixel(const SamplingGrid& grid, const ViewRenderConfig& config,
                                    const CartesianPoint& q);

/// Size of the rendered image for a grid under `config`.
std::pair<std::size_t, std::size_t> rendered_size(const SamplingGrid& grid,
                                                  const ViewRenderConfig& config);

}  // namespace echoslice
