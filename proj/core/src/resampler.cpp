#include "echoslice/resampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "echoslice/error.hpp"

namespace echoslice {
namespace {

constexpr double kIndexSlack = 1e-9;
constexpr double kSideTolerance = 1e-9;
constexpr std::size_t kMaxSlicePixels = std::size_t{1} << 26;

// Samples one frame; the constants are hoisted out of the per-pixel path.
class TrilinearSampler {
 public:
  TrilinearSampler(const VolumeSequence& volume, std::size_t frame_no)
      : data_(volume.frame(frame_no)), dims_(volume.dims()) {
    const auto& b = volume.meta().bounds;
    rho_min_ = b.rho_min;
    phi_min_ = b.phi_min;
    theta_min_ = b.theta_min;
    rho_scale_ = static_cast<double>(dims_.i - 1) / (b.rho_max - b.rho_min);
    phi_scale_ = static_cast<double>(dims_.j - 1) / (b.phi_max - b.phi_min);
    theta_scale_ = static_cast<double>(dims_.k - 1) / (b.theta_max - b.theta_min);
  }

  double at_spherical(double rho, double phi_deg, double theta_deg) const {
    double fi = (rho - rho_min_) * rho_scale_;
    double fj = (phi_deg - phi_min_) * phi_scale_;
    double fk = (theta_deg - theta_min_) * theta_scale_;
    std::size_t i0, j0, k0;
    if (!locate(fi, dims_.i, i0) || !locate(fj, dims_.j, j0) || !locate(fk, dims_.k, k0)) {
      return 0.0;
    }
    fi -= static_cast<double>(i0);
    fj -= static_cast<double>(j0);
    fk -= static_cast<double>(k0);

    const std::size_t si = 1;
    const std::size_t sj = dims_.i;
    const std::size_t sk = dims_.i * dims_.j;
    const std::uint8_t* c = data_.data() + i0 + sj * j0 + sk * k0;
    const double c00 = c[0] + fi * (c[si] - c[0]);
    const double c10 = c[sj] + fi * (c[sj + si] - c[sj]);
    const double c01 = c[sk] + fi * (c[sk + si] - c[sk]);
    const double c11 = c[sk + sj] + fi * (c[sk + sj + si] - c[sk + sj]);
    const double c0 = c00 + fj * (c10 - c00);
    const double c1 = c01 + fj * (c11 - c01);
    return c0 + fk * (c1 - c0);
  }

  double at_cartesian(const Vec3& q) const {
    const double rho = norm(q);
    if (rho == 0.0) return at_spherical(0.0, 0.0, 0.0);
    if ((rho - rho_min_) * rho_scale_ < -kIndexSlack) return 0.0;
    const double theta = std::asin(std::clamp(q.y / rho, -1.0, 1.0));
    const double phi = std::hypot(q.x, q.z) <= 1e-12 * rho ? 0.0 : std::atan2(q.z, q.x);
    return at_spherical(rho, phi * kRadToDeg, theta * kRadToDeg);
  }

 private:
  static constexpr double kRadToDeg = 180.0 / std::numbers::pi;

  // Cell index for a fractional coordinate; false when outside [0, n-1].
  static bool locate(double& f, std::size_t n, std::size_t& cell) {
    const double hi = static_cast<double>(n - 1);
    if (!(f >= -kIndexSlack && f <= hi + kIndexSlack)) return false;
    f = std::clamp(f, 0.0, hi);
    cell = std::min(static_cast<std::size_t>(f), n - 2);
    return true;
  }

  std::span<const std::uint8_t> data_;
  VolumeDims dims_;
  double rho_min_, phi_min_, theta_min_;
  double rho_scale_, phi_scale_, theta_scale_;
};

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

std::optional<int> quarter_turns(double degrees) {
  const double q = std::round(degrees / 90.0);
  if (std::abs(degrees - 90.0 * q) > 1e-9) return std::nullopt;
  return static_cast<int>(((static_cast<long long>(q) % 4) + 4) % 4);
}

struct RotationFrame {
  double cos_a, sin_a;
  double src_cx, src_cy, dst_cx, dst_cy;
};

RotationFrame rotation_frame(std::size_t w, std::size_t h, std::size_t dw, std::size_t dh,
                             double degrees) {
  const double a = deg_to_rad(degrees);
  return {std::cos(a), std::sin(a), (static_cast<double>(w) - 1) / 2, (static_cast<double>(h) - 1) / 2,
          (static_cast<double>(dw) - 1) / 2, (static_cast<double>(dh) - 1) / 2};
}

// Destination pixel -> source position (col, row) for a general rotation.
std::pair<double, double> rotated_source(const RotationFrame& f, double row, double col) {
  const double x = col - f.dst_cx;
  const double y = -(row - f.dst_cy);
  const double sx = f.cos_a * x + f.sin_a * y;
  const double sy = -f.sin_a * x + f.cos_a * y;
  return {f.src_cx + sx, f.src_cy - sy};
}

std::pair<std::size_t, std::size_t> rotated_size(std::size_t w, std::size_t h, double degrees) {
  if (auto k = quarter_turns(degrees)) {
    return (*k % 2 == 1) ? std::pair{h, w} : std::pair{w, h};
  }
  const double a = deg_to_rad(degrees);
  const double ca = std::abs(std::cos(a));
  const double sa = std::abs(std::sin(a));
  const double wf = static_cast<double>(w) - 1;
  const double hf = static_cast<double>(h) - 1;
  const auto dw = static_cast<std::size_t>(std::ceil(wf * ca + hf * sa + 1.0 - 1e-9));
  const auto dh = static_cast<std::size_t>(std::ceil(wf * sa + hf * ca + 1.0 - 1e-9));
  return {std::max<std::size_t>(dw, 1), std::max<std::size_t>(dh, 1)};
}

// Pre-rotation pixel (row, col) for a rendered pixel under a quarter turn.
Pixel unrotate_quarter(int k, std::size_t w, std::size_t h, Pixel p) {
  const auto W = static_cast<std::ptrdiff_t>(w);
  const auto H = static_cast<std::ptrdiff_t>(h);
  switch (k) {
    case 1: return {p.col, W - 1 - p.row};
    case 2: return {H - 1 - p.row, W - 1 - p.col};
    case 3: return {H - 1 - p.col, p.row};
    default: return p;
  }
}

Pixel rotate_quarter(int k, std::size_t w, std::size_t h, Pixel p) {
  const auto W = static_cast<std::ptrdiff_t>(w);
  const auto H = static_cast<std::ptrdiff_t>(h);
  switch (k) {
    case 1: return {W - 1 - p.col, p.row};
    case 2: return {H - 1 - p.row, W - 1 - p.col};
    case 3: return {p.col, H - 1 - p.row};
    default: return p;
  }
}

template <typename Fn>
void parallel_rows(std::size_t rows, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(rows)));
  if (threads == 1) {
    fn(std::size_t{0}, rows);
    return;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (rows + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(rows, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
}

}  // namespace

void ViewRenderConfig::validate() const {
  if (!(cm_per_pix > 0.0) || !std::isfinite(cm_per_pix)) {
    throw input_error("cm_per_pix must be positive");
  }
  if (!std::isfinite(rotation_deg)) throw input_error("rotation must be finite");
}

void to_json(nlohmann::json& j, const ViewRenderConfig& c) {
  j = nlohmann::json{{"cm_per_pix", c.cm_per_pix},
                     {"flip_h", c.flip_h},
                     {"flip_v", c.flip_v},
                     {"rotation_deg", c.rotation_deg}};
}

void from_json(const nlohmann::json& j, ViewRenderConfig& c) {
  c = ViewRenderConfig{};
  c.cm_per_pix = j.value("cm_per_pix", kDefaultCmPerPixel);
  c.flip_h = j.value("flip_h", false);
  c.flip_v = j.value("flip_v", false);
  c.rotation_deg = j.value("rotation_deg", 0.0);
}

SamplingGrid::SamplingGrid(PlaneBasis basis, SliceExtent extent, double cm_per_pix,
                           std::size_t width, std::size_t height)
    : basis_(basis), extent_(extent), cm_per_pix_(cm_per_pix), width_(width), height_(height) {}

std::vector<CartesianPoint> SamplingGrid::lattice() const {
  std::vector<CartesianPoint> out;
  out.reserve(width_ * height_);
  for (std::size_t r = 0; r < height_; ++r) {
    for (std::size_t c = 0; c < width_; ++c) out.push_back(point(r, c));
  }
  return out;
}

std::vector<CartesianPoint> boundary_shell(const VolumeMeta& meta) {
  meta.validate();
  const auto& d = meta.dims;
  std::vector<CartesianPoint> out;
  out.reserve(2 * (d.i * d.j + d.j * d.k + d.i * d.k));
  for (std::size_t k = 0; k < d.k; ++k) {
    const bool k_face = k == 0 || k == d.k - 1;
    for (std::size_t j = 0; j < d.j; ++j) {
      const bool j_face = j == 0 || j == d.j - 1;
      for (std::size_t i = 0; i < d.i; ++i) {
        const bool i_face = i == 0 || i == d.i - 1;
        if (!(i_face || j_face || k_face)) {
          i = d.i - 2;  // jump to the far rho face
          continue;
        }
        out.push_back(spherical_to_cartesian(grid_coordinate(meta, i, j, k)));
      }
    }
  }
  return out;
}

SliceExtent slice_extent(std::span<const CartesianPoint> cloud, const PlaneBasis& basis) {
  if (cloud.empty()) throw input_error("plane outside volume");
  constexpr double inf = std::numeric_limits<double>::infinity();
  SliceExtent e{inf, -inf, inf, -inf};
  double side_min = inf;
  double side_max = -inf;
  for (const auto& c : cloud) {
    const Vec3 rel = c - basis.point;
    const double s = dot(rel, basis.u);
    const double t = dot(rel, basis.v);
    const double h = dot(rel, basis.n);
    e.s_min = std::min(e.s_min, s);
    e.s_max = std::max(e.s_max, s);
    e.t_min = std::min(e.t_min, t);
    e.t_max = std::max(e.t_max, t);
    side_min = std::min(side_min, h);
    side_max = std::max(side_max, h);
  }
  if (side_min > kSideTolerance || side_max < -kSideTolerance) {
    throw input_error("plane outside volume");
  }
  return e;
}

SliceExtent slice_extent(const VolumeMeta& meta, const PlaneBasis& basis) {
  const auto shell = boundary_shell(meta);
  return slice_extent(shell, basis);
}

bool plane_hits_volume(std::span<const CartesianPoint> shell, const PlaneAD& plane) {
  const PlanePN pn = plane_ad_to_pn(plane);
  bool below = false;
  bool above = false;
  for (const auto& c : shell) {
    const double h = pn.signed_distance(c);
    below = below || h <= kSideTolerance;
    above = above || h >= -kSideTolerance;
    if (below && above) return true;
  }
  return false;
}

SamplingGrid make_sampling_grid(const PlaneBasis& basis, const SliceExtent& extent,
                                double cm_per_pix) {
  if (!(cm_per_pix > 0.0) || !std::isfinite(cm_per_pix)) {
    throw input_error("cm_per_pix must be positive");
  }
  if (!(extent.s_max >= extent.s_min) || !(extent.t_max >= extent.t_min)) {
    throw input_error("invalid slice extent");
  }
  const double w = norm((extent.s_max - extent.s_min) * basis.u);
  const double h = norm((extent.t_max - extent.t_min) * basis.v);
  const auto width = static_cast<std::size_t>(std::max(1.0, std::round(w / cm_per_pix)));
  const auto height = static_cast<std::size_t>(std::max(1.0, std::round(h / cm_per_pix)));
  if (width > kMaxSlicePixels / height) {
    throw input_error("slice too large: " + std::to_string(width) + "x" + std::to_string(height) +
                      " pixels");
  }
  return SamplingGrid(basis, extent, cm_per_pix, width, height);
}

double sample_trilinear(const VolumeSequence& volume, std::size_t frame_no,
                        const SphericalPoint& p) {
  return TrilinearSampler(volume, frame_no).at_spherical(p.rho, p.phi, p.theta);
}

Image8 interpolate(const VolumeSequence& volume, std::size_t frame_no, const SamplingGrid& grid,
                   unsigned threads) {
  const TrilinearSampler sampler(volume, frame_no);
  Image8 out(grid.width(), grid.height());
  const PlaneBasis& b = grid.basis();
  parallel_rows(grid.height(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const Vec3 row_origin = b.point + grid.t_at(r) * b.v;
      std::uint8_t* dst = out.pixels.data() + r * out.width;
      for (std::size_t c = 0; c < grid.width(); ++c) {
        dst[c] = to_u8(sampler.at_cartesian(row_origin + grid.s_at(c) * b.u));
      }
    }
  });
  return out;
}

Image8 flip_horizontal(const Image8& image) {
  Image8 out = image;
  for (std::size_t r = 0; r < image.height; ++r) {
    auto first = out.pixels.begin() + static_cast<std::ptrdiff_t>(r * image.width);
    std::reverse(first, first + static_cast<std::ptrdiff_t>(image.width));
  }
  return out;
}

Image8 flip_vertical(const Image8& image) {
  Image8 out(image.width, image.height);
  for (std::size_t r = 0; r < image.height; ++r) {
    std::copy_n(image.pixels.begin() + static_cast<std::ptrdiff_t>(r * image.width), image.width,
                out.pixels.begin() + static_cast<std::ptrdiff_t>((image.height - 1 - r) * image.width));
  }
  return out;
}

Image8 rotate_image(const Image8& image, double degrees) {
  const auto [dw, dh] = rotated_size(image.width, image.height, degrees);
  Image8 out(dw, dh);
  if (auto k = quarter_turns(degrees)) {
    for (std::size_t r = 0; r < dh; ++r) {
      for (std::size_t c = 0; c < dw; ++c) {
        const Pixel src = unrotate_quarter(*k, image.width, image.height,
                                           {static_cast<std::ptrdiff_t>(r), static_cast<std::ptrdiff_t>(c)});
        out.at(r, c) = image.at(static_cast<std::size_t>(src.row), static_cast<std::size_t>(src.col));
      }
    }
    return out;
  }

  const RotationFrame f = rotation_frame(image.width, image.height, dw, dh, degrees);
  const double max_x = static_cast<double>(image.width) - 1;
  const double max_y = static_cast<double>(image.height) - 1;
  for (std::size_t r = 0; r < dh; ++r) {
    for (std::size_t c = 0; c < dw; ++c) {
      auto [x, y] = rotated_source(f, static_cast<double>(r), static_cast<double>(c));
      if (x < -kIndexSlack || y < -kIndexSlack || x > max_x + kIndexSlack || y > max_y + kIndexSlack) {
        continue;
      }
      x = std::clamp(x, 0.0, max_x);
      y = std::clamp(y, 0.0, max_y);
      const auto x0 = std::min(static_cast<std::size_t>(x), image.width > 1 ? image.width - 2 : 0);
      const auto y0 = std::min(static_cast<std::size_t>(y), image.height > 1 ? image.height - 2 : 0);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const std::size_t y1 = std::min(y0 + 1, image.height - 1);
      const double fx = x - static_cast<double>(x0);
      const double fy = y - static_cast<double>(y0);
      const double top = image.at(y0, x0) + fx * (image.at(y0, x1) - image.at(y0, x0));
      const double bottom = image.at(y1, x0) + fx * (image.at(y1, x1) - image.at(y1, x0));
      out.at(r, c) = to_u8(top + fy * (bottom - top));
    }
  }
  return out;
}

Image8 orient(const Image8& raw, const ViewRenderConfig& config) {
  Image8 img = config.flip_h ? flip_horizontal(raw) : raw;
  if (config.flip_v) img = flip_vertical(img);
  if (config.rotation_deg != 0.0) img = rotate_image(img, config.rotation_deg);
  return img;
}

SliceImage render_slice(const VolumeSequence& volume, const PlaneAD& plane, std::size_t frame_no,
                        const ViewRenderConfig& config, const RenderOptions& options) {
  config.validate();
  if (frame_no >= volume.dims().t) {
    throw input_error("frame " + std::to_string(frame_no) + " out of range (T=" +
                      std::to_string(volume.dims().t) + ")");
  }
  const PlaneBasis basis = plane_basis(plane_ad_to_pn(plane));
  SliceExtent extent;
  if (options.shell.empty()) {
    extent = slice_extent(volume.meta(), basis);
  } else {
    extent = slice_extent(options.shell, basis);
  }
  SliceImage out;
  out.grid = make_sampling_grid(basis, extent, config.cm_per_pix);
  out.image = orient(interpolate(volume, frame_no, out.grid, options.threads), config);
  out.cm_per_pix = config.cm_per_pix;
  out.plane = plane;
  out.frame_no = frame_no;
  out.config = config;
  return out;
}

std::pair<std::size_t, std::size_t> rendered_size(const SamplingGrid& grid,
                                                  const ViewRenderConfig& config) {
  return rotated_size(grid.width(), grid.height(), config.rotation_deg);
}

CartesianPoint pixel_to_world(const SamplingGrid& grid, const ViewRenderConfig& config,
                              Pixel pixel) {
  const std::size_t w = grid.width();
  const std::size_t h = grid.height();
  const auto [dw, dh] = rendered_size(grid, config);
  if (pixel.row < 0 || pixel.col < 0 || static_cast<std::size_t>(pixel.row) >= dh ||
      static_cast<std::size_t>(pixel.col) >= dw) {
    throw input_error("pixel outside image");
  }

  Pixel oriented;
  if (auto k = quarter_turns(config.rotation_deg)) {
    oriented = unrotate_quarter(*k, w, h, pixel);
  } else {
    const RotationFrame f = rotation_frame(w, h, dw, dh, config.rotation_deg);
    const auto [x, y] = rotated_source(f, static_cast<double>(pixel.row), static_cast<double>(pixel.col));
    // Canvas pixels within one pixel of the lattice still blend edge nodes.
    if (y <= -1.0 || x <= -1.0 || y >= static_cast<double>(h) || x >= static_cast<double>(w)) {
      throw input_error("pixel outside sampled region");
    }
    oriented = {std::clamp<std::ptrdiff_t>(std::lround(y), 0, static_cast<std::ptrdiff_t>(h) - 1),
                std::clamp<std::ptrdiff_t>(std::lround(x), 0, static_cast<std::ptrdiff_t>(w) - 1)};
  }
  const auto W = static_cast<std::ptrdiff_t>(w);
  const auto H = static_cast<std::ptrdiff_t>(h);
  const std::ptrdiff_t col = config.flip_h ? W - 1 - oriented.col : oriented.col;
  const std::ptrdiff_t row = config.flip_v ? H - 1 - oriented.row : oriented.row;
  return grid.point(static_cast<std::size_t>(row), static_cast<std::size_t>(col));
}

Pixel lattice_to_pixel(const SamplingGrid& grid, const ViewRenderConfig& config, std::size_t row,
                       std::size_t col) {
  const std::size_t w = grid.width();
  const std::size_t h = grid.height();
  if (row >= h || col >= w) throw input_error("lattice index outside grid");
  Pixel p{static_cast<std::ptrdiff_t>(config.flip_v ? h - 1 - row : row),
          static_cast<std::ptrdiff_t>(config.flip_h ? w - 1 - col : col)};
  if (auto k = quarter_turns(config.rotation_deg)) return rotate_quarter(*k, w, h, p);

  const auto [dw, dh] = rendered_size(grid, config);
  const RotationFrame f = rotation_frame(w, h, dw, dh, config.rotation_deg);
  const double sx = static_cast<double>(p.col) - f.src_cx;
  const double sy = -(static_cast<double>(p.row) - f.src_cy);
  const double x = f.cos_a * sx - f.sin_a * sy;
  const double y = f.sin_a * sx + f.cos_a * sy;
  return {static_cast<std::ptrdiff_t>(std::lround(f.dst_cy - y)),
          static_cast<std::ptrdiff_t>(std::lround(f.dst_cx + x))};
}

std::optional<Pixel> world_to_pixel(const SamplingGrid& grid, const ViewRenderConfig& config,
                                    const CartesianPoint& q) {
  const PlaneBasis& b = grid.basis();
  const Vec3 rel = q - b.point;
  const double col = std::round((dot(rel, b.u) - grid.extent().s_min) / grid.cm_per_pix());
  const double row = std::round((dot(rel, b.v) - grid.extent().t_min) / grid.cm_per_pix());
  if (col < 0 || row < 0 || col >= static_cast<double>(grid.width()) ||
      row >= static_cast<double>(grid.height())) {
    return std::nullopt;
  }
  return lattice_to_pixel(grid, config, static_cast<std::size_t>(row), static_cast<std::size_t>(col));
}

}  // namespace echoslice
