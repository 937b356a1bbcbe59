#include "echoslice/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "echoslice/error.hpp"
#include "echoslice/resampler.hpp"

namespace echoslice {
namespace {

// Squared normalized radius of q in the ellipsoid with semi-axes grown by
// `grow` after scaling by `scale` about the center.
double ellipsoid_r2(const Ellipsoid& e, const Vec3& q, double scale, double grow) {
  const Vec3 p = q - e.center;
  const double la = dot(p, e.long_axis()) / (e.c * scale + grow);
  const double lb = dot(p, e.lateral_axis()) / (e.b * scale + grow);
  const double ly = p.y / (e.a * scale + grow);
  return la * la + lb * lb + ly * ly;
}

std::uint8_t chamber_value(const Ellipsoid& e, const Vec3& q, double scale, double shell) {
  if (ellipsoid_r2(e, q, scale, 0.0) <= 1.0) return kBloodIntensity;
  if (shell > 0.0 && ellipsoid_r2(e, q, scale, shell) <= 1.0) return kShellIntensity;
  return 0;
}

bool inside_bounds(const BoundsMatrix& b, const Vec3& q) {
  const SphericalPoint s = cartesian_to_spherical(q);
  constexpr double eps = 1e-9;
  return s.rho >= b.rho_min - eps && s.rho <= b.rho_max + eps && s.phi >= b.phi_min - eps &&
         s.phi <= b.phi_max + eps && s.theta >= b.theta_min - eps && s.theta <= b.theta_max + eps;
}

void check_surface(const BoundsMatrix& bounds, const char* name, const Vec3& center,
                   const Vec3& ex, const Vec3& ey, const Vec3& ez, double rx, double ry,
                   double rz) {
  constexpr int kLat = 24;
  constexpr int kLon = 48;
  for (int i = 0; i <= kLat; ++i) {
    const double polar = std::numbers::pi * i / kLat;
    for (int j = 0; j < kLon; ++j) {
      const double az = 2.0 * std::numbers::pi * j / kLon;
      const Vec3 q = center + ex * (rx * std::cos(polar)) +
                     ey * (ry * std::sin(polar) * std::cos(az)) +
                     ez * (rz * std::sin(polar) * std::sin(az));
      if (!inside_bounds(bounds, q)) {
        throw input_error(std::string("structure outside bounds: ") + name);
      }
    }
  }
}

void check_ellipsoid(const Ellipsoid& e, const char* name, double shell,
                     const BoundsMatrix& bounds) {
  if (!(e.a > 0.0 && e.b > 0.0 && e.c > 0.0)) {
    throw input_error(std::string(name) + " semi-axes must be positive");
  }
  check_surface(bounds, name, e.center, e.long_axis(), e.lateral_axis(), {0, 1, 0}, e.c + shell,
                e.b + shell, e.a + shell);
}

Vec3 read_vec(const nlohmann::json& j, const char* key, Vec3 fallback) {
  return j.contains(key) ? j.at(key).get<Vec3>() : fallback;
}

nlohmann::json ellipsoid_json(const Ellipsoid& e) {
  return {{"center", e.center}, {"a", e.a}, {"b", e.b}, {"c", e.c}, {"tilt_deg", e.tilt_deg}};
}

Ellipsoid ellipsoid_from(const nlohmann::json& j, Ellipsoid e) {
  e.center = read_vec(j, "center", e.center);
  e.a = j.value("a", e.a);
  e.b = j.value("b", e.b);
  e.c = j.value("c", e.c);
  e.tilt_deg = j.value("tilt_deg", e.tilt_deg);
  return e;
}

class PhantomLandmarkProvider final : public LandmarkProvider {
 public:
  explicit PhantomLandmarkProvider(PhantomTruth truth) : truth_(std::move(truth)) {}

  LandmarkProviderResult locate(const SliceImage& a4c) override {
    const auto& spec = truth_.spec;
    const double s = spec.lv_scale(a4c.frame_no);
    const Vec3 axis = spec.lv.long_axis();
    const Vec3 apex = spec.lv.center - axis * (spec.lv.c * s);
    const Vec3 base = spec.lv.center + axis * (spec.lv.c * s);
    const auto apex_px = world_to_pixel(a4c.grid, a4c.config, apex);
    const auto base_px = world_to_pixel(a4c.grid, a4c.config, base);
    if (!apex_px || !base_px) throw adapter_error("phantom LV outside the A4C image");

    Image8 mask(a4c.image.width, a4c.image.height);
    for (std::size_t r = 0; r < a4c.grid.height(); ++r) {
      for (std::size_t c = 0; c < a4c.grid.width(); ++c) {
        if (!inside_lv_cavity(spec, a4c.grid.point(r, c), a4c.frame_no)) continue;
        const Pixel p = lattice_to_pixel(a4c.grid, a4c.config, r, c);
        if (p.row >= 0 && p.col >= 0 && static_cast<std::size_t>(p.row) < mask.height &&
            static_cast<std::size_t>(p.col) < mask.width) {
          mask.at(static_cast<std::size_t>(p.row), static_cast<std::size_t>(p.col)) = 1;
        }
      }
    }
    return {*apex_px, *base_px, std::move(mask)};
  }

 private:
  PhantomTruth truth_;
};

class PhantomScorer final : public ViewScorer {
 public:
  explicit PhantomScorer(std::map<View, PlaneAD> planes) : planes_(std::move(planes)) {}

  std::vector<double> score(std::span<const SliceImage* const> images, View view) override {
    auto it = planes_.find(view);
    if (it == planes_.end()) throw adapter_error("phantom has no truth for this view");
    std::vector<double> out;
    out.reserve(images.size());
    for (const auto* image : images) out.push_back(phantom_plane_score(image->plane, it->second));
    return out;
  }

  std::size_t batch_size() const override { return 64; }

 private:
  std::map<View, PlaneAD> planes_;
};

}  // namespace

Vec3 Ellipsoid::long_axis() const {
  const double t = deg_to_rad(tilt_deg);
  return {std::cos(t), 0.0, std::sin(t)};
}

Vec3 Ellipsoid::lateral_axis() const {
  const double t = deg_to_rad(tilt_deg);
  return {-std::sin(t), 0.0, std::cos(t)};
}

PhantomSpec PhantomSpec::defaults() {
  PhantomSpec s;
  s.meta.dims = {64, 64, 64, 8};
  s.meta.bounds = {1.0, 15.0, -45.0, 45.0, -45.0, 45.0};
  s.lv.center = {7.0, 0.0, 0.0};
  s.lv.a = 2.2;
  s.lv.b = 2.2;
  s.lv.c = 4.0;
  return s;
}

double PhantomSpec::lv_scale(std::size_t frame) const {
  const double t = static_cast<double>(frame) - static_cast<double>(ed_frame);
  const double s = std::sin(std::numbers::pi * t / static_cast<double>(meta.dims.t));
  return 1.0 - contraction_fraction * s * s;
}

void PhantomSpec::validate() const {
  meta.validate();
  if (!(shell_thickness >= 0.0)) throw input_error("shell_thickness must be non-negative");
  if (!(contraction_fraction >= 0.0 && contraction_fraction < 1.0)) {
    throw input_error("contraction_fraction must be in [0, 1)");
  }
  if (ed_frame >= meta.dims.t) throw input_error("ed_frame outside the cycle");
  if (!(noise.amplitude >= 0.0 && noise.amplitude <= 1.0)) {
    throw input_error("noise amplitude must be in [0, 1]");
  }
  if (a2c_rotation_sign != 1 && a2c_rotation_sign != -1) {
    throw input_error("a2c_rotation_sign must be +1 or -1");
  }
  if (std::abs(lv.center.y) > 1e-9) throw input_error("LV center must lie in the A4C plane (y = 0)");
  check_ellipsoid(lv, "lv", shell_thickness, meta.bounds);
  if (la) check_ellipsoid(*la, "la", shell_thickness, meta.bounds);
  if (rv) check_ellipsoid(*rv, "rv", shell_thickness, meta.bounds);
  for (const auto& m : sphere_markers) {
    if (!(m.radius > 0.0)) throw input_error("sphere marker radius must be positive");
    check_surface(meta.bounds, "sphere marker", m.center, {1, 0, 0}, {0, 1, 0}, {0, 0, 1},
                  m.radius, m.radius, m.radius);
  }
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  nlohmann::json markers = nlohmann::json::array();
  for (const auto& m : s.sphere_markers) markers.push_back({{"center", m.center}, {"radius", m.radius}});
  j = nlohmann::json{{"meta", s.meta},
                     {"lv", ellipsoid_json(s.lv)},
                     {"shell_thickness", s.shell_thickness},
                     {"contraction_fraction", s.contraction_fraction},
                     {"ed_frame", s.ed_frame},
                     {"sphere_markers", markers},
                     {"noise", {{"amplitude", s.noise.amplitude}, {"seed", s.noise.seed}}},
                     {"targets",
                      {{"a2c_offset_deg", s.targets.a2c_offset_deg},
                       {"a3c_offset_deg", s.targets.a3c_offset_deg},
                       {"a5c_offset_deg", s.targets.a5c_offset_deg},
                       {"sax_apex_fraction", s.targets.sax_apex_fraction},
                       {"sax_pap_fraction", s.targets.sax_pap_fraction},
                       {"sax_mv_fraction", s.targets.sax_mv_fraction}}},
                     {"a2c_rotation_sign", s.a2c_rotation_sign}};
  if (s.la) j["la"] = ellipsoid_json(*s.la);
  if (s.rv) j["rv"] = ellipsoid_json(*s.rv);
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
  s = PhantomSpec::defaults();
  if (j.contains("meta")) s.meta = j.at("meta").get<VolumeMeta>();
  if (j.contains("lv")) s.lv = ellipsoid_from(j.at("lv"), s.lv);
  if (j.contains("la")) s.la = ellipsoid_from(j.at("la"), Ellipsoid{});
  if (j.contains("rv")) s.rv = ellipsoid_from(j.at("rv"), Ellipsoid{});
  s.shell_thickness = j.value("shell_thickness", s.shell_thickness);
  s.contraction_fraction = j.value("contraction_fraction", s.contraction_fraction);
  s.ed_frame = j.value("ed_frame", s.ed_frame);
  if (j.contains("sphere_markers")) {
    for (const auto& m : j.at("sphere_markers")) {
      s.sphere_markers.push_back({m.at("center").get<Vec3>(), m.at("radius").get<double>()});
    }
  }
  if (j.contains("noise")) {
    s.noise.amplitude = j.at("noise").value("amplitude", 0.0);
    s.noise.seed = j.at("noise").value("seed", std::uint64_t{0});
  }
  if (j.contains("targets")) {
    const auto& t = j.at("targets");
    s.targets.a2c_offset_deg = t.value("a2c_offset_deg", s.targets.a2c_offset_deg);
    s.targets.a3c_offset_deg = t.value("a3c_offset_deg", s.targets.a3c_offset_deg);
    s.targets.a5c_offset_deg = t.value("a5c_offset_deg", s.targets.a5c_offset_deg);
    s.targets.sax_apex_fraction = t.value("sax_apex_fraction", s.targets.sax_apex_fraction);
    s.targets.sax_pap_fraction = t.value("sax_pap_fraction", s.targets.sax_pap_fraction);
    s.targets.sax_mv_fraction = t.value("sax_mv_fraction", s.targets.sax_mv_fraction);
  }
  s.a2c_rotation_sign = j.value("a2c_rotation_sign", s.a2c_rotation_sign);
}

void to_json(nlohmann::json& j, const PhantomTruth& t) {
  nlohmann::json views = nlohmann::json::object();
  for (const auto& [v, p] : t.views) views[std::string(view_name(v))] = p;
  j = nlohmann::json{{"spec", t.spec},
                     {"apex", t.apex},
                     {"base", t.base},
                     {"landmarks", t.landmarks},
                     {"views", views},
                     {"lv_volume_cm3", t.lv_volume_cm3},
                     {"a4c_area_cm2", t.a4c_area_cm2}};
}

void from_json(const nlohmann::json& j, PhantomTruth& t) {
  // Everything but the spec is derived, so recompute it rather than trust the file.
  t = phantom_truth(j.at("spec").get<PhantomSpec>());
}

PhantomTruth phantom_truth(const PhantomSpec& spec) {
  spec.validate();
  PhantomTruth t;
  t.spec = spec;
  const Vec3 axis = spec.lv.long_axis();
  t.apex = spec.lv.center - axis * spec.lv.c;
  t.base = spec.lv.center + axis * spec.lv.c;
  t.landmarks = landmarks_from_points(t.apex, t.base);

  const auto& lm = t.landmarks;
  const auto& tg = spec.targets;
  const PlaneAD a2c{lm.plane_la.d, lm.plane_la.phi_n,
                    lm.plane_la.theta_n + spec.a2c_rotation_sign * tg.a2c_offset_deg};
  const PlaneAD a3c{lm.plane_la.d, lm.plane_la.phi_n, a2c.theta_n - tg.a3c_offset_deg};
  auto sax = [&](double f) {
    return PlaneAD{lm.plane_sax.d + f * lm.l_lv, lm.plane_sax.phi_n, lm.plane_sax.theta_n};
  };
  t.views[View::A4C] = lm.plane_a4c;
  t.views[View::A2C] = a2c;
  t.views[View::A3C] = a3c;
  t.views[View::PLAX] = {lm.plane_la.d, a3c.phi_n, a3c.theta_n};
  t.views[View::A5C] = {lm.plane_a4c.d, lm.plane_a4c.phi_n,
                        lm.plane_a4c.theta_n + tg.a5c_offset_deg};
  t.views[View::SAX_apex] = sax(tg.sax_apex_fraction);
  t.views[View::SAX_PAP] = sax(tg.sax_pap_fraction);
  t.views[View::SAX_MV] = sax(tg.sax_mv_fraction);

  for (std::size_t f = 0; f < spec.meta.dims.t; ++f) {
    const double s = spec.lv_scale(f);
    t.lv_volume_cm3.push_back(4.0 / 3.0 * std::numbers::pi * spec.lv.a * spec.lv.b * spec.lv.c *
                              s * s * s);
    t.a4c_area_cm2.push_back(std::numbers::pi * spec.lv.b * spec.lv.c * s * s);
  }
  return t;
}

bool inside_lv_cavity(const PhantomSpec& spec, const CartesianPoint& q, std::size_t frame) {
  return ellipsoid_r2(spec.lv, q, spec.lv_scale(frame), 0.0) <= 1.0;
}

std::uint8_t phantom_intensity(const PhantomSpec& spec, const CartesianPoint& q,
                               std::size_t frame) {
  std::uint8_t v = chamber_value(spec.lv, q, spec.lv_scale(frame), spec.shell_thickness);
  if (spec.la) v = std::max(v, chamber_value(*spec.la, q, 1.0, spec.shell_thickness));
  if (spec.rv) v = std::max(v, chamber_value(*spec.rv, q, 1.0, spec.shell_thickness));
  for (const auto& m : spec.sphere_markers) {
    const Vec3 r = q - m.center;
    if (dot(r, r) <= m.radius * m.radius) v = kShellIntensity;
  }
  return v;
}

Phantom generate_phantom(const PhantomSpec& spec, unsigned threads) {
  PhantomTruth truth = phantom_truth(spec);
  const auto& d = spec.meta.dims;
  std::vector<CartesianPoint> points;
  points.reserve(d.frame_voxels());
  for (std::size_t k = 0; k < d.k; ++k) {
    for (std::size_t j = 0; j < d.j; ++j) {
      for (std::size_t i = 0; i < d.i; ++i) {
        points.push_back(spherical_to_cartesian(grid_coordinate(spec.meta, i, j, k)));
      }
    }
  }

  std::vector<std::uint8_t> voxels(d.total_voxels());
  auto fill_frame = [&](std::size_t t) {
    std::uint8_t* out = voxels.data() + t * d.frame_voxels();
    std::mt19937_64 rng(spec.noise.seed * 1000003u + t);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (std::size_t n = 0; n < points.size(); ++n) {
      double v = phantom_intensity(spec, points[n], t);
      if (spec.noise.amplitude > 0.0) v *= 1.0 + spec.noise.amplitude * unit(rng);
      out[n] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  };
  if (threads <= 1 || d.t == 1) {
    for (std::size_t t = 0; t < d.t; ++t) fill_frame(t);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t n = std::min<std::size_t>(threads, d.t);
    for (std::size_t w = 0; w < n; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t t = w; t < d.t; t += n) fill_frame(t);
      });
    }
  }
  return {VolumeSequence(spec.meta, std::move(voxels)), std::move(truth)};
}

PhantomSpec random_phantom_spec(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  // Redraw from the same stream until the shell fits the pyramid; valid first
  // draws are unaffected.
  for (int attempt = 0; attempt < 100; ++attempt) {
    PhantomSpec s = PhantomSpec::defaults();
    s.meta.dims = {40, 40, 40, 4};
    s.lv.tilt_deg = uniform(-12.0, 12.0);
    s.lv.c = uniform(3.5, 4.5);
    s.lv.a = uniform(1.8, 2.5);
    s.lv.b = uniform(1.8, 2.5);
    const double apex_depth = uniform(2.5, 3.5);
    const double offset = uniform(-0.5, 0.5);
    s.lv.center = s.lv.long_axis() * (apex_depth + s.lv.c) + s.lv.lateral_axis() * offset;
    s.lv.center.y = 0.0;
    s.shell_thickness = uniform(0.5, 0.9);
    s.contraction_fraction = uniform(0.1, 0.3);
    s.ed_frame = static_cast<std::size_t>(uniform(0.0, 4.0)) % 4;
    s.a2c_rotation_sign = uniform(0.0, 1.0) < 0.5 ? 1 : -1;
    s.targets.a2c_offset_deg = uniform(4.0, 26.0);
    s.targets.a3c_offset_deg = uniform(19.0, 56.0);
    s.targets.a5c_offset_deg = uniform(14.0, 31.0);
    s.targets.sax_apex_fraction = uniform(0.12, 0.18);
    s.targets.sax_pap_fraction = uniform(0.42, 0.48);
    s.targets.sax_mv_fraction = uniform(0.76, 0.79);
    try {
      s.validate();
      return s;
    } catch (const Error&) {
    }
  }
  throw Error(ErrorKind::internal, "could not draw a valid phantom spec");
}

std::unique_ptr<LandmarkProvider> phantom_landmark_provider(const PhantomTruth& truth) {
  return std::make_unique<PhantomLandmarkProvider>(truth);
}

double phantom_plane_score(const PlaneAD& candidate, const PlaneAD& truth) {
  const PlaneDifference diff = plane_difference(candidate, truth);
  const double a = diff.angle_deg / kPhantomSigmaAngleDeg;
  const double d = diff.distance_cm / kPhantomSigmaDistanceCm;
  return std::exp(-(a * a + d * d));
}

std::unique_ptr<ViewScorer> phantom_scorer(const PhantomTruth& truth) {
  return std::make_unique<PhantomScorer>(truth.views);
}

}  // namespace echoslice
