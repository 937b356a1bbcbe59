#pragma once

// Synthetic echo volumes with analytically known anatomy.
//
// Chambers are ellipsoids whose long axis lies in the y = 0 plane (the A4C
// cut), tilted by `tilt_deg` from +x toward +z. Semi-axis `a` runs along y,
// `b` is the in-plane short axis and `c` the long half-axis.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "echoslice/geometry.hpp"
#include "echoslice/landmarks.hpp"
#include "echoslice/search.hpp"
#include "echoslice/volume.hpp"

namespace echoslice {

inline constexpr std::uint8_t kShellIntensity = 200;
inline constexpr std::uint8_t kBloodIntensity = 30;

struct Ellipsoid {
  Vec3 center;
  double a = 2.0;
  double b = 2.0;
  double c = 4.0;
  double tilt_deg = 0.0;

  Vec3 long_axis() const;     ///< apex -> base
  Vec3 lateral_axis() const;  ///< in the y = 0 plane, perpendicular to long_axis
};

struct SphereMarker {
  Vec3 center;
  double radius = 1.0;
};

struct SpeckleNoise {
  double amplitude = 0.0;  ///< voxel *= 1 + amplitude * U(-1, 1)
  std::uint64_t seed = 0;
};

/// Where the ground-truth views sit inside their search ranges.
struct ViewTargets {
  double a2c_offset_deg = 15.0;  ///< away from the long-axis plane
  double a3c_offset_deg = 35.0;  ///< back from A2C
  double a5c_offset_deg = 20.0;  ///< past A4C
  double sax_apex_fraction = 0.15;
  double sax_pap_fraction = 0.45;
  double sax_mv_fraction = 0.775;
};

struct PhantomSpec {
  VolumeMeta meta;
  Ellipsoid lv;
  std::optional<Ellipsoid> la;
  std::optional<Ellipsoid> rv;
  double shell_thickness = 0.8;
  double contraction_fraction = 0.2;
  std::size_t ed_frame = 0;
  std::vector<SphereMarker> sphere_markers;
  SpeckleNoise noise;
  ViewTargets targets;
  int a2c_rotation_sign = 1;

  /// 64^3 x 8 pyramid, rho 1..15 cm, +-45 degrees, LV along the probe axis.
  static PhantomSpec defaults();
  /// Throws input_error, including "structure outside bounds".
  void validate() const;
  /// LV scale factor at frame t: 1 - cf * sin^2(pi (t - ed) / T).
  double lv_scale(std::size_t frame) const;
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
/// Missing keys keep the defaults.
void from_json(const nlohmann::json& j, PhantomSpec& s);

struct PhantomTruth {
  PhantomSpec spec;
  CartesianPoint apex;  ///< endocardial apex at end-diastole
  CartesianPoint base;
  LandmarkSet landmarks;
  std::map<View, PlaneAD> views;
  std::vector<double> lv_volume_cm3;  ///< per frame
  std::vector<double> a4c_area_cm2;   ///< LV cavity area in the A4C plane, per frame
};

void to_json(nlohmann::json& j, const PhantomTruth& t);
void from_json(const nlohmann::json& j, PhantomTruth& t);

/// Analytic ground truth without voxelizing.
PhantomTruth phantom_truth(const PhantomSpec& spec);

struct Phantom {
  VolumeSequence volume;
  PhantomTruth truth;
};

Phantom generate_phantom(const PhantomSpec& spec, unsigned threads = 1);

/// Randomized but always valid spec; small grids so end-to-end runs stay fast.
PhantomSpec random_phantom_spec(std::uint64_t seed);

/// Intensity the phantom assigns to `q` in `frame` before noise.
std::uint8_t phantom_intensity(const PhantomSpec& spec, const CartesianPoint& q, std::size_t frame);
/// Inside the LV blood pool at `frame`.
bool inside_lv_cavity(const PhantomSpec& spec, const CartesianPoint& q, std::size_t frame);

/// Projects the analytic apex and base into the rendered A4C image and
/// returns the analytic LV cavity mask.
std::unique_ptr<LandmarkProvider> phantom_landmark_provider(const PhantomTruth& truth);

inline constexpr double kPhantomSigmaAngleDeg = 5.0;
inline constexpr double kPhantomSigmaDistanceCm = 0.5;

/// exp(-(angle^2 / sigma_a^2 + distance^2 / sigma_d^2)) against the true plane.
double phantom_plane_score(const PlaneAD& candidate, const PlaneAD& truth);
std::unique_ptr<ViewScorer> phantom_scorer(const PhantomTruth& truth);

}  // namespace echoslice
