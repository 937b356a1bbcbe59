#pragma once

// Coordinate conventions: rho is the distance from the transducer, phi the
// azimuth in the x-z plane measured from +x, theta the elevation from the
// x-z plane. All public angles are degrees and all lengths centimeters.

#include <cmath>
#include <cstddef>

#include <nlohmann/json_fwd.hpp>

#include "echoslice/volume.hpp"

namespace echoslice {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  friend constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }

  friend bool operator==(const Vec3&, const Vec3&) = default;
};

using CartesianPoint = Vec3;

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
/// Throws on a zero or non-finite vector.
Vec3 normalize(const Vec3& v);

double deg_to_rad(double deg);
double rad_to_deg(double rad);

struct SphericalPoint {
  double rho = 0.0;    ///< cm
  double phi = 0.0;    ///< degrees
  double theta = 0.0;  ///< degrees
};

CartesianPoint spherical_to_cartesian(const SphericalPoint& p);
/// Origin maps to (0,0,0); on the poles phi is reported as 0.
SphericalPoint cartesian_to_spherical(const CartesianPoint& q);

/// Linear sampling of the bounds: index 0 maps to the minimum, N-1 to the maximum.
SphericalPoint grid_coordinate(const VolumeMeta& meta, std::size_t i, std::size_t j, std::size_t k);

/// Plane through `point` with unit `normal`. The constructor normalizes.
class PlanePN {
 public:
  PlanePN(const Vec3& point, const Vec3& normal);

  const Vec3& point() const noexcept { return point_; }
  const Vec3& normal() const noexcept { return normal_; }
  /// n . (q - P)
  double signed_distance(const Vec3& q) const noexcept { return dot(normal_, q - point_); }

 private:
  Vec3 point_;
  Vec3 normal_;
};

/// Signed offset from the origin along the normal, plus the normal's azimuth
/// and elevation. Canonical values from plane_pn_to_ad keep theta_n within
/// [-90, 90]; search candidates may step outside that band, which still
/// names a valid normal.
struct PlaneAD {
  double d = 0.0;
  double phi_n = 0.0;
  double theta_n = 0.0;

  friend bool operator==(const PlaneAD&, const PlaneAD&) = default;
};

/// Origin point and orthonormal in-plane directions.
struct PlaneBasis {
  Vec3 point;
  Vec3 u;
  Vec3 v;
  Vec3 n;

  Vec3 at(double s, double t) const noexcept { return point + s * u + t * v; }
};

PlaneAD plane_pn_to_ad(const PlanePN& plane);
PlanePN plane_ad_to_pn(const PlaneAD& plane);
PlaneBasis plane_basis(const PlanePN& plane);
CartesianPoint plane_point(const PlaneBasis& basis, double s, double t);

/// Same plane set as `plane` with theta_n folded into [-90, 90].
PlaneAD canonical(const PlaneAD& plane);

/// Angle between the two planes' normals in degrees (orientation-agnostic,
/// 0..90) and the offset difference once normals are aligned.
struct PlaneDifference {
  double angle_deg = 0.0;
  double distance_cm = 0.0;
};
PlaneDifference plane_difference(const PlaneAD& a, const PlaneAD& b);

void to_json(nlohmann::json& j, const Vec3& v);
void from_json(const nlohmann::json& j, Vec3& v);
void to_json(nlohmann::json& j, const PlaneAD& p);
void from_json(const nlohmann::json& j, PlaneAD& p);
void to_json(nlohmann::json& j, const PlanePN& p);
PlanePN plane_pn_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const PlaneBasis& p);
/// {"ad": {...}, "pn": {...}, "basis": {...}} for one plane.
nlohmann::json plane_all_forms_json(const PlaneAD& plane);

}  // namespace echoslice
