#include "echoslice/geometry.hpp"

#include <algorithm>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "echoslice/error.hpp"

namespace echoslice {
namespace {

// Below this, n x [1,0,0] is treated as degenerate.
constexpr double kParallelTolerance = 1e-6;
// Horizontal component below which the azimuth is undefined (poles).
constexpr double kPoleTolerance = 1e-12;

double axis_value(double lo, double hi, std::size_t idx, std::size_t count) {
  return lo + static_cast<double>(idx) * (hi - lo) / static_cast<double>(count - 1);
}

}  // namespace

Vec3 normalize(const Vec3& v) {
  const double len = norm(v);
  if (!(len > 0.0) || !std::isfinite(len)) throw input_error("cannot normalize a zero vector");
  return v / len;
}

double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

CartesianPoint spherical_to_cartesian(const SphericalPoint& p) {
  const double phi = deg_to_rad(p.phi);
  const double theta = deg_to_rad(p.theta);
  const double ct = std::cos(theta);
  return {p.rho * std::cos(phi) * ct, p.rho * std::sin(theta), p.rho * std::sin(phi) * ct};
}

SphericalPoint cartesian_to_spherical(const CartesianPoint& q) {
  const double rho = norm(q);
  if (rho == 0.0) return {};
  const double theta = std::asin(std::clamp(q.y / rho, -1.0, 1.0));
  const double horizontal = std::hypot(q.x, q.z);
  const double phi = horizontal <= kPoleTolerance * rho ? 0.0 : std::atan2(q.z, q.x);
  return {rho, rad_to_deg(phi), rad_to_deg(theta)};
}

SphericalPoint grid_coordinate(const VolumeMeta& meta, std::size_t i, std::size_t j,
                               std::size_t k) {
  const auto& d = meta.dims;
  if (i >= d.i || j >= d.j || k >= d.k) {
    throw input_error("grid index (" + std::to_string(i) + "," + std::to_string(j) + "," +
                      std::to_string(k) + ") out of range");
  }
  const auto& b = meta.bounds;
  return {axis_value(b.rho_min, b.rho_max, i, d.i), axis_value(b.phi_min, b.phi_max, j, d.j),
          axis_value(b.theta_min, b.theta_max, k, d.k)};
}

PlanePN::PlanePN(const Vec3& point, const Vec3& normal)
    : point_(point), normal_(normalize(normal)) {
  if (!std::isfinite(point.x) || !std::isfinite(point.y) || !std::isfinite(point.z)) {
    throw input_error("plane point must be finite");
  }
}

PlaneAD plane_pn_to_ad(const PlanePN& plane) {
  const Vec3& n = plane.normal();
  const double d = dot(n, plane.point());
  const double phi = std::hypot(n.x, n.z) <= kPoleTolerance ? 0.0 : std::atan2(n.z, n.x);
  const double theta = std::asin(std::clamp(n.y, -1.0, 1.0));
  return {d, rad_to_deg(phi), rad_to_deg(theta)};
}

PlanePN plane_ad_to_pn(const PlaneAD& plane) {
  if (!std::isfinite(plane.d) || !std::isfinite(plane.phi_n) || !std::isfinite(plane.theta_n)) {
    throw input_error("plane parameters must be finite");
  }
  const double phi = deg_to_rad(plane.phi_n);
  const double theta = deg_to_rad(plane.theta_n);
  const Vec3 n{std::cos(theta) * std::cos(phi), std::sin(theta), std::cos(theta) * std::sin(phi)};
  return PlanePN(plane.d * n, n);
}

PlaneBasis plane_basis(const PlanePN& plane) {
  const Vec3& n = plane.normal();
  Vec3 u = cross(n, Vec3{1, 0, 0});
  if (norm(u) < kParallelTolerance) u = cross(n, Vec3{0, 1, 0});
  u = normalize(u);
  const Vec3 v = normalize(cross(n, u));
  return {plane.point(), u, v, n};
}

CartesianPoint plane_point(const PlaneBasis& basis, double s, double t) { return basis.at(s, t); }

PlaneAD canonical(const PlaneAD& plane) { return plane_pn_to_ad(plane_ad_to_pn(plane)); }

PlaneDifference plane_difference(const PlaneAD& a, const PlaneAD& b) {
  const PlanePN pa = plane_ad_to_pn(a);
  const PlanePN pb = plane_ad_to_pn(b);
  const double c = dot(pa.normal(), pb.normal());
  const double sign = c < 0.0 ? -1.0 : 1.0;
  // Sine/cosine form keeps precision for nearly parallel normals.
  const double angle = std::atan2(norm(cross(pa.normal(), pb.normal())), std::abs(c));
  return {rad_to_deg(angle), std::abs(a.d - sign * b.d)};
}

void to_json(nlohmann::json& j, const Vec3& v) { j = nlohmann::json::array({v.x, v.y, v.z}); }

void from_json(const nlohmann::json& j, Vec3& v) {
  if (!j.is_array() || j.size() != 3) throw input_error("3-vector must be an array of 3 numbers");
  v = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void to_json(nlohmann::json& j, const PlaneAD& p) {
  j = nlohmann::json{{"d", p.d}, {"phi_n", p.phi_n}, {"theta_n", p.theta_n}};
}

void from_json(const nlohmann::json& j, PlaneAD& p) {
  p.d = j.at("d").get<double>();
  p.phi_n = j.at("phi_n").get<double>();
  p.theta_n = j.at("theta_n").get<double>();
}

void to_json(nlohmann::json& j, const PlanePN& p) {
  j = nlohmann::json{{"p", p.point()}, {"n", p.normal()}};
}

PlanePN plane_pn_from_json(const nlohmann::json& j) {
  return PlanePN(j.at("p").get<Vec3>(), j.at("n").get<Vec3>());
}

void to_json(nlohmann::json& j, const PlaneBasis& p) {
  j = nlohmann::json{{"p", p.point}, {"u", p.u}, {"v", p.v}};
}

nlohmann::json plane_all_forms_json(const PlaneAD& plane) {
  const PlanePN pn = plane_ad_to_pn(plane);
  return nlohmann::json{{"ad", plane}, {"pn", pn}, {"basis", plane_basis(pn)}};
}

}  // namespace echoslice
