#include <cmath>
#include <numbers>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "echoslice/error.hpp"
#include "echoslice/geometry.hpp"
#include "support.hpp"

namespace echoslice {
namespace {

using testing::Rng;

void expect_vec(const Vec3& got, const Vec3& want, double tol) {
  EXPECT_NEAR(got.x, want.x, tol);
  EXPECT_NEAR(got.y, want.y, tol);
  EXPECT_NEAR(got.z, want.z, tol);
}

// Extended-precision evaluation of the scan-conversion formula.
Vec3 oracle_cartesian(long double rho, long double phi_deg, long double theta_deg) {
  const long double pi = 3.141592653589793238462643383279502884L;
  const long double p = phi_deg * pi / 180.0L;
  const long double t = theta_deg * pi / 180.0L;
  return {static_cast<double>(rho * cosl(p) * cosl(t)), static_cast<double>(rho * sinl(t)),
          static_cast<double>(rho * sinl(p) * cosl(t))};
}

TEST(SphericalToCartesian, AxisCases) {
  expect_vec(spherical_to_cartesian({10, 0, 0}), {10, 0, 0}, 1e-12);
  expect_vec(spherical_to_cartesian({10, 90, 0}), {0, 0, 10}, 1e-12);
}

TEST(SphericalToCartesian, HandEvaluatedPoint) {
  // cos45 cos30 = sqrt(6)/4, sin30 = 1/2.
  const double c = 2.0 * std::sqrt(6.0) / 4.0;
  expect_vec(spherical_to_cartesian({2, 45, 30}), {c, 1.0, c}, 1e-12);
  expect_vec(spherical_to_cartesian({2, 45, 30}), {1.224745, 1.0, 1.224745}, 1e-6);
}

TEST(SphericalToCartesian, MatchesExtendedPrecisionOracle) {
  Rng rng(21);
  for (int n = 0; n < 2000; ++n) {
    const double rho = rng.uniform(0, 20), phi = rng.uniform(-180, 180), theta = rng.uniform(-90, 90);
    const Vec3 got = spherical_to_cartesian({rho, phi, theta});
    expect_vec(got, oracle_cartesian(rho, phi, theta), 1e-12);
    EXPECT_NEAR(norm(got), rho, 1e-12);
  }
}

TEST(CartesianToSpherical, OriginAndPole) {
  const SphericalPoint o = cartesian_to_spherical({0, 0, 0});
  EXPECT_EQ(o.rho, 0.0);
  EXPECT_EQ(o.phi, 0.0);
  EXPECT_EQ(o.theta, 0.0);
  const SphericalPoint pole = cartesian_to_spherical({0, 10, 0});
  EXPECT_DOUBLE_EQ(pole.rho, 10.0);
  EXPECT_DOUBLE_EQ(pole.theta, 90.0);
  EXPECT_EQ(pole.phi, 0.0);
}

TEST(CartesianToSpherical, RoundTripInPyramid) {
  Rng rng(22);
  for (int n = 0; n < 10000; ++n) {
    const SphericalPoint p{rng.uniform(0.01, 20), rng.uniform(-89, 89), rng.uniform(-89, 89)};
    const SphericalPoint q = cartesian_to_spherical(spherical_to_cartesian(p));
    ASSERT_NEAR(q.rho, p.rho, 1e-9);
    ASSERT_NEAR(q.phi, p.phi, 1e-9);
    ASSERT_NEAR(q.theta, p.theta, 1e-9);
  }
}

TEST(GridCoordinate, EndpointsMidpointAndArithmetic) {
  VolumeMeta m;
  m.dims = {6, 5, 3, 1};
  m.bounds = {1, 11, -20, 20, -10, 30};
  EXPECT_DOUBLE_EQ(grid_coordinate(m, 0, 0, 0).rho, 1.0);
  EXPECT_DOUBLE_EQ(grid_coordinate(m, 5, 0, 0).rho, 11.0);
  EXPECT_DOUBLE_EQ(grid_coordinate(m, 2, 0, 0).rho, 5.0);
  EXPECT_DOUBLE_EQ(grid_coordinate(m, 0, 2, 0).phi, 0.0);
  EXPECT_DOUBLE_EQ(grid_coordinate(m, 0, 0, 1).theta, 10.0);
  EXPECT_DOUBLE_EQ(grid_coordinate(m, 0, 4, 2).phi, 20.0);
  EXPECT_THROW(grid_coordinate(m, 6, 0, 0), Error);
}

TEST(PlaneForms, PointNormalToAngleDistance) {
  const PlaneAD a = plane_pn_to_ad(PlanePN({0, 0, 0}, {0, 1, 0}));
  EXPECT_EQ(a.d, 0.0);
  EXPECT_EQ(a.phi_n, 0.0);
  EXPECT_DOUBLE_EQ(a.theta_n, 90.0);
  EXPECT_DOUBLE_EQ(plane_pn_to_ad(PlanePN({0, 2, 0}, {0, 1, 0})).d, 2.0);
  // Normal is normalized on construction, so d uses the unit normal.
  EXPECT_DOUBLE_EQ(plane_pn_to_ad(PlanePN({0, 2, 0}, {0, 5, 0})).d, 2.0);
}

TEST(PlaneForms, AngleDistanceToPointNormal) {
  const PlanePN a4c = plane_ad_to_pn({0, 0, 90});
  expect_vec(a4c.point(), {0, 0, 0}, 1e-15);
  expect_vec(a4c.normal(), {0, 1, 0}, 1e-15);
  const PlanePN x1 = plane_ad_to_pn({1, 0, 0});
  expect_vec(x1.point(), {1, 0, 0}, 1e-15);
  expect_vec(x1.normal(), {1, 0, 0}, 1e-15);
  EXPECT_THROW(plane_ad_to_pn({NAN, 0, 0}), Error);
  EXPECT_THROW(PlanePN({0, 0, 0}, {0, 0, 0}), Error);
}

TEST(PlaneForms, RoundTripPreservesPlaneSet) {
  Rng rng(23);
  for (int n = 0; n < 10000; ++n) {
    const Vec3 normal = rng.unit_vector();
    const Vec3 p{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)};
    const PlanePN orig(p, normal);
    const PlanePN back = plane_ad_to_pn(plane_pn_to_ad(orig));
    ASSERT_LT(norm(cross(back.normal(), orig.normal())), 1e-9);
    ASSERT_LT(std::abs(back.signed_distance(p)), 1e-9);
  }
}

TEST(PlaneForms, CanonicalFoldsTheta) {
  const PlaneAD c = canonical({2, 10, 110});
  EXPECT_LE(c.theta_n, 90.0);
  EXPECT_GE(c.theta_n, -90.0);
  const auto diff = plane_difference(c, {2, 10, 110});
  EXPECT_NEAR(diff.angle_deg, 0.0, 1e-9);
  EXPECT_NEAR(diff.distance_cm, 0.0, 1e-9);
}

TEST(PlaneBasis, ParallelToProbeAxis) {
  const PlaneBasis b = plane_basis(PlanePN({0, 0, 0}, {1, 0, 0}));
  expect_vec(b.u, {0, 0, 1}, 1e-15);
  expect_vec(b.v, {0, -1, 0}, 1e-15);
}

TEST(PlaneBasis, VerticalNormal) {
  const PlaneBasis b = plane_basis(PlanePN({0, 0, 0}, {0, 1, 0}));
  expect_vec(b.u, {0, 0, -1}, 1e-15);
  expect_vec(b.v, {-1, 0, 0}, 1e-15);
}

TEST(PlaneBasis, OrthonormalIncludingNearProbeAxis) {
  Rng rng(24);
  for (int n = 0; n < 20000; ++n) {
    Vec3 normal = rng.unit_vector();
    if (n % 4 == 0) normal = Vec3{1, 0, 0} + 1e-5 * rng.uniform(0, 1) * rng.unit_vector();
    if (n % 8 == 1) normal = Vec3{-1, 0, 0} + 1e-7 * rng.unit_vector();
    const PlaneBasis b = plane_basis(PlanePN({0, 0, 0}, normal));
    ASSERT_NEAR(norm(b.u), 1.0, 1e-12);
    ASSERT_NEAR(norm(b.v), 1.0, 1e-12);
    ASSERT_NEAR(dot(b.u, b.n), 0.0, 1e-12);
    ASSERT_NEAR(dot(b.v, b.n), 0.0, 1e-12);
    ASSERT_NEAR(dot(b.u, b.v), 0.0, 1e-12);
  }
}

TEST(PlanePoint, AffineEvaluation) {
  const PlaneBasis b = plane_basis(PlanePN({0, 0, 0}, {1, 0, 0}));
  expect_vec(plane_point(b, 0, 0), b.point, 0);
  expect_vec(plane_point(b, 1, 0), {0, 0, 1}, 1e-15);
  Rng rng(25);
  for (int n = 0; n < 1000; ++n) {
    const PlanePN pl({rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)}, rng.unit_vector());
    const PlaneBasis pb = plane_basis(pl);
    ASSERT_NEAR(pl.signed_distance(plane_point(pb, rng.uniform(-20, 20), rng.uniform(-20, 20))), 0.0, 1e-9);
  }
}

TEST(PlaneDifference, AngleAndDistance) {
  const auto same = plane_difference({3, 20, 10}, {3, 20, 10});
  EXPECT_NEAR(same.angle_deg, 0.0, 1e-12);
  EXPECT_NEAR(same.distance_cm, 0.0, 1e-12);
  EXPECT_NEAR(plane_difference({0, 0, 90}, {0, 0, 85}).angle_deg, 5.0, 1e-9);
  EXPECT_NEAR(plane_difference({1, 0, 0}, {1.5, 0, 0}).distance_cm, 0.5, 1e-12);
  // Flipped normal names the same plane with negated d.
  const auto flipped = plane_difference({2, 0, 0}, {-2, 180, 0});
  EXPECT_NEAR(flipped.angle_deg, 0.0, 1e-9);
  EXPECT_NEAR(flipped.distance_cm, 0.0, 1e-9);
}

TEST(GeometryJson, AllFormsAgree) {
  const nlohmann::json j = plane_all_forms_json({1.5, 30, 20});
  const PlaneAD ad = j.at("ad").get<PlaneAD>();
  EXPECT_EQ(ad, (PlaneAD{1.5, 30, 20}));
  const PlanePN pn = plane_pn_from_json(j.at("pn"));
  EXPECT_NEAR(pn.signed_distance({0, 0, 0}), -1.5, 1e-12);
  const Vec3 u = j.at("basis").at("u").get<Vec3>();
  EXPECT_NEAR(dot(u, pn.normal()), 0.0, 1e-12);
  EXPECT_THROW(nlohmann::json::array({1, 2}).get<Vec3>(), Error);
}

}  // namespace
}  // namespace echoslice
