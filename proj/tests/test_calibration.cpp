#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "m2r/calibration.hpp"
#include "m2r/rng.hpp"

using namespace m2r;

namespace {

Mat3 random_rotation(Rng& rng) {
  return euler_to_rotation({rng.uniform(-3.0, 3.0), rng.uniform(-1.4, 1.4),
                            rng.uniform(-3.0, 3.0)});
}

std::vector<PosePair> make_pairs(const Mat4& transform, size_t n, double noise,
                                 Rng& rng) {
  std::vector<PosePair> pairs;
  const Mat3 rot = transform.topLeftCorner<3, 3>();
  for (size_t i = 0; i < n; ++i) {
    PosePair p;
    p.timestamp = double(i) * 0.1;
    p.master.position =
        Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    p.master.rotation = random_rotation(rng);
    Eigen::Vector4d h;
    h << p.master.position, 1.0;
    p.robot.position = (transform * h).head<3>() +
                       Vec3(rng.normal(0.0, noise), rng.normal(0.0, noise),
                            rng.normal(0.0, noise));
    p.robot.rotation = rot * p.master.rotation;
    pairs.push_back(p);
  }
  return pairs;
}

Mat4 rigid_transform(Rng& rng) {
  Mat4 t = Mat4::Identity();
  t.topLeftCorner<3, 3>() = random_rotation(rng);
  t.topRightCorner<3, 1>() =
      Vec3(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
  return t;
}

}  // namespace

TEST_CASE("identity on coincident noiseless data") {
  Rng rng(7);
  const auto pairs = make_pairs(Mat4::Identity(), 50, 0.0, rng);
  const CalibrationMaps maps = fit_calibration(pairs);
  CHECK((maps.position_map - Mat4::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((maps.rotation_map - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("recovers a rigid transform from noisy data") {
  // sigma = 1 mm, N = 500; the fitted map approaches the generator as the
  // noise averages out.
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat4 t = rigid_transform(rng);
    const auto pairs = make_pairs(t, 500, 1e-3, rng);
    const CalibrationMaps maps = fit_calibration(pairs);
    CHECK((maps.position_map - t).cwiseAbs().maxCoeff() < 5e-3);
    CHECK((maps.rotation_map - t.topLeftCorner<3, 3>()).cwiseAbs().maxCoeff() < 5e-3);
  }
}

TEST_CASE("position map bottom row is pinned") {
  Rng rng(19);
  const auto pairs = make_pairs(rigid_transform(rng), 40, 1e-3, rng);
  const Mat4 a = fit_position_map(pairs);
  CHECK(a.row(3) == Eigen::RowVector4d(0, 0, 0, 1));
}

TEST_CASE("so3 projection returns an exact rotation") {
  Rng rng(29);
  const auto pairs = make_pairs(rigid_transform(rng), 100, 5e-3, rng);
  const Mat3 a = fit_rotation_map(pairs, true);
  CHECK((a * a.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(a.determinant() == doctest::Approx(1.0).epsilon(1e-9));
  // raw least squares need not be orthonormal under noise, but projecting
  // it afterwards gives the same polar factor
  const Mat3 raw = fit_rotation_map(pairs, false);
  CHECK((orthonormalize(raw) - a).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("degenerate geometry raises") {
  Rng rng(37);
  // all master positions on a plane -> design rank < 4
  std::vector<PosePair> planar;
  for (int i = 0; i < 20; ++i) {
    PosePair p;
    p.master.position = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0);
    p.master.rotation = Mat3::Identity();
    p.robot = p.master;
    planar.push_back(p);
  }
  CHECK_THROWS_AS(fit_position_map(planar), degenerate_geometry_error);
  CHECK_THROWS_AS(fit_position_map(std::vector<PosePair>(3)), degenerate_geometry_error);
  CHECK_THROWS_AS(fit_rotation_map(std::vector<PosePair>(1), false),
                  degenerate_geometry_error);
}

TEST_CASE("apply_calibration orthonormalizes the mapped rotation") {
  CalibrationMaps maps;
  maps.rotation_map << 1.1, 0.02, 0.0, -0.03, 0.9, 0.0, 0.0, 0.0, 1.05;
  Pose master;
  master.rotation = euler_to_rotation({0.4, 0.2, -0.1});
  const Pose out = apply_calibration(maps, master);
  CHECK((out.rotation * out.rotation.transpose() - Mat3::Identity())
            .cwiseAbs()
            .maxCoeff() < 1e-9);
}

TEST_CASE("report shows improvement on held-out data") {
  Rng rng(43);
  const Mat4 t = rigid_transform(rng);
  const auto fit_set = make_pairs(t, 400, 1e-3, rng);
  const auto held = make_pairs(t, 100, 1e-3, rng);
  const CalibrationMaps maps = fit_calibration(fit_set);
  const ErrorReport rep = calibration_report(maps, held);
  CHECK(rep.total_after < 0.2 * rep.total_before);
  CHECK(rep.total_after >= 0.0);
  CHECK_THROWS_AS(calibration_report(maps, {}), invalid_input_error);
}

TEST_CASE("pose pair file round trip") {
  Rng rng(53);
  const auto pairs = make_pairs(rigid_transform(rng), 17, 1e-3, rng);
  std::ostringstream out;
  write_pose_pairs(out, pairs);
  std::istringstream in(out.str());
  const auto back = read_pose_pairs(in);
  REQUIRE(back.size() == pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    CHECK(back[i].timestamp == pairs[i].timestamp);
    CHECK(back[i].master.position == pairs[i].master.position);
    CHECK(back[i].master.rotation == pairs[i].master.rotation);
    CHECK(back[i].robot.position == pairs[i].robot.position);
    CHECK(back[i].robot.rotation == pairs[i].robot.rotation);
  }
}

TEST_CASE("pose pair parse rejects truncated records") {
  std::istringstream in("0.0 1 2 3 1 0 0 0 1 0 0 0\n");
  CHECK_THROWS_AS(read_pose_pairs(in), parse_error);
  std::istringstream badtag(
      "0 0 0 0 1 0 0 0 1 0 0 0 1 0 0 0 1 0 0 0 1 0 0 0 1 gps\n");
  CHECK_THROWS_AS(read_pose_pairs(badtag), parse_error);
}

TEST_CASE("calibration maps file round trip") {
  Rng rng(61);
  const auto pairs = make_pairs(rigid_transform(rng), 50, 1e-3, rng);
  const CalibrationMaps maps = fit_calibration(pairs);
  std::ostringstream out;
  write_calibration_maps(out, maps);
  std::istringstream in(out.str());
  const CalibrationMaps back = read_calibration_maps(in);
  CHECK(back.position_map == maps.position_map);
  CHECK(back.rotation_map == maps.rotation_map);
  CHECK(back.residual_before == maps.residual_before);
  CHECK(back.residual_after == maps.residual_after);
  std::istringstream trunc("position_map 1 2 3");
  CHECK_THROWS_AS(read_calibration_maps(trunc), parse_error);
}
