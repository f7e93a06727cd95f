#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "m2r/harness.hpp"

using namespace m2r;

namespace {

WorldConfig noiseless() {
  WorldConfig cfg;
  cfg.kappa = 0.0;
  cfg.sigma_enc = 0.0;
  cfg.sigma_mocap = 0.0;
  cfg.sigma_ft = 0.0;
  cfg.sigma_gaze = 0.0;
  cfg.expert_pos_noise = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("noiseless master poses invert exactly under the true transform") {
  const WorldConfig cfg = noiseless();
  Mat4 t_star = Mat4::Identity();
  t_star.topLeftCorner<3, 3>() = cfg.t_star_rotation();
  t_star.topRightCorner<3, 1>() = cfg.t_star_translation();
  Rng rng(1);
  for (int it = 0; it < 50; ++it) {
    Pose robot;
    robot.position =
        Vec3(rng.uniform(0.3, 0.7), rng.uniform(-0.3, 0.3), rng.uniform(0, 0.3));
    robot.rotation = euler_to_rotation({rng.uniform(-1, 1), 0.3, -0.2});
    const Pose master = master_from_robot(cfg, robot, rng);
    Eigen::Vector4d h;
    h << master.position, 1.0;
    CHECK(((t_star * h).head<3>() - robot.position).norm() < 1e-12);
    CHECK((cfg.t_star_rotation() * master.rotation - robot.rotation)
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
}

TEST_CASE("calibration on noiseless pairs recovers the true transform") {
  const WorldConfig cfg = noiseless();
  Rng rng(2);
  const auto pairs = generate_calibration_pairs(cfg, 200, rng);
  const CalibrationMaps maps = fit_calibration(pairs);
  Mat4 t_star = Mat4::Identity();
  t_star.topLeftCorner<3, 3>() = cfg.t_star_rotation();
  t_star.topRightCorner<3, 1>() = cfg.t_star_translation();
  CHECK((maps.position_map - t_star).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((maps.rotation_map - cfg.t_star_rotation()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("sag makes z the dominant pre-calibration axis error") {
  WorldConfig cfg;  // default kappa > 0
  Rng rng(3);
  auto pairs = generate_calibration_pairs(cfg, 500, rng);
  const std::vector<PosePair> held(pairs.end() - 100, pairs.end());
  pairs.resize(400);
  const CalibrationMaps maps = fit_calibration(pairs);
  const ErrorReport rep = calibration_report(maps, held);
  CHECK(rep.axis_error_before.z() > rep.axis_error_before.x());
  CHECK(rep.axis_error_before.z() > rep.axis_error_before.y());
  // calibration removes at least half of the z error
  CHECK(rep.axis_error_after.z() < 0.5 * rep.axis_error_before.z());
  CHECK(rep.total_after < rep.total_before);
}

TEST_CASE("demo generation is deterministic") {
  WorldConfig cfg;
  cfg.seed = 77;
  DemoCounts counts{3, 3, 3};
  const DemoSet a = generate_master_demos(cfg, counts);
  const DemoSet b = generate_master_demos(cfg, counts);
  std::ostringstream sa, sb;
  write_episodes(sa, a.episodes);
  write_episodes(sb, b.episodes);
  CHECK(sa.str() == sb.str());
  CHECK(a.episodes.size() == 9);
  CHECK(a.bottle_positions.size() == 9);
}

TEST_CASE("generated demos pass ingestion validation") {
  WorldConfig cfg;
  cfg.seed = 5;
  const DemoSet demos = generate_master_demos(cfg, DemoCounts{4, 4, 4});
  std::ostringstream out;
  write_episodes(out, demos.episodes);
  std::istringstream in(out.str());
  const auto back = read_episodes(in);  // throws on any annotation violation
  CHECK(back.size() == demos.episodes.size());
  for (const auto& e : back) {
    CHECK_FALSE(e.frames.empty());
    if (e.subtask() == SubtaskLabel::GraspCap)
      CHECK(e.frames.front().mode.has_value());
  }
}

TEST_CASE("distractors never intersect the recorded-gaze fovea windows") {
  WorldConfig cfg;
  cfg.seed = 9;
  const DemoSet demos = generate_master_demos(cfg, DemoCounts{3, 3, 3});
  size_t stamps_seen = 0;
  for (const auto& e : demos.episodes) {
    const auto& per_frame = demos.distractor_stamps.at(e.id);
    REQUIRE(per_frame.size() == e.frames.size());
    for (size_t i = 0; i < e.frames.size(); ++i) {
      const Frame& f = e.frames[i];
      for (const auto& st : per_frame[i]) {
        const GazeSample& g = st.eye == Eye::left ? f.gaze_left : f.gaze_right;
        const FoveaWindow win =
            fovea_window(cfg, gaze_to_px(g.g.x(), cfg.image_size),
                         gaze_to_px(g.g.y(), cfg.image_size));
        const bool disjoint = st.x1 <= win.x0() || st.x0 >= win.x1() ||
                              st.y1 <= win.y0() || st.y0 >= win.y1();
        CHECK(disjoint);
        ++stamps_seen;
      }
    }
  }
  CHECK(stamps_seen > 0);
}

TEST_CASE("expert demonstrations reach their goals") {
  WorldConfig cfg;
  cfg.seed = 11;
  const DemoSet demos = generate_master_demos(cfg, DemoCounts{5, 5, 5});
  for (const auto& e : demos.episodes) {
    const Frame& last = e.frames.back();
    switch (e.subtask()) {
      case SubtaskLabel::GraspBottle:
        CHECK(last.grip_right >= 0.99);
        break;
      case SubtaskLabel::GraspCap:
        CHECK(last.grip_left >= 0.99);
        break;
      case SubtaskLabel::Rotate: {
        // rotation happened: some frames report contact torque near 1
        int rotating_frames = 0;
        for (const auto& f : e.frames)
          if (f.ft_left.torque.z() > 0.5) ++rotating_frames;
        CHECK(rotating_frames >= int(cfg.rotate_goal / cfg.rotate_rate));
        break;
      }
    }
  }
}

TEST_CASE("cap friction model is linear in the grip error") {
  WorldConfig cfg = noiseless();
  SceneState s;
  s.bottle = Vec3(0.5, 0.0, 0.0);
  s.ee_left = s.cap(cfg);
  Rng rng(13);
  for (double grip : {0.2, 0.55, 0.9}) {
    s.grip_left = grip;
    const FTReading ft = cap_ft_reading(cfg, s, 0.55, false, rng);
    CHECK(ft.force.z() == doctest::Approx(cfg.ft_gain * (grip - 0.55)).epsilon(1e-12));
    CHECK(ft.torque.z() == 0.0);
  }
  const FTReading rot = cap_ft_reading(cfg, s, 0.55, true, rng);
  CHECK(rot.torque.z() == 1.0);
  // misalignment shows up in the tangential force
  s.ee_left = s.cap(cfg) + Vec3(0.01, -0.02, 0.0);
  const FTReading mis = cap_ft_reading(cfg, s, 0.55, false, rng);
  CHECK(mis.force.x() == doctest::Approx(-cfg.align_gain * 0.01).epsilon(1e-12));
  CHECK(mis.force.y() == doctest::Approx(cfg.align_gain * 0.02).epsilon(1e-12));
}

TEST_CASE("blobs have finite support and projection hits the view") {
  WorldConfig cfg;
  SceneState s;
  s.bottle = Vec3(0.5, 0.05, 0.0);
  s.ee_left = Vec3(0.4, -0.2, 0.25);
  s.ee_right = Vec3(0.45, 0.2, 0.2);
  const Tensor img = render_scene(cfg, s);
  CHECK(img.shape == std::vector<size_t>{6, 64, 64});
  const PixelPos p = project(cfg, s.bottle, Eye::left);
  const int cx = int(std::lround(p.x)), cy = int(std::lround(p.y));
  CHECK(img.at3(0, cy, cx) > 0.5);
  // outside the stamp radius the bottle channel is exactly zero
  const int r = cfg.blob_radius;
  CHECK(img.at3(0, cy, std::min(63, cx + r + 2)) == 0.0);
  // eye views split the channels
  const Tensor left = eye_view(img, Eye::left);
  const Tensor right = eye_view(img, Eye::right);
  CHECK(left.at3(0, cy, cx) == img.at3(0, cy, cx));
  CHECK(right.at3(0, cy, cx) == img.at3(3, cy, cx));
}

TEST_CASE("noiseless gaze matches the projected target") {
  WorldConfig cfg = noiseless();
  Rng rng(17);
  const Vec3 target(0.5, 0.1, 0.05);
  const GazeSample g = detail::noisy_gaze(cfg, target, Eye::right, rng);
  const PixelPos p = project(cfg, target, Eye::right);
  CHECK(gaze_to_px(g.g.x(), cfg.image_size) == int(std::lround(p.x)));
  CHECK(gaze_to_px(g.g.y(), cfg.image_size) == int(std::lround(p.y)));
}

TEST_CASE("bottle position recovers from the rendered frame") {
  WorldConfig cfg;
  cfg.seed = 19;
  const DemoSet demos = generate_master_demos(cfg, DemoCounts{3, 0, 0});
  for (const auto& e : demos.episodes) {
    const Vec3 truth = demos.bottle_positions.at(e.id);
    const Vec3 rec = bottle_position_from_frame(cfg, e.frames.front());
    CHECK((rec - truth).head<2>().norm() < 1.5 * cfg.meters_per_px());
  }
}

TEST_CASE("config validation rejects bad worlds") {
  WorldConfig cfg;
  cfg.sigma_mocap = -1.0;
  CHECK_THROWS_AS(cfg.validate(), invalid_input_error);
  WorldConfig cfg2;
  cfg2.fovea_size = 128;
  CHECK_THROWS_AS(cfg2.validate(), config_error);
  WorldConfig cfg3;
  cfg3.ws_x_max = cfg3.ws_x_min;
  CHECK_THROWS_AS(cfg3.validate(), invalid_input_error);
  WorldConfig unreachable;
  unreachable.bottle_x_min = unreachable.bottle_x_max = 2.0;
  Rng rng(23);
  CHECK_THROWS_AS(detail::sample_bottle(unreachable, rng), config_error);
}

TEST_CASE("sampled bottles stay inside bounds and reach") {
  WorldConfig cfg;
  Rng rng(29);
  for (int it = 0; it < 100; ++it) {
    const Vec3 b = detail::sample_bottle(cfg, rng);
    CHECK(b.x() >= cfg.bottle_x_min);
    CHECK(b.x() <= cfg.bottle_x_max);
    CHECK(b.y() >= cfg.bottle_y_min);
    CHECK(b.y() <= cfg.bottle_y_max);
    CHECK(b.z() == 0.0);
    CHECK(std::hypot(b.x(), b.y()) + cfg.cap_height <= cfg.max_reach);
  }
}
