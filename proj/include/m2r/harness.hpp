#ifndef M2R_HARNESS_HPP
#define M2R_HARNESS_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "m2r/calibration.hpp"
#include "m2r/dataset.hpp"
#include "m2r/errors.hpp"
#include "m2r/gaze.hpp"
#include "m2r/kinematics.hpp"
#include "m2r/rng.hpp"

namespace m2r {

// Synthetic master/robot world. Kinematic point-pose simulation: poses,
// blob images, and a deterministic cap-friction model, no contact
// dynamics. Ground truth (rigid master offset T*, bottle positions,
// friction band) is known, so calibration and the ablations can be
// verified against it.
struct WorldConfig {
  // workspace bounds (m), robot base at the origin
  double ws_x_min = 0.35, ws_x_max = 0.65;
  double ws_y_min = -0.25, ws_y_max = 0.25;
  double max_reach = 0.75;
  // bottle position distribution (table z = 0)
  double bottle_x_min = 0.42, bottle_x_max = 0.58;
  double bottle_y_min = -0.15, bottle_y_max = 0.15;
  double cap_height = 0.12;
  double grasp_height = 0.05;  // bottle grasp point above table

  // master kinematic gap: z sag per meter of horizontal reach, rigid offset T*
  double kappa = 0.08;
  double t_star_tx = 0.02, t_star_ty = -0.01, t_star_tz = 0.03;
  double t_star_yaw = 0.05;
  double sigma_enc = 0.0;       // encoder noise (rad)
  double arm_length = 0.5;      // lever arm turning encoder noise into pose noise
  double sigma_mocap = 0.001;   // motion-capture noise (m)

  // cap friction: rotation progresses only inside the grip-force band
  double band_center_mean = 0.55, band_center_jitter = 0.08;
  double band_half = 0.10, band_walk = 0.008;
  double ft_gain = 10.0, sigma_ft = 0.05;
  double align_gain = 20.0, align_eps = 0.02;
  double rotate_rate = 0.15;                      // rad per frame while in band
  double rotate_goal = std::numbers::pi / 2.0;    // one scripted increment

  // camera: orthographic-ish projection of the tabletop
  int image_size = 64, fovea_size = 32;
  double view_x_min = 0.20, view_x_max = 0.85;
  double view_y_min = -0.40, view_y_max = 0.40;
  double z_tilt = 0.25;          // world z leaks into the x projection
  double eye_disparity = 0.012;  // right-eye world-y shift (m)
  double blob_sigma = 1.3;       // px
  int blob_radius = 4;           // stamp half-extent, px
  double sigma_gaze = 0.01;      // gaze noise, normalized units
  int distractors = 2;           // out-of-fovea "human hand" blobs (master side)

  double frame_dt = 0.1;  // 10 Hz
  // expert motion
  double reach_step = 0.05;
  double local_radius = 0.13;    // GraspCap global->local label distance (m)
  double local_gain = 0.35;
  double bottle_tol = 0.02, cap_tol = 0.010;
  double grip_track_gain = 0.8;
  // demonstration-time exploration: widens the visited state distribution
  // so cloned policies see off-ray states during training
  double expert_pos_noise = 0.004;
  double init_grip_max = 0.6;

  std::uint64_t seed = 1;

  void validate() const {
    if (sigma_enc < 0 || sigma_mocap < 0 || sigma_ft < 0 || sigma_gaze < 0)
      throw invalid_input_error("WorldConfig: negative noise sigma");
    if (ws_x_max <= ws_x_min || ws_y_max <= ws_y_min)
      throw invalid_input_error("WorldConfig: empty workspace bounds");
    if (fovea_size > image_size)
      throw config_error("WorldConfig: fovea larger than image");
  }

  Mat3 t_star_rotation() const {
    return euler_to_rotation({t_star_yaw, 0.0, 0.0});
  }
  Vec3 t_star_translation() const { return {t_star_tx, t_star_ty, t_star_tz}; }

  double meters_per_px() const {
    return (view_y_max - view_y_min) / double(image_size - 1);
  }
};

// ---------------------------------------------------------------------------
// Projection and rendering

struct PixelPos {
  double x, y;
};

inline PixelPos project(const WorldConfig& cfg, const Vec3& world, Eye eye) {
  const double wy = world.y() + (eye == Eye::right ? cfg.eye_disparity : 0.0);
  const double u = (wy - cfg.view_y_min) / (cfg.view_y_max - cfg.view_y_min);
  // opposite per-eye tilt: height shifts the two projections apart, so the
  // stereo pair resolves all three axes (one view alone cannot see motion
  // along its tilt null direction)
  const double tilt = eye == Eye::left ? cfg.z_tilt : -cfg.z_tilt;
  const double xe = world.x() + tilt * world.z();
  const double v = (cfg.view_x_max - xe) / (cfg.view_x_max - cfg.view_x_min);
  return {u * double(cfg.image_size - 1), v * double(cfg.image_size - 1)};
}

// Gaussian bump with finite support (zero outside the stamp box).
inline void render_blob(Tensor& image, int channel, const WorldConfig& cfg,
                        const PixelPos& p, double amplitude) {
  const int s = cfg.image_size;
  const int cx = int(std::lround(p.x));
  const int cy = int(std::lround(p.y));
  const double inv2s2 = 1.0 / (2.0 * cfg.blob_sigma * cfg.blob_sigma);
  for (int dy = -cfg.blob_radius; dy <= cfg.blob_radius; ++dy) {
    const int y = cy + dy;
    if (y < 0 || y >= s) continue;
    for (int dx = -cfg.blob_radius; dx <= cfg.blob_radius; ++dx) {
      const int x = cx + dx;
      if (x < 0 || x >= s) continue;
      const double rx = double(x) - p.x;
      const double ry = double(y) - p.y;
      image.at3(size_t(channel), size_t(y), size_t(x)) +=
          amplitude * std::exp(-(rx * rx + ry * ry) * inv2s2);
    }
  }
}

// Stereo scene image: channels 0-2 left eye, 3-5 right eye; within each
// eye: bottle, cap, end-effectors. Amplitudes are constant so images
// depend on geometry only; gripper state travels in the state vector.
struct SceneState {
  Vec3 bottle = Vec3::Zero();
  Vec3 ee_left = Vec3::Zero();
  Vec3 ee_right = Vec3::Zero();
  double grip_left = 0.0, grip_right = 0.0;

  Vec3 cap(const WorldConfig& cfg) const {
    return bottle + Vec3(0.0, 0.0, cfg.cap_height);
  }
  Vec3 grasp_point(const WorldConfig& cfg) const {
    return bottle + Vec3(0.0, 0.0, cfg.grasp_height);
  }
};

inline Tensor render_scene(const WorldConfig& cfg, const SceneState& s) {
  Tensor img({6, size_t(cfg.image_size), size_t(cfg.image_size)});
  for (int e = 0; e < 2; ++e) {
    const Eye eye = e == 0 ? Eye::left : Eye::right;
    const int base = 3 * e;
    render_blob(img, base + 0, cfg, project(cfg, s.bottle, eye), 1.0);
    render_blob(img, base + 1, cfg, project(cfg, s.cap(cfg), eye), 1.0);
    render_blob(img, base + 2, cfg, project(cfg, s.ee_left, eye), 1.0);
    render_blob(img, base + 2, cfg, project(cfg, s.ee_right, eye), 0.8);
  }
  return img;
}

// Per-eye 3-channel view of a stereo image.
inline Tensor eye_view(const Tensor& stereo, Eye eye) {
  const size_t s = stereo.shape[1];
  Tensor out({3, s, s});
  const size_t base = eye == Eye::left ? 0 : 3;
  std::copy(stereo.v.begin() + long(base * s * s),
            stereo.v.begin() + long((base + 3) * s * s), out.v.begin());
  return out;
}

// Clamped fovea window around a gaze pixel (same rule as foveate()).
inline FoveaWindow fovea_window(const WorldConfig& cfg, int gx, int gy) {
  const int half = cfg.fovea_size / 2;
  FoveaWindow win;
  win.half_extent = half;
  win.cx = std::clamp(gx, half, cfg.image_size - cfg.fovea_size + half);
  win.cy = std::clamp(gy, half, cfg.image_size - cfg.fovea_size + half);
  return win;
}

struct DistractorStamp {
  Eye eye;
  int x0, y0, x1, y1;  // half-open stamp box
};

// Place "human hand" distractor blobs on the end-effector channel of a
// master-side image, rejected until the stamp box is disjoint from the
// recorded-gaze fovea window of its eye. Appends the stamp boxes placed.
inline void render_distractors(Tensor& stereo, const WorldConfig& cfg, Rng& rng,
                               const FoveaWindow& win_left,
                               const FoveaWindow& win_right,
                               std::vector<DistractorStamp>* stamps = nullptr) {
  const int s = cfg.image_size;
  const int r = cfg.blob_radius;
  for (int e = 0; e < 2; ++e) {
    const FoveaWindow& win = e == 0 ? win_left : win_right;
    for (int k = 0; k < cfg.distractors; ++k) {
      double px = 0, py = 0;
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        px = rng.uniform(double(r), double(s - 1 - r));
        py = rng.uniform(double(r), double(s - 1 - r));
        const int cx = int(std::lround(px)), cy = int(std::lround(py));
        const bool overlaps = cx + r >= win.x0() && cx - r < win.x1() &&
                              cy + r >= win.y0() && cy - r < win.y1();
        placed = !overlaps;
      }
      if (!placed) continue;  // fovea covers nearly the whole image
      const int ch = 3 * e + 2;
      const int cx = int(std::lround(px)), cy = int(std::lround(py));
      const double inv2s2 = 1.0 / (2.0 * cfg.blob_sigma * cfg.blob_sigma);
      for (int dy = -r; dy <= r; ++dy) {
        const int y = cy + dy;
        if (y < 0 || y >= s) continue;
        for (int dx = -r; dx <= r; ++dx) {
          const int x = cx + dx;
          if (x < 0 || x >= s) continue;
          const double rx = double(x) - px, ry = double(y) - py;
          stereo.at3(size_t(ch), size_t(y), size_t(x)) +=
              std::exp(-(rx * rx + ry * ry) * inv2s2);
        }
      }
      if (stamps)
        stamps->push_back({e == 0 ? Eye::left : Eye::right,
                           std::max(0, cx - r), std::max(0, cy - r),
                           std::min(s, cx + r + 1), std::min(s, cy + r + 1)});
    }
  }
}

// ---------------------------------------------------------------------------
// Master-side pose corruption: rigid offset T* plus gravity sag and noise.
// master = T*^{-1} o robot, with the sag droop applied on the master side.

inline Pose master_from_robot(const WorldConfig& cfg, const Pose& robot, Rng& rng) {
  const Mat3 r_star = cfg.t_star_rotation();
  Pose master;
  master.position = r_star.transpose() * (robot.position - cfg.t_star_translation());
  master.rotation = r_star.transpose() * robot.rotation;
  const double reach = std::hypot(master.position.x(), master.position.y());
  master.position.z() -= cfg.kappa * reach;
  if (cfg.sigma_enc > 0.0) {
    const double s = cfg.sigma_enc * cfg.arm_length;
    master.position += Vec3(rng.normal(0.0, s), rng.normal(0.0, s), rng.normal(0.0, s));
  }
  return master;
}

inline Pose add_mocap_noise(const WorldConfig& cfg, const Pose& p, Rng& rng) {
  Pose out = p;
  if (cfg.sigma_mocap > 0.0)
    out.position += Vec3(rng.normal(0.0, cfg.sigma_mocap),
                         rng.normal(0.0, cfg.sigma_mocap),
                         rng.normal(0.0, cfg.sigma_mocap));
  return out;
}

// Random master/robot pose pairs over the workspace, as recorded during a
// mocap calibration session. Returns pairs with mocap provenance.
inline std::vector<PosePair> generate_calibration_pairs(const WorldConfig& cfg,
                                                        size_t n, Rng& rng) {
  std::vector<PosePair> pairs;
  pairs.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    Pose robot;
    robot.position = Vec3(rng.uniform(cfg.ws_x_min, cfg.ws_x_max),
                          rng.uniform(cfg.ws_y_min, cfg.ws_y_max),
                          rng.uniform(0.0, 0.30));
    robot.rotation = euler_to_rotation({rng.uniform(-0.5, 0.5),
                                        rng.uniform(-0.4, 0.4),
                                        rng.uniform(-0.4, 0.4)});
    const Pose master = master_from_robot(cfg, robot, rng);
    PosePair p;
    p.timestamp = double(i) * cfg.frame_dt;
    p.master = add_mocap_noise(cfg, master, rng);
    p.robot = add_mocap_noise(cfg, robot, rng);
    p.provenance = Provenance::mocap;
    pairs.push_back(p);
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Scripted expert

struct ExpertPhaseState {
  double band_center = 0.55;
  double rotation_progress = 0.0;
};

inline Vec3 reach_step_toward(const WorldConfig& cfg, const Vec3& pos,
                              const Vec3& target) {
  const Vec3 d = target - pos;
  const double dist = d.norm();
  if (dist <= cfg.local_radius) return cfg.local_gain * d;
  if (dist <= cfg.reach_step) return d;
  return d * (cfg.reach_step / dist);
}

// One expert action for the current subtask. `ft_grip_error` is the
// observable grip-force error (force z / gain) used during Rotate.
inline ActionDelta expert_action(const WorldConfig& cfg, SubtaskLabel subtask,
                                 const SceneState& s, double ft_grip_error,
                                 const ExpertPhaseState& phase) {
  ActionDelta a;
  switch (subtask) {
    case SubtaskLabel::GraspBottle: {
      const Vec3 target = s.grasp_point(cfg);
      const double dist = (target - s.ee_right).norm();
      a.dpos = reach_step_toward(cfg, s.ee_right, target);
      // grip command ramps smoothly from hold-open to close, starting at
      // twice the grasp tolerance: the ramp then spans several pixels of
      // visual offset, which a cloned policy can resolve
      a.dgrip = 0.34 * std::clamp((2.0 * cfg.bottle_tol - dist) /
                                      (1.5 * cfg.bottle_tol),
                                  -1.0, 1.0);
      break;
    }
    case SubtaskLabel::GraspCap: {
      const Vec3 target = s.cap(cfg);
      const double dist = (target - s.ee_left).norm();
      a.dpos = reach_step_toward(cfg, s.ee_left, target);
      a.dgrip = 0.34 * std::clamp((2.0 * cfg.cap_tol - dist) / (1.5 * cfg.cap_tol),
                                  -1.0, 1.0);
      break;
    }
    case SubtaskLabel::Rotate: {
      const Vec3 target = s.cap(cfg);
      Vec3 d = target - s.ee_left;
      d.z() = 0.0;
      a.dpos = 0.3 * d;
      a.dgrip = -cfg.grip_track_gain * ft_grip_error;
      if (std::abs(ft_grip_error) <= 0.5 * cfg.band_half)
        a.dori.x() = cfg.rotate_rate;  // dori = (dyaw, dpitch, droll)
      break;
    }
  }
  return a;
}

// Deterministic F/T model. The left (cap) arm reads the grip-force error
// against the hidden band center plus the tangential alignment error;
// torque appears while rotation progresses.
inline FTReading cap_ft_reading(const WorldConfig& cfg, const SceneState& s,
                                double band_center, bool rotating, Rng& rng) {
  FTReading ft;
  ft.arm = Arm::left;
  const Vec3 cap = s.cap(cfg);
  ft.force.x() = cfg.align_gain * (cap.x() - s.ee_left.x()) + rng.normal(0.0, cfg.sigma_ft);
  ft.force.y() = cfg.align_gain * (cap.y() - s.ee_left.y()) + rng.normal(0.0, cfg.sigma_ft);
  ft.force.z() = cfg.ft_gain * (s.grip_left - band_center) + rng.normal(0.0, cfg.sigma_ft);
  ft.torque.z() = (rotating ? 1.0 : 0.0) + rng.normal(0.0, cfg.sigma_ft);
  return ft;
}

inline FTReading hold_ft_reading(const WorldConfig& cfg, const SceneState& s, Rng& rng) {
  FTReading ft;
  ft.arm = Arm::right;
  ft.force.z() = 2.0 * s.grip_right + rng.normal(0.0, cfg.sigma_ft);
  return ft;
}

// ---------------------------------------------------------------------------
// Demonstration generation

struct DemoCounts {
  size_t grasp_bottle = 0;
  size_t grasp_cap = 0;
  size_t rotate = 0;
};

struct DemoSet {
  std::vector<Episode> episodes;
  // ground truth, keyed by episode id
  std::map<std::string, Vec3> bottle_positions;
  Mat4 true_transform = Mat4::Identity();  // robot = T* o master (positions)
  std::map<std::string, std::vector<std::vector<DistractorStamp>>> distractor_stamps;
};

namespace detail {

inline Vec3 sample_bottle(const WorldConfig& cfg, Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    const Vec3 b(rng.uniform(cfg.bottle_x_min, cfg.bottle_x_max),
                 rng.uniform(cfg.bottle_y_min, cfg.bottle_y_max), 0.0);
    if (std::hypot(b.x(), b.y()) + cfg.cap_height <= cfg.max_reach) return b;
  }
  throw config_error("bottle distribution unreachable after 100 resamples");
}

inline GazeSample noisy_gaze(const WorldConfig& cfg, const Vec3& target, Eye eye,
                             Rng& rng) {
  const PixelPos p = project(cfg, target, eye);
  GazeSample g;
  g.eye = eye;
  g.g.x() = std::clamp(px_to_gaze(int(std::lround(p.x)), cfg.image_size) +
                           rng.normal(0.0, cfg.sigma_gaze),
                       -1.0, 1.0);
  g.g.y() = std::clamp(px_to_gaze(int(std::lround(p.y)), cfg.image_size) +
                           rng.normal(0.0, cfg.sigma_gaze),
                       -1.0, 1.0);
  return g;
}

// Simulates one scripted episode in robot task space and records the
// master-side view of it.
inline Episode run_scripted_episode(const WorldConfig& cfg, SubtaskLabel subtask,
                                    const std::string& id, const Vec3& bottle,
                                    Rng& rng, DemoSet* out) {
  Episode ep;
  ep.id = id;
  SceneState s;
  s.bottle = bottle;
  // start poses sampled across the workspace so approach directions (and
  // the sign of the position error) vary over the dataset
  auto sample_start = [&] {
    return Vec3(rng.uniform(cfg.ws_x_min, cfg.ws_x_max),
                rng.uniform(cfg.ws_y_min, cfg.ws_y_max), rng.uniform(0.05, 0.30));
  };
  s.ee_right = sample_start();
  s.ee_left = sample_start();
  ExpertPhaseState phase;
  phase.band_center = cfg.band_center_mean +
                      rng.uniform(-cfg.band_center_jitter, cfg.band_center_jitter);
  if (subtask == SubtaskLabel::GraspBottle)
    s.grip_right = rng.uniform(0.0, cfg.init_grip_max);
  if (subtask == SubtaskLabel::GraspCap)
    s.grip_left = rng.uniform(0.0, cfg.init_grip_max);
  if (subtask == SubtaskLabel::GraspCap || subtask == SubtaskLabel::Rotate) {
    // right arm already holds the bottle
    s.ee_right = s.grasp_point(cfg);
    s.grip_right = 1.0;
  }
  if (subtask == SubtaskLabel::Rotate) {
    s.ee_left = s.cap(cfg) + Vec3(rng.uniform(-0.002, 0.002),
                                  rng.uniform(-0.002, 0.002), 0.0);
    s.grip_left = 1.0;
  }

  std::vector<std::vector<DistractorStamp>> ep_stamps;
  const int max_frames = 120;
  Pose ee_left_pose, ee_right_pose;
  ee_left_pose.rotation = Mat3::Identity();
  double left_yaw = 0.0;
  for (int t = 0; t < max_frames; ++t) {
    const Vec3 gaze_target =
        subtask == SubtaskLabel::GraspBottle ? s.grasp_point(cfg) : s.cap(cfg);
    Frame f;
    f.t = double(t) * cfg.frame_dt;
    f.subtask = subtask;
    f.gaze_left = noisy_gaze(cfg, gaze_target, Eye::left, rng);
    f.gaze_right = noisy_gaze(cfg, gaze_target, Eye::right, rng);

    const bool rotating = subtask == SubtaskLabel::Rotate &&
                          std::abs(s.grip_left - phase.band_center) <= cfg.band_half;
    f.ft_left = cap_ft_reading(cfg, s, phase.band_center,
                               rotating && subtask == SubtaskLabel::Rotate, rng);
    f.ft_right = hold_ft_reading(cfg, s, rng);

    // master-side stereo image with out-of-fovea distractors
    f.image = render_scene(cfg, s);
    const FoveaWindow win_l =
        fovea_window(cfg, gaze_to_px(f.gaze_left.g.x(), cfg.image_size),
                     gaze_to_px(f.gaze_left.g.y(), cfg.image_size));
    const FoveaWindow win_r =
        fovea_window(cfg, gaze_to_px(f.gaze_right.g.x(), cfg.image_size),
                     gaze_to_px(f.gaze_right.g.y(), cfg.image_size));
    std::vector<DistractorStamp> stamps;
    render_distractors(f.image, cfg, rng, win_l, win_r, &stamps);
    ep_stamps.push_back(std::move(stamps));

    // recorded (master encoder) poses
    Pose robot_left, robot_right;
    robot_left.position = s.ee_left;
    robot_left.rotation = euler_to_rotation({left_yaw, 0.0, 0.0});
    robot_right.position = s.ee_right;
    f.pose_left = master_from_robot(cfg, robot_left, rng);
    f.pose_right = master_from_robot(cfg, robot_right, rng);
    f.grip_left = s.grip_left;
    f.grip_right = s.grip_right;

    if (subtask == SubtaskLabel::GraspCap) {
      const double dist = (s.cap(cfg) - s.ee_left).norm();
      f.mode = dist <= cfg.local_radius ? ActionMode::local : ActionMode::global;
    }

    ep.frames.push_back(std::move(f));

    // termination checks
    if (subtask == SubtaskLabel::GraspBottle &&
        (s.grasp_point(cfg) - s.ee_right).norm() <= cfg.bottle_tol &&
        s.grip_right >= 0.99)
      break;
    if (subtask == SubtaskLabel::GraspCap &&
        (s.cap(cfg) - s.ee_left).norm() <= cfg.cap_tol && s.grip_left >= 0.99)
      break;
    if (subtask == SubtaskLabel::Rotate && phase.rotation_progress >= cfg.rotate_goal)
      break;

    // expert step
    const double ft_err = f.ft_left.force.z() / cfg.ft_gain;
    ActionDelta a = expert_action(cfg, subtask, s, ft_err, phase);
    if (subtask != SubtaskLabel::Rotate && cfg.expert_pos_noise > 0.0) {
      // the cap grasp works to a fine tolerance, so its exploration
      // shrinks with the commanded step: constant noise would swamp the
      // small final-approach labels. The bottle grasp has a coarse
      // tolerance and keeps full noise for off-ray coverage.
      double sigma = cfg.expert_pos_noise;
      if (subtask == SubtaskLabel::GraspCap)
        sigma *= std::clamp(a.dpos.norm() / cfg.reach_step, 0.2, 1.0);
      a.dpos += Vec3(rng.normal(0.0, sigma), rng.normal(0.0, sigma),
                     rng.normal(0.0, sigma));
    }
    if (subtask == SubtaskLabel::GraspBottle) {
      s.ee_right += a.dpos;
      s.grip_right = std::clamp(s.grip_right + a.dgrip, 0.0, 1.0);
    } else {
      s.ee_left += a.dpos;
      s.grip_left = std::clamp(s.grip_left + a.dgrip, 0.0, 1.0);
      left_yaw += a.dori.x();
    }
    if (subtask == SubtaskLabel::Rotate) {
      if (std::abs(a.dori.x()) > 1e-9 &&
          std::abs(s.grip_left - phase.band_center) <= cfg.band_half)
        phase.rotation_progress += a.dori.x();
      phase.band_center += rng.uniform(-1.0, 1.0) < 0.0 ? -cfg.band_walk : cfg.band_walk;
    }
  }
  if (out) {
    out->bottle_positions[id] = bottle;
    out->distractor_stamps[id] = std::move(ep_stamps);
  }
  return ep;
}

}  // namespace detail

// Scripted-expert demonstrations across the three subtasks, recorded from
// the master side (sagged, noisy poses; distractor blobs in the images).
inline DemoSet generate_master_demos(const WorldConfig& cfg, const DemoCounts& counts) {
  cfg.validate();
  DemoSet out;
  Mat4 t_star = Mat4::Identity();
  t_star.topLeftCorner<3, 3>() = cfg.t_star_rotation();
  t_star.topRightCorner<3, 1>() = cfg.t_star_translation();
  out.true_transform = t_star;
  Rng rng(cfg.seed);
  char id[32];
  const struct {
    SubtaskLabel subtask;
    size_t n;
    const char* prefix;
  } groups[] = {
      {SubtaskLabel::GraspBottle, counts.grasp_bottle, "gb"},
      {SubtaskLabel::GraspCap, counts.grasp_cap, "gc"},
      {SubtaskLabel::Rotate, counts.rotate, "rot"},
  };
  for (const auto& g : groups)
    for (size_t i = 0; i < g.n; ++i) {
      std::snprintf(id, sizeof id, "%s-%04zu", g.prefix, i);
      Rng ep_rng = rng.fork(std::hash<std::string>{}(id));
      const Vec3 bottle = detail::sample_bottle(cfg, ep_rng);
      out.episodes.push_back(
          detail::run_scripted_episode(cfg, g.subtask, id, bottle, ep_rng, &out));
    }
  return out;
}

// Recover the bottle base position from a frame's left-eye bottle channel
// (subpixel centroid, inverse projection at z = 0).
inline Vec3 bottle_position_from_frame(const WorldConfig& cfg, const Frame& frame) {
  const size_t s = size_t(cfg.image_size);
  double mass = 0.0, mx = 0.0, my = 0.0;
  for (size_t y = 0; y < s; ++y)
    for (size_t x = 0; x < s; ++x) {
      const double v = frame.image.at3(0, y, x);
      mass += v;
      mx += v * double(x);
      my += v * double(y);
    }
  if (mass <= 0.0)
    throw invalid_input_error("bottle_position_from_frame: empty bottle channel");
  const double px = mx / mass, py = my / mass;
  const double wy = cfg.view_y_min +
                    px / double(cfg.image_size - 1) * (cfg.view_y_max - cfg.view_y_min);
  const double wx = cfg.view_x_max -
                    py / double(cfg.image_size - 1) * (cfg.view_x_max - cfg.view_x_min);
  return {wx, wy, 0.0};
}

}  // namespace m2r

#endif  // M2R_HARNESS_HPP
