#ifndef M2R_KINEMATICS_HPP
#define M2R_KINEMATICS_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "m2r/errors.hpp"

namespace m2r {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// One Denavit-Hartenberg row: link length a, twist alpha, offset d,
// joint-angle offset theta_offset. SI units (meters, radians).
struct DHRow {
  double a = 0.0;
  double alpha = 0.0;
  double d = 0.0;
  double theta_offset = 0.0;

  bool finite() const {
    return std::isfinite(a) && std::isfinite(alpha) && std::isfinite(d) &&
           std::isfinite(theta_offset);
  }
};

// Six-joint serial chain.
struct DHChain {
  std::vector<DHRow> rows;

  void validate() const {
    if (rows.size() != 6)
      throw invalid_input_error("DHChain must have exactly 6 rows, got " +
                                std::to_string(rows.size()));
    for (const auto& r : rows)
      if (!r.finite()) throw invalid_input_error("DHChain row has non-finite entry");
  }
};

struct JointState {
  std::array<double, 6> angles{};
  double gripper = 0.0;  // normalized opening in [0, 1]

  void validate() const {
    for (double a : angles)
      if (!std::isfinite(a)) throw invalid_input_error("joint angle not finite");
    if (!(gripper >= 0.0 && gripper <= 1.0))
      throw invalid_input_error("gripper outside [0,1]: " + std::to_string(gripper));
  }
};

// Rigid end-effector pose. Rotations produced by kinematics are
// orthonormal; calibrated rotations may not be (see calibration).
struct Pose {
  Vec3 position = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();

  bool finite() const {
    return position.allFinite() && rotation.allFinite();
  }

  Mat4 homogeneous() const {
    Mat4 t = Mat4::Identity();
    t.topLeftCorner<3, 3>() = rotation;
    t.topRightCorner<3, 1>() = position;
    return t;
  }

  static Pose from_homogeneous(const Mat4& t) {
    Pose p;
    p.rotation = t.topLeftCorner<3, 3>();
    p.position = t.topRightCorner<3, 1>();
    return p;
  }
};

// Per-joint homogeneous transform for the classic DH convention.
inline Mat4 dh_transform(const DHRow& row, double theta) {
  const double th = theta + row.theta_offset;
  const double ct = std::cos(th), st = std::sin(th);
  const double ca = std::cos(row.alpha), sa = std::sin(row.alpha);
  Mat4 t;
  t << ct, -st * ca,  st * sa, row.a * ct,
       st,  ct * ca, -ct * sa, row.a * st,
        0,       sa,       ca,      row.d,
        0,        0,        0,          1;
  return t;
}

inline Pose forward_kinematics(const DHChain& chain, const JointState& joints) {
  chain.validate();
  joints.validate();
  Mat4 t = Mat4::Identity();
  for (size_t i = 0; i < chain.rows.size(); ++i)
    t = t * dh_transform(chain.rows[i], joints.angles[i]);
  return Pose::from_homogeneous(t);
}

// ---------------------------------------------------------------------------
// Euler angles, Z-Y-X extrinsic: R = Rz(yaw) * Ry(pitch) * Rx(roll).

struct EulerZYX {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
};

inline Mat3 euler_to_rotation(const EulerZYX& e) {
  const double cy = std::cos(e.yaw), sy = std::sin(e.yaw);
  const double cp = std::cos(e.pitch), sp = std::sin(e.pitch);
  const double cr = std::cos(e.roll), sr = std::sin(e.roll);
  Mat3 rz, ry, rx;
  rz << cy, -sy, 0, sy, cy, 0, 0, 0, 1;
  ry << cp, 0, sp, 0, 1, 0, -sp, 0, cp;
  rx << 1, 0, 0, 0, cr, -sr, 0, sr, cr;
  return rz * ry * rx;
}

// At gimbal lock (|pitch| = pi/2), roll is set to 0 and yaw absorbs the
// remaining rotation.
inline EulerZYX rotation_to_euler(const Mat3& r) {
  EulerZYX e;
  const double s = -r(2, 0);
  if (s >= 1.0 - 1e-12) {
    e.pitch = std::asin(1.0);
    e.roll = 0.0;
    e.yaw = std::atan2(r(1, 2), r(1, 1));
  } else if (s <= -1.0 + 1e-12) {
    e.pitch = std::asin(-1.0);
    e.roll = 0.0;
    e.yaw = std::atan2(-r(1, 2), r(1, 1));
  } else {
    e.pitch = std::asin(std::clamp(s, -1.0, 1.0));
    e.yaw = std::atan2(r(1, 0), r(0, 0));
    e.roll = std::atan2(r(2, 1), r(2, 2));
  }
  return e;
}

// ---------------------------------------------------------------------------
// 10-dim robot state: position, cos/sin of Z-Y-X Euler angles, gripper.

using StateVector10 = Eigen::Matrix<double, 10, 1>;

inline StateVector10 pose_to_state10(const Pose& pose, double gripper) {
  if (!pose.finite() || !std::isfinite(gripper))
    throw invalid_input_error("pose_to_state10: non-finite input");
  const EulerZYX e = rotation_to_euler(pose.rotation);
  StateVector10 s;
  s << pose.position.x(), pose.position.y(), pose.position.z(),
      std::cos(e.yaw), std::sin(e.yaw),
      std::cos(e.pitch), std::sin(e.pitch),
      std::cos(e.roll), std::sin(e.roll),
      gripper;
  return s;
}

// 7-dim action: position delta, Z-Y-X Euler-angle increments, gripper delta.
struct ActionDelta {
  Vec3 dpos = Vec3::Zero();
  Vec3 dori = Vec3::Zero();  // (dyaw, dpitch, droll)
  double dgrip = 0.0;

  Eigen::Matrix<double, 7, 1> vec() const {
    Eigen::Matrix<double, 7, 1> v;
    v << dpos, dori, dgrip;
    return v;
  }
  static ActionDelta from_vec(const Eigen::Matrix<double, 7, 1>& v) {
    ActionDelta a;
    a.dpos = v.segment<3>(0);
    a.dori = v.segment<3>(3);
    a.dgrip = v(6);
    return a;
  }
  bool finite() const {
    return dpos.allFinite() && dori.allFinite() && std::isfinite(dgrip);
  }
};

// 7-dim pose/gripper state used for action differencing.
inline Eigen::Matrix<double, 7, 1> pose_to_state7(const Pose& pose, double gripper) {
  const EulerZYX e = rotation_to_euler(pose.rotation);
  Eigen::Matrix<double, 7, 1> s;
  s << pose.position.x(), pose.position.y(), pose.position.z(),
      e.yaw, e.pitch, e.roll, gripper;
  return s;
}

inline ActionDelta action_between(const Pose& from, double grip_from,
                                  const Pose& to, double grip_to) {
  const auto a = pose_to_state7(from, grip_from);
  const auto b = pose_to_state7(to, grip_to);
  return ActionDelta::from_vec(b - a);
}

inline std::pair<Pose, double> apply_action(const Pose& pose, double gripper,
                                            const ActionDelta& action) {
  if (!pose.finite() || !std::isfinite(gripper) || !action.finite())
    throw invalid_input_error("apply_action: non-finite input");
  const EulerZYX e = rotation_to_euler(pose.rotation);
  Pose next;
  next.position = pose.position + action.dpos;
  next.rotation = euler_to_rotation(
      {e.yaw + action.dori.x(), e.pitch + action.dori.y(), e.roll + action.dori.z()});
  const double grip = std::clamp(gripper + action.dgrip, 0.0, 1.0);
  return {next, grip};
}

// ---------------------------------------------------------------------------
// DH table config: lines of the form `joint_i = a, alpha, d, theta_offset`.

inline DHChain parse_dh_chain(std::istream& in) {
  DHChain chain;
  chain.rows.resize(6);
  std::array<bool, 6> seen{};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    int idx = -1;
    char comma;
    DHRow row;
    std::istringstream ls(line);
    std::string key, eq;
    ls >> key >> eq;
    if (eq != "=" || key.rfind("joint_", 0) != 0)
      throw parse_error("DH config line " + std::to_string(lineno) + ": expected `joint_i = ...`");
    idx = std::stoi(key.substr(6));
    if (idx < 1 || idx > 6)
      throw parse_error("DH config line " + std::to_string(lineno) + ": joint index out of range");
    if (!(ls >> row.a >> comma >> row.alpha >> comma >> row.d >> comma >> row.theta_offset))
      throw parse_error("DH config line " + std::to_string(lineno) + ": expected 4 comma-separated values");
    chain.rows[idx - 1] = row;
    seen[idx - 1] = true;
  }
  for (int i = 0; i < 6; ++i)
    if (!seen[i]) throw parse_error("DH config missing joint_" + std::to_string(i + 1));
  chain.validate();
  return chain;
}

inline DHChain load_dh_chain(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open DH config: " + path);
  return parse_dh_chain(in);
}

// Default UR5-like table. The values are external constants describing a
// generic 6R arm of this class, configurable via the DH config file.
inline DHChain default_ur5_like_chain() {
  DHChain chain;
  chain.rows = {
      DHRow{0.0, std::numbers::pi / 2, 0.089159, 0.0},
      DHRow{-0.425, 0.0, 0.0, 0.0},
      DHRow{-0.39225, 0.0, 0.0, 0.0},
      DHRow{0.0, std::numbers::pi / 2, 0.10915, 0.0},
      DHRow{0.0, -std::numbers::pi / 2, 0.09465, 0.0},
      DHRow{0.0, 0.0, 0.0823, 0.0},
  };
  return chain;
}

}  // namespace m2r

#endif  // M2R_KINEMATICS_HPP
