#ifndef M2R_CALIBRATION_HPP
#define M2R_CALIBRATION_HPP

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "m2r/errors.hpp"
#include "m2r/kinematics.hpp"

namespace m2r {

enum class Provenance { enc, mocap };

// A simultaneously observed master / robot pose pair.
struct PosePair {
  double timestamp = 0.0;
  Pose master;
  Pose robot;
  Provenance provenance = Provenance::mocap;
};

// Per-axis and total mean Euclidean position error before / after calibration.
struct ErrorReport {
  Vec3 axis_error_before = Vec3::Zero();
  Vec3 axis_error_after = Vec3::Zero();
  double total_before = 0.0;
  double total_after = 0.0;
};

struct CalibrationMaps {
  Mat4 position_map = Mat4::Identity();   // homogeneous map master -> robot
  Mat3 rotation_map = Mat3::Identity();
  Vec3 residual_before = Vec3::Zero();    // per-axis RMS on the fitting set
  Vec3 residual_after = Vec3::Zero();
};

namespace detail {

// Solve X * G = B for X given the Gram matrix G; falls back to a
// pseudo-inverse when G is badly conditioned.
template <typename MatG, typename MatB>
MatB solve_gram(const MatG& gram, const MatB& rhs) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (smin > 0.0 && smax / smin < 1e12) {
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() == Eigen::Success)
      return llt.solve(rhs.transpose()).transpose();
  }
  // pinv fallback
  Eigen::VectorXd inv = sv;
  for (int i = 0; i < inv.size(); ++i)
    inv(i) = sv(i) > 1e-13 * smax ? 1.0 / sv(i) : 0.0;
  Eigen::MatrixXd pinv = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  return (pinv * rhs.transpose()).transpose();
}

}  // namespace detail

// Least-squares fit of the 4x4 homogeneous position map minimizing
// sum ||robot_p - A * homog(master_p)||^2, bottom row pinned to (0,0,0,1).
inline Mat4 fit_position_map(const std::vector<PosePair>& pairs) {
  if (pairs.size() < 4)
    throw degenerate_geometry_error("fit_position_map: need >= 4 pairs, got " +
                                    std::to_string(pairs.size()));
  Eigen::MatrixXd design(pairs.size(), 4);
  Eigen::MatrixXd target(pairs.size(), 3);
  for (size_t i = 0; i < pairs.size(); ++i) {
    if (!pairs[i].master.finite() || !pairs[i].robot.finite())
      throw invalid_input_error("fit_position_map: non-finite pose pair");
    design.row(i) << pairs[i].master.position.transpose(), 1.0;
    target.row(i) = pairs[i].robot.position.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design);
  const int rank = (svd.singularValues().array() >
                    1e-9 * svd.singularValues()(0) * std::sqrt(double(pairs.size())))
                       .count();
  if (rank < 4)
    throw degenerate_geometry_error(
        "fit_position_map: coplanar/degenerate master positions (design rank " +
        std::to_string(rank) + " < 4)");
  const Eigen::Matrix4d gram = design.transpose() * design;
  const Eigen::Matrix<double, 3, 4> rhs = target.transpose() * design;
  Eigen::Matrix<double, 3, 4> top = detail::solve_gram(gram, rhs);
  Mat4 map = Mat4::Identity();
  map.topLeftCorner<3, 4>() = top;
  return map;
}

// Least-squares fit of the 3x3 rotation map minimizing
// sum ||robot_R - A * master_R||_F^2; optional projection onto SO(3)
// via the polar factor (orthogonal Procrustes).
inline Mat3 fit_rotation_map(const std::vector<PosePair>& pairs, bool project_to_so3) {
  if (pairs.size() < 2)
    throw degenerate_geometry_error("fit_rotation_map: need >= 2 pairs");
  Mat3 gram = Mat3::Zero();
  Mat3 rhs = Mat3::Zero();
  Eigen::MatrixXd stacked(3, 3 * pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    const Mat3& m = pairs[i].master.rotation;
    gram += m * m.transpose();
    rhs += pairs[i].robot.rotation * m.transpose();
    stacked.middleCols<3>(3 * i) = m;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(stacked);
  const int rank =
      (svd.singularValues().array() > 1e-9 * svd.singularValues()(0)).count();
  if (rank < 3)
    throw degenerate_geometry_error(
        "fit_rotation_map: stacked rotation columns rank " + std::to_string(rank) +
        " < 3");
  Mat3 map = detail::solve_gram(gram, rhs);
  if (project_to_so3) {
    Eigen::JacobiSVD<Mat3> psvd(map, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = psvd.matrixU();
    Mat3 v = psvd.matrixV();
    Mat3 s = Mat3::Identity();
    if ((u * v.transpose()).determinant() < 0.0) s(2, 2) = -1.0;
    map = u * s * v.transpose();
  }
  return map;
}

// Nearest rotation to an arbitrary 3x3 matrix (polar factor).
inline Mat3 orthonormalize(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  Mat3 s = Mat3::Identity();
  if ((u * v.transpose()).determinant() < 0.0) s(2, 2) = -1.0;
  return u * s * v.transpose();
}

// Calibrate a master pose into the robot frame. The mapped rotation is
// re-orthonormalized before downstream use: the raw linear map need not
// return a rotation.
inline Pose apply_calibration(const CalibrationMaps& maps, const Pose& master) {
  Pose out;
  Eigen::Vector4d h;
  h << master.position, 1.0;
  out.position = (maps.position_map * h).head<3>();
  out.rotation = orthonormalize(maps.rotation_map * master.rotation);
  return out;
}

inline CalibrationMaps fit_calibration(const std::vector<PosePair>& pairs,
                                       bool project_to_so3 = false) {
  CalibrationMaps maps;
  maps.position_map = fit_position_map(pairs);
  maps.rotation_map = fit_rotation_map(pairs, project_to_so3);
  Vec3 sq_before = Vec3::Zero(), sq_after = Vec3::Zero();
  for (const auto& p : pairs) {
    Eigen::Vector4d h;
    h << p.master.position, 1.0;
    const Vec3 mapped = (maps.position_map * h).head<3>();
    sq_before += (p.master.position - p.robot.position).cwiseAbs2();
    sq_after += (mapped - p.robot.position).cwiseAbs2();
  }
  maps.residual_before = (sq_before / double(pairs.size())).cwiseSqrt();
  maps.residual_after = (sq_after / double(pairs.size())).cwiseSqrt();
  return maps;
}

// Held-out error comparison, mirroring the before/after bar chart.
inline ErrorReport calibration_report(const CalibrationMaps& maps,
                                      const std::vector<PosePair>& heldout) {
  if (heldout.empty())
    throw invalid_input_error("calibration_report: empty held-out set");
  ErrorReport rep;
  for (const auto& p : heldout) {
    Eigen::Vector4d h;
    h << p.master.position, 1.0;
    const Vec3 mapped = (maps.position_map * h).head<3>();
    rep.axis_error_before += (p.master.position - p.robot.position).cwiseAbs();
    rep.axis_error_after += (mapped - p.robot.position).cwiseAbs();
    rep.total_before += (p.master.position - p.robot.position).norm();
    rep.total_after += (mapped - p.robot.position).norm();
  }
  const double n = double(heldout.size());
  rep.axis_error_before /= n;
  rep.axis_error_after /= n;
  rep.total_before /= n;
  rep.total_after /= n;
  return rep;
}

// ---------------------------------------------------------------------------
// Pose-pair file: one pair per line,
//   timestamp  m_pos(3)  m_rot(9 row-major)  r_pos(3)  r_rot(9)  {enc|mocap}

inline void write_pose_pairs(std::ostream& out, const std::vector<PosePair>& pairs) {
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, " %.17g", v);
    out << buf;
  };
  for (const auto& p : pairs) {
    std::snprintf(buf, sizeof buf, "%.17g", p.timestamp);
    out << buf;
    for (int i = 0; i < 3; ++i) put(p.master.position(i));
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) put(p.master.rotation(r, c));
    for (int i = 0; i < 3; ++i) put(p.robot.position(i));
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) put(p.robot.rotation(r, c));
    out << (p.provenance == Provenance::enc ? " enc" : " mocap") << "\n";
  }
}

inline std::vector<PosePair> read_pose_pairs(std::istream& in) {
  std::vector<PosePair> pairs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    PosePair p;
    std::string tag;
    bool ok = bool(ls >> p.timestamp);
    for (int i = 0; ok && i < 3; ++i) ok = bool(ls >> p.master.position(i));
    for (int r = 0; ok && r < 3; ++r)
      for (int c = 0; ok && c < 3; ++c) ok = bool(ls >> p.master.rotation(r, c));
    for (int i = 0; ok && i < 3; ++i) ok = bool(ls >> p.robot.position(i));
    for (int r = 0; ok && r < 3; ++r)
      for (int c = 0; ok && c < 3; ++c) ok = bool(ls >> p.robot.rotation(r, c));
    ok = ok && bool(ls >> tag) && (tag == "enc" || tag == "mocap");
    if (!ok)
      throw parse_error("pose-pair file: malformed record at line " +
                        std::to_string(lineno));
    p.provenance = tag == "enc" ? Provenance::enc : Provenance::mocap;
    pairs.push_back(p);
  }
  return pairs;
}

// Calibration maps file: A_p rows, then A_o rows, then fitting residuals.
inline void write_calibration_maps(std::ostream& out, const CalibrationMaps& maps) {
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, " %.17g", v);
    out << buf;
  };
  out << "position_map";
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) put(maps.position_map(r, c));
  out << "\nrotation_map";
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) put(maps.rotation_map(r, c));
  out << "\nresidual_before";
  for (int i = 0; i < 3; ++i) put(maps.residual_before(i));
  out << "\nresidual_after";
  for (int i = 0; i < 3; ++i) put(maps.residual_after(i));
  out << "\n";
}

inline CalibrationMaps read_calibration_maps(std::istream& in) {
  CalibrationMaps maps;
  std::string key;
  auto need = [&](const char* want, double* dst, int n) {
    if (!(in >> key) || key != want)
      throw parse_error(std::string("calibration maps file: expected `") + want + "`");
    for (int i = 0; i < n; ++i)
      if (!(in >> dst[i]))
        throw parse_error(std::string("calibration maps file: truncated `") + want + "`");
  };
  Eigen::Matrix<double, 4, 4, Eigen::RowMajor> p;
  Eigen::Matrix<double, 3, 3, Eigen::RowMajor> r;
  need("position_map", p.data(), 16);
  need("rotation_map", r.data(), 9);
  need("residual_before", maps.residual_before.data(), 3);
  need("residual_after", maps.residual_after.data(), 3);
  maps.position_map = p;
  maps.rotation_map = r;
  return maps;
}

inline void save_calibration_maps(const std::string& path, const CalibrationMaps& maps) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open calibration maps file for writing: " + path);
  write_calibration_maps(out, maps);
}

inline CalibrationMaps load_calibration_maps(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open calibration maps file: " + path);
  return read_calibration_maps(in);
}

inline std::vector<PosePair> load_pose_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open pose-pair file: " + path);
  return read_pose_pairs(in);
}

}  // namespace m2r

#endif  // M2R_CALIBRATION_HPP
