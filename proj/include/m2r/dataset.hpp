#ifndef M2R_DATASET_HPP
#define M2R_DATASET_HPP

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "m2r/errors.hpp"
#include "m2r/gaze.hpp"
#include "m2r/kinematics.hpp"
#include "m2r/policy.hpp"
#include "m2r/rng.hpp"

namespace m2r {

// One timestep of a demonstration. Synthetic desk-scale images are
// sparse feature grids and are stored inline in the episode file.
struct Frame {
  double t = 0.0;
  JointState joints_left, joints_right;
  bool has_joints = false;  // pose-level recordings leave joints unset
  Pose pose_left, pose_right;
  double grip_left = 0.0, grip_right = 0.0;
  FTReading ft_left, ft_right;
  GazeSample gaze_left, gaze_right;
  Tensor image;
  SubtaskLabel subtask = SubtaskLabel::GraspBottle;
  std::optional<ActionMode> mode;
};

enum class Split { train, validation };

struct Episode {
  std::string id;
  Split split = Split::train;
  std::vector<Frame> frames;

  SubtaskLabel subtask() const {
    if (frames.empty()) throw invalid_input_error("empty episode");
    return frames.front().subtask;
  }
  double duration() const {
    return frames.empty() ? 0.0 : frames.back().t - frames.front().t;
  }
};

// ---------------------------------------------------------------------------
// Fixed global crop geometry (per-eye centers on the raw camera frame).

struct CropSpec {
  int raw_width = 1280, raw_height = 720;
  int crop_size = 256;
  int center_left_x = 678, center_left_y = 428;
  int center_right_x = 756, center_right_y = 428;
};

struct CropWindow {
  int x0, y0, x1, y1;  // half-open
};

inline CropWindow crop_window(const CropSpec& spec, Eye eye) {
  const int cx = eye == Eye::left ? spec.center_left_x : spec.center_right_x;
  const int cy = eye == Eye::left ? spec.center_left_y : spec.center_right_y;
  const int half = spec.crop_size / 2;
  CropWindow w{cx - half, cy - half, cx - half + spec.crop_size,
               cy - half + spec.crop_size};
  if (w.x0 < 0 || w.y0 < 0 || w.x1 > spec.raw_width || w.y1 > spec.raw_height)
    throw config_error("crop window [" + std::to_string(w.x0) + "," +
                       std::to_string(w.x1) + ")x[" + std::to_string(w.y0) + "," +
                       std::to_string(w.y1) + ") exceeds raw image " +
                       std::to_string(spec.raw_width) + "x" +
                       std::to_string(spec.raw_height));
  return w;
}

inline Tensor crop_global(const Tensor& raw, const CropSpec& spec, Eye eye) {
  if (raw.shape.size() != 3 || int(raw.shape[1]) != spec.raw_height ||
      int(raw.shape[2]) != spec.raw_width)
    throw config_error("crop_global: raw image " + raw.shape_str() +
                       " does not match spec " + std::to_string(spec.raw_width) +
                       "x" + std::to_string(spec.raw_height));
  const CropWindow w = crop_window(spec, eye);
  const size_t c = raw.shape[0];
  Tensor out({c, size_t(spec.crop_size), size_t(spec.crop_size)});
  for (size_t ch = 0; ch < c; ++ch)
    for (int y = w.y0; y < w.y1; ++y)
      for (int x = w.x0; x < w.x1; ++x)
        out.at3(ch, y - w.y0, x - w.x0) = raw.at3(ch, y, x);
  return out;
}

// ---------------------------------------------------------------------------
// Episode-level 90/10 split, deterministic under seed.

inline std::pair<std::vector<Episode>, std::vector<Episode>> split_dataset(
    std::vector<Episode> episodes, double frac, std::uint64_t seed) {
  if (episodes.size() < 10)
    throw invalid_input_error("split_dataset: need >= 10 episodes, got " +
                              std::to_string(episodes.size()));
  Rng rng(seed);
  for (size_t i = episodes.size(); i > 1; --i)
    std::swap(episodes[i - 1], episodes[rng.uniform_index(i)]);
  const size_t n_train = size_t(std::floor(frac * double(episodes.size())));
  std::vector<Episode> train(episodes.begin(), episodes.begin() + long(n_train));
  std::vector<Episode> val(episodes.begin() + long(n_train), episodes.end());
  for (auto& e : train) e.split = Split::train;
  for (auto& e : val) e.split = Split::validation;
  return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// Per-subtask statistics (episode count, summed minutes).

struct SubtaskStats {
  SubtaskLabel subtask;
  size_t count;
  double minutes;
};

inline std::vector<SubtaskStats> dataset_stats(const std::vector<Episode>& episodes) {
  std::map<SubtaskLabel, SubtaskStats> acc;
  for (const auto& e : episodes) {
    auto& s = acc.try_emplace(e.subtask(), SubtaskStats{e.subtask(), 0, 0.0}).first->second;
    ++s.count;
    s.minutes += e.duration() / 60.0;
  }
  std::vector<SubtaskStats> out;
  for (auto& [k, v] : acc) out.push_back(v);
  return out;
}

inline void write_stats_csv(std::ostream& out, const std::vector<SubtaskStats>& stats) {
  out << "subtask,count,minutes\n";
  char buf[64];
  for (const auto& s : stats) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.17g\n", to_string(s.subtask), s.count,
                  s.minutes);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Episode persistence. Text format, documented in docs/episode-format.md:
//   M2R-EPISODES v1
//   episode <id> <train|validation> <frame count>
//   frame <fields...> img <C> <H> <W> <nnz> <idx>:<val> ...
// Floats use 17 significant digits for lossless round-trips.

namespace detail {

inline void put_f(std::ostream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, " %.17g", v);
  out << buf;
}

inline void write_frame(std::ostream& out, const Frame& f) {
  out << "frame";
  put_f(out, f.t);
  out << " " << (f.has_joints ? 1 : 0);
  for (double a : f.joints_left.angles) put_f(out, a);
  for (double a : f.joints_right.angles) put_f(out, a);
  put_f(out, f.grip_left);
  put_f(out, f.grip_right);
  for (const Pose* p : {&f.pose_left, &f.pose_right}) {
    for (int i = 0; i < 3; ++i) put_f(out, p->position(i));
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) put_f(out, p->rotation(r, c));
  }
  for (const FTReading* ft : {&f.ft_left, &f.ft_right}) {
    for (int i = 0; i < 3; ++i) put_f(out, ft->force(i));
    for (int i = 0; i < 3; ++i) put_f(out, ft->torque(i));
  }
  put_f(out, f.gaze_left.g.x());
  put_f(out, f.gaze_left.g.y());
  put_f(out, f.gaze_right.g.x());
  put_f(out, f.gaze_right.g.y());
  out << " " << to_string(f.subtask) << " "
      << (f.mode ? to_string(*f.mode) : "-");
  // sparse image
  size_t nnz = 0;
  for (double v : f.image.v)
    if (v != 0.0) ++nnz;
  out << " img";
  for (size_t d : f.image.shape) out << " " << d;
  for (size_t d = f.image.shape.size(); d < 3; ++d) out << " 0";
  out << " " << nnz;
  for (size_t i = 0; i < f.image.v.size(); ++i)
    if (f.image.v[i] != 0.0) {
      out << " " << i << ":";
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", f.image.v[i]);
      out << buf;
    }
  out << "\n";
}

inline Frame parse_frame(const std::string& line, const std::string& where) {
  std::istringstream ls(line);
  std::string tok;
  Frame f;
  auto fail = [&](const std::string& what) -> void {
    throw parse_error(where + ": " + what);
  };
  if (!(ls >> tok) || tok != "frame") fail("expected `frame`");
  int hj = 0;
  bool ok = bool(ls >> f.t >> hj);
  f.has_joints = hj != 0;
  for (double* a : {f.joints_left.angles.data(), f.joints_right.angles.data()})
    for (int i = 0; ok && i < 6; ++i) ok = bool(ls >> a[i]);
  ok = ok && bool(ls >> f.grip_left >> f.grip_right);
  f.joints_left.gripper = std::clamp(f.grip_left, 0.0, 1.0);
  f.joints_right.gripper = std::clamp(f.grip_right, 0.0, 1.0);
  for (Pose* p : {&f.pose_left, &f.pose_right}) {
    for (int i = 0; ok && i < 3; ++i) ok = bool(ls >> p->position(i));
    for (int r = 0; ok && r < 3; ++r)
      for (int c = 0; ok && c < 3; ++c) ok = bool(ls >> p->rotation(r, c));
  }
  for (FTReading* ft : {&f.ft_left, &f.ft_right}) {
    for (int i = 0; ok && i < 3; ++i) ok = bool(ls >> ft->force(i));
    for (int i = 0; ok && i < 3; ++i) ok = bool(ls >> ft->torque(i));
  }
  f.ft_left.arm = Arm::left;
  f.ft_right.arm = Arm::right;
  ok = ok && bool(ls >> f.gaze_left.g.x() >> f.gaze_left.g.y() >>
                  f.gaze_right.g.x() >> f.gaze_right.g.y());
  f.gaze_left.eye = Eye::left;
  f.gaze_right.eye = Eye::right;
  std::string subtask, mode;
  ok = ok && bool(ls >> subtask >> mode);
  if (!ok) fail("truncated frame record");
  f.subtask = subtask_from_string(subtask);
  if (mode == "global")
    f.mode = ActionMode::global;
  else if (mode == "local")
    f.mode = ActionMode::local;
  else if (mode != "-")
    fail("unknown mode label `" + mode + "`");
  size_t c, h, w, nnz;
  if (!(ls >> tok) || tok != "img" || !(ls >> c >> h >> w >> nnz))
    fail("missing image header");
  f.image = (c && h && w) ? Tensor({c, h, w}) : Tensor();
  for (size_t i = 0; i < nnz; ++i) {
    size_t idx;
    char colon;
    double v;
    if (!(ls >> idx >> colon >> v) || colon != ':' || idx >= f.image.v.size())
      fail("malformed sparse image entry " + std::to_string(i));
    f.image.v[idx] = v;
  }
  return f;
}

}  // namespace detail

inline void write_episodes(std::ostream& out, const std::vector<Episode>& episodes) {
  out << "M2R-EPISODES v1\n";
  for (const auto& e : episodes) {
    out << "episode " << e.id << " "
        << (e.split == Split::train ? "train" : "validation") << " "
        << e.frames.size() << "\n";
    for (const auto& f : e.frames) detail::write_frame(out, f);
  }
  out << "end " << episodes.size() << "\n";
}

// Validates timestamps and the global/local annotation rule at ingestion;
// a violating episode is rejected, never partially returned. The trailing
// `end <count>` line (plus a final newline) makes truncation at any byte
// offset detectable, including cuts at episode boundaries.
inline std::vector<Episode> read_episodes(std::istream& raw) {
  const std::string content{std::istreambuf_iterator<char>(raw),
                            std::istreambuf_iterator<char>()};
  if (!content.empty() && content.back() != '\n')
    throw parse_error("episode file: missing final newline (truncated?)");
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line) || line != "M2R-EPISODES v1") {
    if (line.rfind("M2R-EPISODES", 0) == 0)
      throw version_error("episode file: unsupported version `" + line + "`");
    throw parse_error("episode file: missing `M2R-EPISODES v1` header");
  }
  std::vector<Episode> episodes;
  bool saw_end = false;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (saw_end)
      throw parse_error("episode file: data after the `end` trailer at line " +
                        std::to_string(lineno));
    std::istringstream hs(line);
    std::string tok, split;
    Episode e;
    size_t n_frames = 0;
    if (line.rfind("end ", 0) == 0) {
      size_t count = 0;
      std::string end_tok;
      if (!(hs >> end_tok >> count) || count != episodes.size())
        throw parse_error("episode file: trailer count mismatch (`" + line +
                          "` after " + std::to_string(episodes.size()) +
                          " episodes)");
      saw_end = true;
      continue;
    }
    if (!(hs >> tok) || tok != "episode" || !(hs >> e.id >> split >> n_frames) ||
        (split != "train" && split != "validation"))
      throw parse_error("episode file line " + std::to_string(lineno) +
                        ": expected episode header");
    e.split = split == "train" ? Split::train : Split::validation;
    for (size_t i = 0; i < n_frames; ++i) {
      if (!std::getline(in, line))
        throw parse_error("episode file: episode " + e.id + " truncated at frame " +
                          std::to_string(i) + "/" + std::to_string(n_frames));
      ++lineno;
      e.frames.push_back(
          detail::parse_frame(line, "episode file line " + std::to_string(lineno)));
    }
    if (e.frames.empty())
      throw parse_error("episode file: episode " + e.id + " has no frames");
    for (size_t i = 1; i < e.frames.size(); ++i)
      if (!(e.frames[i].t > e.frames[i - 1].t))
        throw parse_error("episode " + e.id + ": timestamps not strictly increasing at frame " +
                          std::to_string(i));
    if (e.frames.front().mode) {
      std::vector<ActionMode> labels;
      for (const auto& f : e.frames)
        labels.push_back(f.mode.value_or(ActionMode::global));
      const auto check = validate_annotation(labels);
      if (!check.ok)
        throw parse_error("episode " + e.id +
                          ": annotation violates the single-transition rule at frame " +
                          std::to_string(check.first_bad_transition));
    }
    episodes.push_back(std::move(e));
  }
  if (!saw_end)
    throw parse_error("episode file: missing `end` trailer (truncated?)");
  return episodes;
}

inline void save_episodes(const std::string& path, const std::vector<Episode>& episodes) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open episode file for writing: " + path);
  write_episodes(out, episodes);
}

inline std::vector<Episode> load_episodes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open episode file: " + path);
  return read_episodes(in);
}

}  // namespace m2r

#endif  // M2R_DATASET_HPP
