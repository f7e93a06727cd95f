#ifndef M2R_PIPELINE_HPP
#define M2R_PIPELINE_HPP

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "m2r/calibration.hpp"
#include "m2r/config.hpp"
#include "m2r/dataset.hpp"
#include "m2r/gaze.hpp"
#include "m2r/harness.hpp"
#include "m2r/policy.hpp"

namespace m2r {

enum class Variant { da_force, no_force, no_da, no_gaze };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::da_force: return "da-force";
    case Variant::no_force: return "no-force";
    case Variant::no_da: return "no-da";
    case Variant::no_gaze: return "no-gaze";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "da-force") return Variant::da_force;
  if (s == "no-force") return Variant::no_force;
  if (s == "no-da") return Variant::no_da;
  if (s == "no-gaze") return Variant::no_gaze;
  throw invalid_input_error("unknown variant: " + s +
                            " (expected da-force|no-force|no-da|no-gaze)");
}

// ---------------------------------------------------------------------------
// Config-file bridging for the world and the trainer

namespace detail {

struct ConfigBinder {
  std::map<std::string, double*> doubles;
  std::map<std::string, int*> ints;
  std::map<std::string, std::uint64_t*> u64s;

  void apply(const ConfigMap& cfg) const {
    for (const auto& [k, v] : cfg) {
      try {
        if (auto it = doubles.find(k); it != doubles.end())
          *it->second = std::stod(v);
        else if (auto it2 = ints.find(k); it2 != ints.end())
          *it2->second = std::stoi(v);
        else if (auto it3 = u64s.find(k); it3 != u64s.end())
          *it3->second = std::stoull(v);
        else
          throw config_error("unknown config key: " + k);
      } catch (const std::invalid_argument&) {
        throw config_error("config key " + k + ": not a number: " + v);
      } catch (const std::out_of_range&) {
        throw config_error("config key " + k + ": out of range: " + v);
      }
    }
  }

  ConfigMap to_map() const {
    ConfigMap out;
    char buf[32];
    for (const auto& [k, p] : doubles) {
      std::snprintf(buf, sizeof buf, "%.17g", *p);
      out[k] = buf;
    }
    for (const auto& [k, p] : ints) out[k] = std::to_string(*p);
    for (const auto& [k, p] : u64s) out[k] = std::to_string(*p);
    return out;
  }
};

inline ConfigBinder bind_world(WorldConfig& c) {
  ConfigBinder b;
  b.doubles = {
      {"ws_x_min", &c.ws_x_min}, {"ws_x_max", &c.ws_x_max},
      {"ws_y_min", &c.ws_y_min}, {"ws_y_max", &c.ws_y_max},
      {"max_reach", &c.max_reach},
      {"bottle_x_min", &c.bottle_x_min}, {"bottle_x_max", &c.bottle_x_max},
      {"bottle_y_min", &c.bottle_y_min}, {"bottle_y_max", &c.bottle_y_max},
      {"cap_height", &c.cap_height}, {"grasp_height", &c.grasp_height},
      {"kappa", &c.kappa},
      {"t_star_tx", &c.t_star_tx}, {"t_star_ty", &c.t_star_ty},
      {"t_star_tz", &c.t_star_tz}, {"t_star_yaw", &c.t_star_yaw},
      {"sigma_enc", &c.sigma_enc}, {"arm_length", &c.arm_length},
      {"sigma_mocap", &c.sigma_mocap},
      {"band_center_mean", &c.band_center_mean},
      {"band_center_jitter", &c.band_center_jitter},
      {"band_half", &c.band_half}, {"band_walk", &c.band_walk},
      {"ft_gain", &c.ft_gain}, {"sigma_ft", &c.sigma_ft},
      {"align_gain", &c.align_gain}, {"align_eps", &c.align_eps},
      {"rotate_rate", &c.rotate_rate}, {"rotate_goal", &c.rotate_goal},
      {"view_x_min", &c.view_x_min}, {"view_x_max", &c.view_x_max},
      {"view_y_min", &c.view_y_min}, {"view_y_max", &c.view_y_max},
      {"z_tilt", &c.z_tilt}, {"eye_disparity", &c.eye_disparity},
      {"blob_sigma", &c.blob_sigma}, {"sigma_gaze", &c.sigma_gaze},
      {"frame_dt", &c.frame_dt}, {"reach_step", &c.reach_step},
      {"local_radius", &c.local_radius}, {"local_gain", &c.local_gain},
      {"bottle_tol", &c.bottle_tol}, {"cap_tol", &c.cap_tol},
      {"grip_track_gain", &c.grip_track_gain},
      {"expert_pos_noise", &c.expert_pos_noise},
      {"init_grip_max", &c.init_grip_max},
  };
  b.ints = {
      {"image_size", &c.image_size}, {"fovea_size", &c.fovea_size},
      {"blob_radius", &c.blob_radius}, {"distractors", &c.distractors},
  };
  b.u64s = {{"seed", &c.seed}};
  return b;
}

}  // namespace detail

inline void apply_world_config(WorldConfig& cfg, const ConfigMap& map) {
  detail::bind_world(cfg).apply(map);
}
inline ConfigMap world_config_to_map(const WorldConfig& cfg) {
  return detail::bind_world(const_cast<WorldConfig&>(cfg)).to_map();
}

// ---------------------------------------------------------------------------
// Training sample extraction

struct PolicySample {
  Tensor image;         // foveated (or global for no-gaze) view, acting eye
  Tensor stereo_image;  // both eyes' views stacked [left, right] (GraspCap)
  StateVector10 state = StateVector10::Zero();
  Eigen::Vector4d stereo_gaze = Eigen::Vector4d::Zero();
  Eigen::Matrix<double, 12, 1> ft12 = Eigen::Matrix<double, 12, 1>::Zero();
  Eigen::Matrix<double, 7, 1> action = Eigen::Matrix<double, 7, 1>::Zero();
  int mode_label = 0;  // 1 = local
};

struct SampleSet {
  std::vector<PolicySample> grasp_bottle;   // global net, right arm
  std::vector<PolicySample> grasp_cap_global;
  std::vector<PolicySample> grasp_cap_local;
  std::vector<PolicySample> grasp_cap_all;  // for the No-DA global net
  std::vector<PolicySample> rotate;
  std::vector<PolicySample> mode;           // classifier samples (GraspCap)
};

struct GazeSamplePoint {
  Tensor image;  // per-eye global image
  Vec2 g;
};

// 3 subtasks x 2 eyes
using GazeSampleSets = std::array<std::array<std::vector<GazeSamplePoint>, 2>, 3>;

inline int subtask_index(SubtaskLabel s) { return int(s); }

// Build per-network training samples from master demonstrations. States
// and actions come from calibrated master poses; images are foveated
// around the recorded gaze (or left global for use_global_vision).
inline SampleSet extract_policy_samples(const std::vector<Episode>& episodes,
                                        const CalibrationMaps& maps,
                                        const WorldConfig& world,
                                        bool use_global_vision,
                                        int frame_stride = 1) {
  SampleSet out;
  for (const auto& ep : episodes) {
    const SubtaskLabel subtask = ep.subtask();
    for (size_t t = 0; t + 1 < ep.frames.size(); ++t) {
      if (frame_stride > 1 && t % size_t(frame_stride) != 0) continue;
      const Frame& f = ep.frames[t];
      const Frame& fn = ep.frames[t + 1];
      const bool right_arm = subtask == SubtaskLabel::GraspBottle;
      const Pose cal = apply_calibration(maps, right_arm ? f.pose_right : f.pose_left);
      const Pose cal_next =
          apply_calibration(maps, right_arm ? fn.pose_right : fn.pose_left);
      const double grip = right_arm ? f.grip_right : f.grip_left;
      const double grip_next = right_arm ? fn.grip_right : fn.grip_left;

      PolicySample s;
      s.state = pose_to_state10(cal, grip);
      s.action = action_between(cal, grip, cal_next, grip_next).vec();
      s.stereo_gaze << f.gaze_left.g, f.gaze_right.g;
      const Eye eye = right_arm ? Eye::right : Eye::left;
      const GazeSample& gz = right_arm ? f.gaze_right : f.gaze_left;
      const Tensor view = eye_view(f.image, eye);
      if (use_global_vision) {
        // full field of view at fovea resolution (same pixel budget)
        s.image = downsample_avg(view, world.image_size / world.fovea_size);
        s.stereo_gaze.setZero();
      } else {
        s.image = foveate(view, gaze_to_px(gz.g.x(), world.image_size),
                          gaze_to_px(gz.g.y(), world.image_size), world.fovea_size)
                      .first;
      }
      s.ft12 << f.ft_left.force, f.ft_left.torque, f.ft_right.force, f.ft_right.torque;

      switch (subtask) {
        case SubtaskLabel::GraspBottle:
          out.grasp_bottle.push_back(std::move(s));
          break;
        case SubtaskLabel::GraspCap: {
          // the local corrector is vision only, so it gets both eyes: a
          // single view cannot observe depth motion along its tilt null
          // direction, and closed-loop drift there goes uncorrected
          const Tensor right_view = eye_view(f.image, Eye::right);
          Tensor right_img;
          if (use_global_vision) {
            right_img =
                downsample_avg(right_view, world.image_size / world.fovea_size);
          } else {
            right_img = foveate(right_view,
                                gaze_to_px(f.gaze_right.g.x(), world.image_size),
                                gaze_to_px(f.gaze_right.g.y(), world.image_size),
                                world.fovea_size)
                            .first;
          }
          s.stereo_image = stack_channels(s.image, right_img);
          s.mode_label = f.mode && *f.mode == ActionMode::local ? 1 : 0;
          out.mode.push_back(s);
          out.grasp_cap_all.push_back(s);
          if (s.mode_label)
            out.grasp_cap_local.push_back(std::move(s));
          else
            out.grasp_cap_global.push_back(std::move(s));
          break;
        }
        case SubtaskLabel::Rotate:
          out.rotate.push_back(std::move(s));
          break;
      }
    }
  }
  return out;
}

inline GazeSampleSets extract_gaze_samples(const std::vector<Episode>& episodes,
                                           int frame_stride = 1) {
  GazeSampleSets out;
  for (const auto& ep : episodes) {
    const int si = subtask_index(ep.subtask());
    for (size_t t = 0; t < ep.frames.size(); ++t) {
      if (frame_stride > 1 && t % size_t(frame_stride) != 0) continue;
      const Frame& f = ep.frames[t];
      out[si][0].push_back({eye_view(f.image, Eye::left), f.gaze_left.g});
      out[si][1].push_back({eye_view(f.image, Eye::right), f.gaze_right.g});
    }
  }
  return out;
}

// Per-component clamp from the demonstration action magnitudes.
inline ActionClamp action_clamp_from_samples(const SampleSet& set,
                                             double percentile = 0.995) {
  std::vector<const std::vector<PolicySample>*> groups = {
      &set.grasp_bottle, &set.grasp_cap_all, &set.rotate};
  ActionClamp clamp;
  for (int c = 0; c < 7; ++c) {
    std::vector<double> mags;
    for (const auto* g : groups)
      for (const auto& s : *g) mags.push_back(std::abs(s.action(c)));
    if (mags.empty()) continue;
    std::sort(mags.begin(), mags.end());
    const size_t idx = std::min(mags.size() - 1,
                                size_t(percentile * double(mags.size())));
    // leave a little headroom above the empirical percentile
    clamp.limit(c) = std::max(1e-6, mags[idx] * 1.2);
  }
  return clamp;
}

// ---------------------------------------------------------------------------
// Variant model set

struct VariantModels {
  Variant variant = Variant::da_force;
  PolicyNetConfig net_cfg;
  GazeNetConfig gaze_cfg;
  DualActionPolicy policy;
  // [subtask][eye]; unused for no-gaze
  std::array<std::array<std::unique_ptr<GazeNet>, 2>, 3> gaze;

  bool uses_global_vision() const { return variant == Variant::no_gaze; }
  bool uses_force() const { return variant != Variant::no_force; }
};

struct TrainPipelineConfig {
  int policy_epochs = 8;
  int gaze_epochs = 4;
  int batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 0.0;
  int conv_channels = 8;
  int mlp_hidden = 200;
  int attention_dim = 16;
  int frame_stride = 1;
  int gaze_frame_stride = 1;
  std::uint64_t seed = 5;
};

namespace detail {
inline ConfigBinder bind_train(TrainPipelineConfig& c) {
  ConfigBinder b;
  b.doubles = {{"lr", &c.lr}, {"weight_decay", &c.weight_decay}};
  b.ints = {
      {"policy_epochs", &c.policy_epochs}, {"gaze_epochs", &c.gaze_epochs},
      {"batch_size", &c.batch_size},       {"conv_channels", &c.conv_channels},
      {"mlp_hidden", &c.mlp_hidden},       {"attention_dim", &c.attention_dim},
      {"frame_stride", &c.frame_stride},
      {"gaze_frame_stride", &c.gaze_frame_stride},
  };
  b.u64s = {{"seed", &c.seed}};
  return b;
}
}  // namespace detail

inline void apply_train_config(TrainPipelineConfig& cfg, const ConfigMap& map) {
  detail::bind_train(cfg).apply(map);
}
inline ConfigMap train_config_to_map(const TrainPipelineConfig& cfg) {
  return detail::bind_train(const_cast<TrainPipelineConfig&>(cfg)).to_map();
}

inline VariantModels make_variant_models(Variant v, const WorldConfig& world,
                                         const TrainPipelineConfig& cfg) {
  VariantModels m;
  m.variant = v;
  if (v == Variant::no_gaze && world.image_size % world.fovea_size != 0)
    throw config_error(
        "no-gaze variant needs fovea_size to divide image_size (downsampled "
        "full-field view)");
  // all variants see fovea_size x fovea_size inputs; no-gaze trades the
  // foveated crop for a downsampled full-field view at the same size
  m.net_cfg.image_size = world.fovea_size;
  m.net_cfg.image_channels = 3;
  m.net_cfg.conv_channels = cfg.conv_channels;
  m.net_cfg.mlp_hidden = cfg.mlp_hidden;
  m.net_cfg.attention_dim = cfg.attention_dim;
  m.net_cfg.init_seed = cfg.seed;
  m.gaze_cfg.image_size = world.image_size;
  m.gaze_cfg.conv_channels = cfg.conv_channels;
  m.gaze_cfg.mlp_hidden = cfg.mlp_hidden;
  // every net gets its own init stream
  auto net_cfg_for = [&](int slot) {
    PolicyNetConfig nc = m.net_cfg;
    nc.init_seed = cfg.seed + std::uint64_t(200 + slot);
    return nc;
  };
  m.policy.global_grasp_bottle = std::make_unique<GlobalActionNet>(net_cfg_for(1));
  m.policy.global_grasp_cap = std::make_unique<GlobalActionNet>(net_cfg_for(2));
  {
    // the local corrector sees both eyes' foveated crops stacked; one view
    // alone cannot resolve motion along its projection's tilt direction
    PolicyNetConfig lc = net_cfg_for(3);
    lc.image_channels = 6;
    m.policy.local_grasp_cap = std::make_unique<LocalActionNet>(lc);
  }
  m.policy.rotate = std::make_unique<RotateNet>(net_cfg_for(4));
  m.policy.mode_classifier = std::make_unique<ModeClassifier>(net_cfg_for(5));
  if (v == Variant::no_da) {
    m.policy.global_only = true;
    m.policy.global_rotate = std::make_unique<GlobalActionNet>(net_cfg_for(6));
  }
  if (v != Variant::no_gaze)
    for (int s = 0; s < 3; ++s)
      for (int e = 0; e < 2; ++e) {
        GazeNetConfig gc = m.gaze_cfg;
        gc.init_seed = cfg.seed + std::uint64_t(100 + 10 * s + e);
        m.gaze[s][e] = std::make_unique<GazeNet>(gc);
      }
  return m;
}

namespace detail {

inline L2TrainConfig l2_config(const TrainPipelineConfig& cfg, std::uint64_t salt) {
  L2TrainConfig c;
  c.epochs = cfg.policy_epochs;
  c.batch_size = cfg.batch_size;
  c.lr = cfg.lr;
  c.weight_decay = cfg.weight_decay;
  c.seed = cfg.seed ^ (salt * 0x9e3779b97f4a7c15ULL);
  return c;
}

}  // namespace detail

inline std::vector<double> train_global_net(GlobalActionNet& net,
                                            const std::vector<PolicySample>& samples,
                                            const L2TrainConfig& cfg) {
  return train_l2(net, samples.size(),
                  [&](size_t i, double scale) {
                    const auto& s = samples[i];
                    const auto pred = net.forward(s.image, s.state, s.stereo_gaze);
                    const Eigen::Matrix<double, 7, 1> err = pred - s.action;
                    net.backward(2.0 * scale * err);
                    return err.squaredNorm();
                  },
                  cfg);
}

inline std::vector<double> train_local_net(LocalActionNet& net,
                                           const std::vector<PolicySample>& samples,
                                           const L2TrainConfig& cfg) {
  return train_l2(net, samples.size(),
                  [&](size_t i, double scale) {
                    const auto& s = samples[i];
                    const auto pred = net.forward(s.stereo_image);
                    const Eigen::Matrix<double, 7, 1> err = pred - s.action;
                    net.backward(2.0 * scale * err);
                    return err.squaredNorm();
                  },
                  cfg);
}

inline std::vector<double> train_rotate_net(RotateNet& net,
                                            const std::vector<PolicySample>& samples,
                                            bool use_force, const L2TrainConfig& cfg) {
  static const Eigen::Matrix<double, 12, 1> zero12 =
      Eigen::Matrix<double, 12, 1>::Zero();
  return train_l2(net, samples.size(),
                  [&](size_t i, double scale) {
                    const auto& s = samples[i];
                    const auto pred = net.forward(s.image, use_force ? s.ft12 : zero12);
                    const Eigen::Matrix<double, 7, 1> err = pred - s.action;
                    net.backward(2.0 * scale * err);
                    return err.squaredNorm();
                  },
                  cfg);
}

inline std::vector<double> train_mode_classifier(ModeClassifier& net,
                                                 const std::vector<PolicySample>& samples,
                                                 const L2TrainConfig& cfg) {
  return train_l2(net, samples.size(),
                  [&](size_t i, double scale) {
                    const auto& s = samples[i];
                    const double logit =
                        net.forward_logit(s.image, s.state, s.stereo_gaze);
                    const double p = 1.0 / (1.0 + std::exp(-logit));
                    const double y = double(s.mode_label);
                    net.backward(scale * (p - y));
                    const double eps = 1e-12;
                    return -(y * std::log(p + eps) + (1.0 - y) * std::log(1.0 - p + eps));
                  },
                  cfg);
}

// Train every network a variant needs from master demonstrations.
inline VariantModels train_variant(Variant variant,
                                   const std::vector<Episode>& train_episodes,
                                   const CalibrationMaps& maps,
                                   const WorldConfig& world,
                                   const TrainPipelineConfig& cfg) {
  VariantModels m = make_variant_models(variant, world, cfg);
  SampleSet set = extract_policy_samples(train_episodes, maps, world,
                                         m.uses_global_vision(), cfg.frame_stride);
  m.policy.clamp = action_clamp_from_samples(set);

  train_global_net(*m.policy.global_grasp_bottle, set.grasp_bottle,
                   detail::l2_config(cfg, 1));
  if (variant == Variant::no_da) {
    train_global_net(*m.policy.global_grasp_cap, set.grasp_cap_all,
                     detail::l2_config(cfg, 2));
    train_global_net(*m.policy.global_rotate, set.rotate, detail::l2_config(cfg, 3));
    // unused networks still need the loaded flag off; leave them untrained
  } else {
    train_global_net(*m.policy.global_grasp_cap, set.grasp_cap_global,
                     detail::l2_config(cfg, 2));
    train_local_net(*m.policy.local_grasp_cap, set.grasp_cap_local,
                    detail::l2_config(cfg, 4));
    train_rotate_net(*m.policy.rotate, set.rotate, m.uses_force(),
                     detail::l2_config(cfg, 5));
    // the binary mode decision converges much faster than the regressors
    L2TrainConfig mode_cfg = detail::l2_config(cfg, 6);
    mode_cfg.epochs = std::max(1, cfg.policy_epochs / 4);
    train_mode_classifier(*m.policy.mode_classifier, set.mode, mode_cfg);
  }

  if (!m.uses_global_vision()) {
    GazeSampleSets gaze_sets =
        extract_gaze_samples(train_episodes, cfg.gaze_frame_stride);
    GazeTrainConfig gc;
    gc.epochs = cfg.gaze_epochs;
    gc.batch_size = cfg.batch_size;
    gc.lr = cfg.lr;
    gc.seed = cfg.seed + 77;
    for (int s = 0; s < 3; ++s)
      for (int e = 0; e < 2; ++e) {
        std::vector<std::pair<const Tensor*, Vec2>> data;
        for (const auto& p : gaze_sets[s][e]) data.push_back({&p.image, p.g});
        if (data.empty()) continue;
        train_gaze_predictor(*m.gaze[s][e], data, gc);
      }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Closed-loop trials

enum class FailureCategory {
  none,
  grasp_bottle,
  grasp_cap,
  rotate_timeout,
  slip,
};

inline const char* to_string(FailureCategory f) {
  switch (f) {
    case FailureCategory::none: return "none";
    case FailureCategory::grasp_bottle: return "grasp_bottle";
    case FailureCategory::grasp_cap: return "grasp_cap";
    case FailureCategory::rotate_timeout: return "rotate_timeout";
    case FailureCategory::slip: return "slip";
  }
  return "?";
}

struct TrialResult {
  Variant variant = Variant::da_force;
  bool grasp_bottle_ok = false;
  bool grasp_cap_ok = false;
  bool rotate_ok = false;
  bool success = false;
  FailureCategory failure = FailureCategory::none;
  double final_cap_offset = 0.0;  // |ee - cap| when GraspCap ended (m)
  std::vector<ActionMode> grasp_cap_modes;  // controller mode trace
};

struct TrialLimits {
  int grasp_bottle_steps = 60;
  int grasp_cap_steps = 90;
  int rotate_steps = 60;
  double bottle_success_tol = 0.030;
  double cap_success_tol = 0.012;
};

namespace detail {

// Build the controller observation from the robot-side scene.
inline Observation make_observation(const WorldConfig& cfg, VariantModels& m,
                                    SubtaskLabel subtask, const SceneState& s,
                                    const Eigen::Matrix<double, 12, 1>& ft12,
                                    double left_yaw) {
  Observation obs;
  const Tensor stereo = render_scene(cfg, s);
  const Tensor left = eye_view(stereo, Eye::left);
  const Tensor right = eye_view(stereo, Eye::right);
  if (m.uses_global_vision()) {
    const int factor = cfg.image_size / cfg.fovea_size;
    obs.fovea_left = downsample_avg(left, factor);
    obs.fovea_right = downsample_avg(right, factor);
    obs.stereo_gaze.setZero();
  } else {
    const int si = subtask_index(subtask);
    const Vec2 gl = mdn_predict(m.gaze[si][0]->forward(left));
    const Vec2 gr = mdn_predict(m.gaze[si][1]->forward(right));
    obs.stereo_gaze << gl, gr;
    obs.fovea_left = foveate(left, gaze_to_px(gl.x(), cfg.image_size),
                             gaze_to_px(gl.y(), cfg.image_size), cfg.fovea_size)
                         .first;
    obs.fovea_right = foveate(right, gaze_to_px(gr.x(), cfg.image_size),
                              gaze_to_px(gr.y(), cfg.image_size), cfg.fovea_size)
                          .first;
  }
  Pose left_pose, right_pose;
  left_pose.position = s.ee_left;
  left_pose.rotation = euler_to_rotation({left_yaw, 0.0, 0.0});
  right_pose.position = s.ee_right;
  obs.state_left = pose_to_state10(left_pose, s.grip_left);
  obs.state_right = pose_to_state10(right_pose, s.grip_right);
  obs.ft12 = m.uses_force() ? ft12 : Eigen::Matrix<double, 12, 1>::Zero();
  return obs;
}

}  // namespace detail

// Closed-loop rollout in the robot-side world (no sag, no distractors).
// When models is null, the scripted expert (which observes ground truth)
// acts instead.
inline TrialResult run_trial(VariantModels* models, const WorldConfig& cfg,
                             const Vec3& bottle, Rng rng,
                             const TrialLimits& limits = {}) {
  TrialResult result;
  if (models) result.variant = models->variant;
  SceneState s;
  s.bottle = bottle;
  s.ee_right = Vec3(0.38, 0.20, 0.22) +
               Vec3(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02),
                    rng.uniform(-0.02, 0.02));
  s.ee_left = Vec3(0.38, -0.20, 0.25) +
              Vec3(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02),
                   rng.uniform(-0.02, 0.02));
  double left_yaw = 0.0;
  double band_center = cfg.band_center_mean +
                       rng.uniform(-cfg.band_center_jitter, cfg.band_center_jitter);
  double rotation_progress = 0.0;
  ExpertPhaseState expert_phase;
  expert_phase.band_center = band_center;

  auto act = [&](SubtaskLabel subtask, const Eigen::Matrix<double, 12, 1>& ft12,
                 double ft_err) -> ActionDelta {
    if (!models) return expert_action(cfg, subtask, s, ft_err, expert_phase);
    Observation obs = detail::make_observation(cfg, *models, subtask, s, ft12, left_yaw);
    ActionMode mode = ActionMode::global;
    const ActionDelta a = models->policy.dual_action_step(subtask, obs, &mode);
    if (subtask == SubtaskLabel::GraspCap) result.grasp_cap_modes.push_back(mode);
    return a;
  };

  auto make_ft = [&](SubtaskLabel subtask) {
    Eigen::Matrix<double, 12, 1> ft12;
    const bool rotating = subtask == SubtaskLabel::Rotate &&
                          std::abs(s.grip_left - band_center) <= cfg.band_half;
    const FTReading l = cap_ft_reading(cfg, s, band_center, rotating, rng);
    const FTReading r = hold_ft_reading(cfg, s, rng);
    ft12 << l.force, l.torque, r.force, r.torque;
    return ft12;
  };

  // GraspBottle
  auto bottle_done = [&] {
    return (s.grasp_point(cfg) - s.ee_right).norm() <= limits.bottle_success_tol &&
           s.grip_right >= 0.8;
  };
  result.grasp_bottle_ok = bottle_done();
  for (int t = 0; t < limits.grasp_bottle_steps && !result.grasp_bottle_ok; ++t) {
    const auto ft12 = make_ft(SubtaskLabel::GraspBottle);
    const ActionDelta a = act(SubtaskLabel::GraspBottle, ft12, 0.0);
    s.ee_right += a.dpos;
    s.grip_right = std::clamp(s.grip_right + a.dgrip, 0.0, 1.0);
    result.grasp_bottle_ok = bottle_done();
  }
  if (!result.grasp_bottle_ok) {
    result.failure = FailureCategory::grasp_bottle;
    return result;
  }

  // GraspCap
  auto cap_done = [&] {
    return (s.cap(cfg) - s.ee_left).norm() <= limits.cap_success_tol &&
           s.grip_left >= 0.8;
  };
  result.grasp_cap_ok = cap_done();
  for (int t = 0; t < limits.grasp_cap_steps && !result.grasp_cap_ok; ++t) {
    const auto ft12 = make_ft(SubtaskLabel::GraspCap);
    const ActionDelta a = act(SubtaskLabel::GraspCap, ft12, 0.0);
    s.ee_left += a.dpos;
    s.grip_left = std::clamp(s.grip_left + a.dgrip, 0.0, 1.0);
    left_yaw += a.dori.x();
    result.grasp_cap_ok = cap_done();
  }
  if (result.grasp_cap_ok) result.final_cap_offset = (s.cap(cfg) - s.ee_left).norm();
  if (!result.grasp_cap_ok) {
    result.final_cap_offset = (s.cap(cfg) - s.ee_left).norm();
    result.failure = FailureCategory::grasp_cap;
    return result;
  }

  // Rotate: progress accrues only inside the friction band and aligned;
  // a rotation attempt outside the band is a slip, immediately fatal.
  for (int t = 0; t < limits.rotate_steps && !result.rotate_ok; ++t) {
    const auto ft12 = make_ft(SubtaskLabel::Rotate);
    const double ft_err = ft12(2) / cfg.ft_gain;
    expert_phase.band_center = band_center;
    const ActionDelta a = act(SubtaskLabel::Rotate, ft12, ft_err);
    s.ee_left += a.dpos;
    s.grip_left = std::clamp(s.grip_left + a.dgrip, 0.0, 1.0);
    left_yaw += a.dori.x();
    if (std::abs(a.dori.x()) > 0.02) {  // rotation attempt
      if (std::abs(s.grip_left - band_center) > cfg.band_half) {
        result.failure = FailureCategory::slip;
        return result;
      }
      Vec3 d = s.cap(cfg) - s.ee_left;
      d.z() = 0.0;
      if (d.norm() <= cfg.align_eps) rotation_progress += a.dori.x();
    }
    band_center += rng.uniform(-1.0, 1.0) < 0.0 ? -cfg.band_walk : cfg.band_walk;
    result.rotate_ok = rotation_progress >= cfg.rotate_goal;
  }
  if (!result.rotate_ok) {
    result.failure = FailureCategory::rotate_timeout;
    return result;
  }
  result.success = true;
  return result;
}

// ---------------------------------------------------------------------------
// Ablation report

struct AblationReport {
  // per variant: per-trial accumulative success fraction
  std::map<Variant, std::vector<double>> accumulative;
  std::map<Variant, std::map<FailureCategory, int>> failures;
};

inline AblationReport ablation_report(
    const std::map<Variant, std::vector<TrialResult>>& results) {
  if (results.empty()) throw invalid_input_error("ablation_report: no results");
  size_t n = results.begin()->second.size();
  for (const auto& [v, r] : results)
    if (r.size() != n)
      throw invalid_input_error("ablation_report: mismatched trial counts (" +
                                std::to_string(r.size()) + " vs " + std::to_string(n) +
                                ")");
  AblationReport rep;
  for (const auto& [v, r] : results) {
    int successes = 0;
    for (size_t i = 0; i < r.size(); ++i) {
      if (r[i].success) ++successes;
      rep.accumulative[v].push_back(double(successes) / double(i + 1));
      ++rep.failures[v][r[i].failure];
    }
  }
  return rep;
}

inline void write_ablation_csv(std::ostream& out,
                               const std::map<Variant, std::vector<TrialResult>>& results,
                               const AblationReport& rep) {
  out << "variant,trial,success,accumulative_success_rate,failure\n";
  char buf[64];
  for (const auto& [v, r] : results)
    for (size_t i = 0; i < r.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", rep.accumulative.at(v)[i]);
      out << to_string(v) << "," << i + 1 << "," << (r[i].success ? 1 : 0) << ","
          << buf << "," << to_string(r[i].failure) << "\n";
    }
}

inline void write_failure_summary_csv(std::ostream& out, const AblationReport& rep) {
  out << "variant,failure,count\n";
  for (const auto& [v, fc] : rep.failures)
    for (const auto& [f, n] : fc)
      out << to_string(v) << "," << to_string(f) << "," << n << "\n";
}

// ---------------------------------------------------------------------------
// Model bundle persistence: one checkpoint per network plus a manifest
// mapping roles to files and recording the net configuration and clamp.

inline void save_variant_models(const std::string& dir, VariantModels& m) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  ConfigMap manifest;
  manifest["variant"] = to_string(m.variant);
  manifest["image_size"] = std::to_string(m.net_cfg.image_size);
  manifest["conv_channels"] = std::to_string(m.net_cfg.conv_channels);
  manifest["mlp_hidden"] = std::to_string(m.net_cfg.mlp_hidden);
  manifest["attention_dim"] = std::to_string(m.net_cfg.attention_dim);
  manifest["init_seed"] = std::to_string(m.net_cfg.init_seed);
  manifest["gaze_image_size"] = std::to_string(m.gaze_cfg.image_size);
  manifest["gaze_components"] = std::to_string(m.gaze_cfg.mixture_components);
  for (int i = 0; i < 7; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", m.policy.clamp.limit(i));
    manifest["clamp_" + std::to_string(i)] = buf;
  }
  auto save_net = [&](ActionNet& net, const std::string& name) {
    if (!net.initialized()) return;
    net.save(dir + "/" + name + ".ckpt");
    manifest["net_" + name] = name + ".ckpt";
  };
  save_net(*m.policy.global_grasp_bottle, "global_grasp_bottle");
  save_net(*m.policy.global_grasp_cap, "global_grasp_cap");
  save_net(*m.policy.local_grasp_cap, "local_grasp_cap");
  save_net(*m.policy.rotate, "rotate");
  save_net(*m.policy.mode_classifier, "mode_classifier");
  if (m.policy.global_rotate)
    save_net(*m.policy.global_rotate, "global_rotate");
  static const char* subtask_names[] = {"GraspBottle", "GraspCap", "Rotate"};
  for (int s = 0; s < 3; ++s)
    for (int e = 0; e < 2; ++e)
      if (m.gaze[s][e]) {
        const std::string name =
            std::string("gaze_") + subtask_names[s] + (e == 0 ? "_left" : "_right");
        m.gaze[s][e]->save(dir + "/" + name + ".ckpt");
        manifest["net_" + name] = name + ".ckpt";
      }
  std::ofstream out(dir + "/bundle.txt");
  if (!out) throw io_error("cannot write bundle manifest in " + dir);
  for (const auto& [k, v] : manifest) out << k << " = " << v << "\n";
}

inline VariantModels load_variant_models(const std::string& dir) {
  const ConfigMap manifest = load_config(dir + "/bundle.txt");
  auto need = [&](const std::string& k) -> const std::string& {
    auto it = manifest.find(k);
    if (it == manifest.end())
      throw parse_error("bundle manifest missing key: " + k);
    return it->second;
  };
  VariantModels m;
  m.variant = variant_from_string(need("variant"));
  m.net_cfg.image_size = std::stoi(need("image_size"));
  m.net_cfg.conv_channels = std::stoi(need("conv_channels"));
  m.net_cfg.mlp_hidden = std::stoi(need("mlp_hidden"));
  m.net_cfg.attention_dim = std::stoi(need("attention_dim"));
  m.net_cfg.init_seed = std::stoull(need("init_seed"));
  m.gaze_cfg.image_size = std::stoi(need("gaze_image_size"));
  m.gaze_cfg.conv_channels = m.net_cfg.conv_channels;
  m.gaze_cfg.mlp_hidden = m.net_cfg.mlp_hidden;
  for (int i = 0; i < 7; ++i)
    m.policy.clamp.limit(i) = std::stod(need("clamp_" + std::to_string(i)));

  m.policy.global_grasp_bottle = std::make_unique<GlobalActionNet>(m.net_cfg);
  m.policy.global_grasp_cap = std::make_unique<GlobalActionNet>(m.net_cfg);
  {
    PolicyNetConfig lc = m.net_cfg;
    lc.image_channels = 6;  // stereo crop pair, matching make_variant_models
    m.policy.local_grasp_cap = std::make_unique<LocalActionNet>(lc);
  }
  m.policy.rotate = std::make_unique<RotateNet>(m.net_cfg);
  m.policy.mode_classifier = std::make_unique<ModeClassifier>(m.net_cfg);
  auto load_net = [&](ActionNet& net, const std::string& name) {
    auto it = manifest.find("net_" + name);
    if (it != manifest.end()) net.load(dir + "/" + it->second);
  };
  load_net(*m.policy.global_grasp_bottle, "global_grasp_bottle");
  load_net(*m.policy.global_grasp_cap, "global_grasp_cap");
  load_net(*m.policy.local_grasp_cap, "local_grasp_cap");
  load_net(*m.policy.rotate, "rotate");
  load_net(*m.policy.mode_classifier, "mode_classifier");
  if (manifest.count("net_global_rotate")) {
    m.policy.global_rotate = std::make_unique<GlobalActionNet>(m.net_cfg);
    load_net(*m.policy.global_rotate, "global_rotate");
    m.policy.global_only = true;
  }
  static const char* subtask_names[] = {"GraspBottle", "GraspCap", "Rotate"};
  for (int s = 0; s < 3; ++s)
    for (int e = 0; e < 2; ++e) {
      const std::string name =
          std::string("gaze_") + subtask_names[s] + (e == 0 ? "_left" : "_right");
      auto it = manifest.find("net_" + name);
      if (it == manifest.end()) continue;
      GazeNetConfig gc = m.gaze_cfg;
      m.gaze[s][e] = std::make_unique<GazeNet>(gc);
      m.gaze[s][e]->load(dir + "/" + it->second);
    }
  return m;
}

}  // namespace m2r

#endif  // M2R_PIPELINE_HPP
