#ifndef M2R_POLICY_HPP
#define M2R_POLICY_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "m2r/checkpoint.hpp"
#include "m2r/errors.hpp"
#include "m2r/kinematics.hpp"
#include "m2r/layers.hpp"
#include "m2r/radam.hpp"

namespace m2r {

enum class Arm { left, right };

struct FTReading {
  Vec3 force = Vec3::Zero();   // N
  Vec3 torque = Vec3::Zero();  // N*m
  Arm arm = Arm::left;

  bool finite() const { return force.allFinite() && torque.allFinite(); }
};

enum class SubtaskLabel { GraspBottle, GraspCap, Rotate };
enum class ActionMode { global, local };

inline const char* to_string(SubtaskLabel s) {
  switch (s) {
    case SubtaskLabel::GraspBottle: return "GraspBottle";
    case SubtaskLabel::GraspCap: return "GraspCap";
    case SubtaskLabel::Rotate: return "Rotate";
  }
  return "?";
}
inline const char* to_string(ActionMode m) {
  return m == ActionMode::global ? "global" : "local";
}

inline SubtaskLabel subtask_from_string(const std::string& s) {
  if (s == "GraspBottle") return SubtaskLabel::GraspBottle;
  if (s == "GraspCap") return SubtaskLabel::GraspCap;
  if (s == "Rotate") return SubtaskLabel::Rotate;
  throw parse_error("unknown subtask label: " + s);
}

// ---------------------------------------------------------------------------
// Annotation rule: a valid episode is global^a local^b (at most one
// transition, never local -> global).

struct AnnotationCheck {
  bool ok = true;
  // index of the first frame whose label breaks the g*l* pattern
  int first_bad_transition = -1;
};

inline AnnotationCheck validate_annotation(const std::vector<ActionMode>& labels) {
  if (labels.empty())
    throw invalid_input_error("validate_annotation: empty label sequence");
  bool seen_local = false;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == ActionMode::local) {
      seen_local = true;
    } else if (seen_local) {
      return {false, int(i)};
    }
  }
  return {true, -1};
}

// ---------------------------------------------------------------------------
// Shared CNN trunk: conv-ReLU with max-pool stages down to 4x4, then a
// final conv-ReLU and SpatialSoftmax. Yields 2*channels keypoint features.

class CnnFeatures {
 public:
  CnnFeatures(int image_size, int in_channels, int channels, Rng rng)
      : channels_(channels) {
    int size = image_size;
    int stage = 0;
    int cur = in_channels;
    while (size > 4) {
      if (size % 2) throw shape_error("CnnFeatures: image size must halve to 4");
      seq_.add<Conv3x3>(size_t(cur), size_t(channels), rng.fork(stage));
      seq_.add<ReLU>();
      seq_.add<MaxPool2>();
      cur = channels;
      size /= 2;
      ++stage;
    }
    seq_.add<Conv3x3>(size_t(cur), size_t(channels), rng.fork(stage));
    seq_.add<ReLU>();
  }

  int feature_dim() const { return 2 * channels_; }

  Tensor forward(const Tensor& image) {
    Tensor f = ssm_.forward(seq_.forward(image));
    f.shape = {f.size()};
    return f;
  }
  void backward(Tensor df) {
    df.shape = {size_t(channels_), 2};
    seq_.backward(ssm_.backward(df));
  }
  std::vector<Tensor*> params() { return seq_.params(); }

 private:
  int channels_;
  Sequential seq_;
  SpatialSoftmax ssm_;
};

struct PolicyNetConfig {
  int image_size = 32;      // fovea crop, or the downsampled full view
  int image_channels = 3;
  int conv_channels = 8;
  int mlp_hidden = 200;
  int attention_dim = 16;   // rotate net F/T token width
  std::uint64_t init_seed = 11;
};

// Base for the three task networks: handles the trained/loaded flag and
// checkpointing.
class ActionNet {
 public:
  virtual ~ActionNet() = default;
  virtual std::vector<Tensor*> params() = 0;
  virtual std::string kind() const = 0;

  bool initialized() const { return initialized_; }
  void mark_trained() { initialized_ = true; }
  void require_initialized() const {
    if (!initialized_)
      throw not_initialized_error(kind() + ": model parameters not loaded");
  }
  void save(const std::string& path) {
    save_checkpoint(path, snapshot_params(kind(), params()));
  }
  void load(const std::string& path) {
    restore_params(load_checkpoint(path), params());
    initialized_ = true;
  }

 protected:
  bool initialized_ = false;
};

// Fast reaching action from foveated vision + robot state + stereo gaze.
class GlobalActionNet : public ActionNet {
 public:
  explicit GlobalActionNet(const PolicyNetConfig& cfg = {}) : cfg_(cfg) {
    Rng rng(cfg.init_seed);
    cnn_ = std::make_unique<CnnFeatures>(cfg.image_size, cfg.image_channels,
                                         cfg.conv_channels, rng.fork(0));
    mlp_ = std::make_unique<Mlp>(size_t(cnn_->feature_dim() + 10 + 4), 7,
                                 rng.fork(1), size_t(cfg.mlp_hidden));
  }

  Eigen::Matrix<double, 7, 1> forward(const Tensor& fovea, const StateVector10& state,
                                      const Eigen::Vector4d& stereo_gaze) {
    Tensor f = cnn_->forward(fovea);
    feat_dim_ = f.size();
    Tensor in({f.size() + 14});
    std::copy(f.v.begin(), f.v.end(), in.v.begin());
    for (int i = 0; i < 10; ++i) in.v[f.size() + i] = state(i);
    for (int i = 0; i < 4; ++i) in.v[f.size() + 10 + i] = stereo_gaze(i);
    const Tensor out = mlp_->forward(in);
    Eigen::Matrix<double, 7, 1> a;
    for (int i = 0; i < 7; ++i) a(i) = out.v[i];
    return a;
  }

  void backward(const Eigen::Matrix<double, 7, 1>& dout) {
    Tensor d({7});
    for (int i = 0; i < 7; ++i) d.v[i] = dout(i);
    Tensor din = mlp_->backward(d);
    Tensor df({feat_dim_});
    std::copy(din.v.begin(), din.v.begin() + long(feat_dim_), df.v.begin());
    cnn_->backward(df);
  }

  ActionDelta predict(const Tensor& fovea, const StateVector10& state,
                      const Eigen::Vector4d& stereo_gaze) {
    require_initialized();
    return ActionDelta::from_vec(forward(fovea, state, stereo_gaze));
  }

  std::vector<Tensor*> params() override {
    auto p = cnn_->params();
    auto q = mlp_->params();
    p.insert(p.end(), q.begin(), q.end());
    return p;
  }
  std::string kind() const override { return "global_action"; }

 private:
  PolicyNetConfig cfg_;
  std::unique_ptr<CnnFeatures> cnn_;
  std::unique_ptr<Mlp> mlp_;
  size_t feat_dim_ = 0;
};

// Precise action from foveated vision only: one conv-ReLU, nine residual
// blocks with a max-pool every two blocks, SpatialSoftmax, MLP.
class LocalActionNet : public ActionNet {
 public:
  explicit LocalActionNet(const PolicyNetConfig& cfg = {}) : cfg_(cfg) {
    Rng rng(cfg.init_seed + 1);
    seq_.add<Conv3x3>(size_t(cfg.image_channels), size_t(cfg.conv_channels), rng.fork(0));
    seq_.add<ReLU>();
    int size = cfg.image_size;
    for (int b = 1; b <= 9; ++b) {
      seq_.add<ResidualBlock>(size_t(cfg.conv_channels), rng.fork(b));
      if (b % 2 == 0 && size > 2) {
        seq_.add<MaxPool2>();
        size /= 2;
      }
    }
    mlp_ = std::make_unique<Mlp>(size_t(2 * cfg.conv_channels), 7, rng.fork(10),
                                 size_t(cfg.mlp_hidden));
  }

  Eigen::Matrix<double, 7, 1> forward(const Tensor& fovea) {
    Tensor f = ssm_.forward(seq_.forward(fovea));
    f.shape = {f.size()};
    const Tensor out = mlp_->forward(f);
    Eigen::Matrix<double, 7, 1> a;
    for (int i = 0; i < 7; ++i) a(i) = out.v[i];
    return a;
  }

  void backward(const Eigen::Matrix<double, 7, 1>& dout) {
    Tensor d({7});
    for (int i = 0; i < 7; ++i) d.v[i] = dout(i);
    Tensor df = mlp_->backward(d);
    df.shape = {size_t(cfg_.conv_channels), 2};
    seq_.backward(ssm_.backward(df));
  }

  ActionDelta predict(const Tensor& fovea) {
    require_initialized();
    return ActionDelta::from_vec(forward(fovea));
  }

  std::vector<Tensor*> params() override {
    auto p = seq_.params();
    auto q = mlp_->params();
    p.insert(p.end(), q.begin(), q.end());
    return p;
  }
  std::string kind() const override { return "local_action"; }

 private:
  PolicyNetConfig cfg_;
  Sequential seq_;
  SpatialSoftmax ssm_;
  std::unique_ptr<Mlp> mlp_;
};

// Cap-rotation action from foveated vision plus dual-arm F/T input. Each
// arm forms one token: 6 F/T values + 2 one-hot arm-identity features,
// projected to the attention width and mixed by self-attention.
class RotateNet : public ActionNet {
 public:
  explicit RotateNet(const PolicyNetConfig& cfg = {}) : cfg_(cfg) {
    Rng rng(cfg.init_seed + 2);
    cnn_ = std::make_unique<CnnFeatures>(cfg.image_size, cfg.image_channels,
                                         cfg.conv_channels, rng.fork(0));
    proj_ = std::make_unique<FullyConnected>(8, size_t(cfg.attention_dim), rng.fork(1));
    attn_ = std::make_unique<SelfAttention>(size_t(cfg.attention_dim), rng.fork(2));
    mlp_ = std::make_unique<Mlp>(size_t(cnn_->feature_dim() + 2 * cfg.attention_dim),
                                 7, rng.fork(3), size_t(cfg.mlp_hidden));
  }

  // ft12: left-arm force/torque then right-arm force/torque.
  Eigen::Matrix<double, 7, 1> forward(const Tensor& fovea,
                                      const Eigen::Matrix<double, 12, 1>& ft12) {
    const int d = cfg_.attention_dim;
    Tensor tokens({2, size_t(d)});
    for (int arm = 0; arm < 2; ++arm) {
      Tensor raw({8});
      for (int i = 0; i < 6; ++i) raw.v[i] = ft12(6 * arm + i);
      raw.v[6] = arm == 0 ? 1.0 : 0.0;
      raw.v[7] = arm == 1 ? 1.0 : 0.0;
      token_in_[arm] = raw;
      const Tensor t = proj_->forward(raw);
      for (int i = 0; i < d; ++i) tokens.at2(arm, i) = t.v[i];
    }
    Tensor mixed = attn_->forward(tokens);
    Tensor f = cnn_->forward(fovea);
    feat_dim_ = f.size();
    Tensor in({f.size() + size_t(2 * d)});
    std::copy(f.v.begin(), f.v.end(), in.v.begin());
    std::copy(mixed.v.begin(), mixed.v.end(), in.v.begin() + long(f.size()));
    const Tensor out = mlp_->forward(in);
    Eigen::Matrix<double, 7, 1> a;
    for (int i = 0; i < 7; ++i) a(i) = out.v[i];
    return a;
  }

  void backward(const Eigen::Matrix<double, 7, 1>& dout) {
    const int d = cfg_.attention_dim;
    Tensor dv({7});
    for (int i = 0; i < 7; ++i) dv.v[i] = dout(i);
    Tensor din = mlp_->backward(dv);
    Tensor df({feat_dim_});
    std::copy(din.v.begin(), din.v.begin() + long(feat_dim_), df.v.begin());
    cnn_->backward(df);
    Tensor dmixed({2, size_t(d)});
    std::copy(din.v.begin() + long(feat_dim_), din.v.end(), dmixed.v.begin());
    Tensor dtok = attn_->backward(dmixed);
    // token projection backward, one arm at a time (shared weights)
    for (int arm = 0; arm < 2; ++arm) {
      proj_->forward(token_in_[arm]);  // restore cache for this arm
      Tensor dt({size_t(d)});
      for (int i = 0; i < d; ++i) dt.v[i] = dtok.at2(arm, i);
      proj_->backward(dt);
    }
  }

  ActionDelta predict(const Tensor& fovea, const Eigen::Matrix<double, 12, 1>& ft12) {
    require_initialized();
    return ActionDelta::from_vec(forward(fovea, ft12));
  }

  const Tensor& attention_weights() const { return attn_->attention_weights(); }

  std::vector<Tensor*> params() override {
    auto p = cnn_->params();
    for (Tensor* t : proj_->params()) p.push_back(t);
    for (Tensor* t : attn_->params()) p.push_back(t);
    auto q = mlp_->params();
    p.insert(p.end(), q.begin(), q.end());
    return p;
  }
  std::string kind() const override { return "rotate"; }

 private:
  PolicyNetConfig cfg_;
  std::unique_ptr<CnnFeatures> cnn_;
  std::unique_ptr<FullyConnected> proj_;
  std::unique_ptr<SelfAttention> attn_;
  std::unique_ptr<Mlp> mlp_;
  Tensor token_in_[2];
  size_t feat_dim_ = 0;
};

// Binary global/local detector: keypoint features plus the arm state and
// stereo gaze (the state/gaze pair carries the arm-to-target distance,
// which vision alone resolves poorly once both grippers are in frame).
class ModeClassifier : public ActionNet {
 public:
  explicit ModeClassifier(const PolicyNetConfig& cfg = {}) : cfg_(cfg) {
    Rng rng(cfg.init_seed + 3);
    cnn_ = std::make_unique<CnnFeatures>(cfg.image_size, cfg.image_channels,
                                         cfg.conv_channels, rng.fork(0));
    head_ = std::make_unique<FullyConnected>(size_t(cnn_->feature_dim() + 14), 1,
                                             rng.fork(1));
  }

  double forward_logit(const Tensor& fovea, const StateVector10& state,
                       const Eigen::Vector4d& stereo_gaze) {
    Tensor f = cnn_->forward(fovea);
    feat_dim_ = f.size();
    Tensor in({f.size() + 14});
    std::copy(f.v.begin(), f.v.end(), in.v.begin());
    for (int i = 0; i < 10; ++i) in.v[f.size() + i] = state(i);
    for (int i = 0; i < 4; ++i) in.v[f.size() + 10 + i] = stereo_gaze(i);
    return head_->forward(in).v[0];
  }
  void backward(double dlogit) {
    Tensor d({1});
    d.v[0] = dlogit;
    Tensor din = head_->backward(d);
    Tensor df({feat_dim_});
    std::copy(din.v.begin(), din.v.begin() + long(feat_dim_), df.v.begin());
    cnn_->backward(df);
  }

  // local iff sigmoid(logit) > 0.5
  ActionMode predict(const Tensor& fovea, const StateVector10& state,
                     const Eigen::Vector4d& stereo_gaze) {
    require_initialized();
    return forward_logit(fovea, state, stereo_gaze) > 0.0 ? ActionMode::local
                                                          : ActionMode::global;
  }

  std::vector<Tensor*> params() override {
    auto p = cnn_->params();
    for (Tensor* t : head_->params()) p.push_back(t);
    return p;
  }
  std::string kind() const override { return "mode_classifier"; }

 private:
  PolicyNetConfig cfg_;
  std::unique_ptr<CnnFeatures> cnn_;
  std::unique_ptr<FullyConnected> head_;
  size_t feat_dim_ = 0;
};

// ---------------------------------------------------------------------------
// Dual-action controller

struct Observation {
  Tensor fovea_left;                 // image fed to left-arm nets
  Tensor fovea_right;                // image fed to right-arm nets
  StateVector10 state_left = StateVector10::Zero();
  StateVector10 state_right = StateVector10::Zero();
  Eigen::Vector4d stereo_gaze = Eigen::Vector4d::Zero();
  Eigen::Matrix<double, 12, 1> ft12 = Eigen::Matrix<double, 12, 1>::Zero();
};

// Per-component symmetric clamp, from demonstration action percentiles.
struct ActionClamp {
  Eigen::Matrix<double, 7, 1> limit =
      Eigen::Matrix<double, 7, 1>::Constant(std::numeric_limits<double>::infinity());

  ActionDelta apply(const ActionDelta& a) const {
    auto v = a.vec();
    for (int i = 0; i < 7; ++i) v(i) = std::clamp(v(i), -limit(i), limit(i));
    return ActionDelta::from_vec(v);
  }
};

// The full model set: per-subtask global nets, one local net, the rotate
// net, and the global/local classifier.
struct DualActionPolicy {
  std::unique_ptr<GlobalActionNet> global_grasp_bottle;
  std::unique_ptr<GlobalActionNet> global_grasp_cap;
  std::unique_ptr<LocalActionNet> local_grasp_cap;
  std::unique_ptr<RotateNet> rotate;
  std::unique_ptr<ModeClassifier> mode_classifier;
  ActionClamp clamp;
  // When set, the Rotate subtask is routed through this global net and
  // the dual-action switch is bypassed (No-DA ablation).
  std::unique_ptr<GlobalActionNet> global_rotate;
  bool global_only = false;

  ActionMode classify(const Observation& obs) const {
    return mode_classifier->predict(obs.fovea_left, obs.state_left, obs.stereo_gaze);
  }

  ActionDelta dual_action_step(SubtaskLabel subtask, const Observation& obs,
                               ActionMode* mode_out = nullptr) {
    ActionDelta a;
    ActionMode mode = ActionMode::global;
    switch (subtask) {
      case SubtaskLabel::GraspBottle:
        a = global_grasp_bottle->predict(obs.fovea_right, obs.state_right,
                                         obs.stereo_gaze);
        break;
      case SubtaskLabel::GraspCap:
        if (!global_only) mode = classify(obs);
        if (mode == ActionMode::local)
          a = local_grasp_cap->predict(
              stack_channels(obs.fovea_left, obs.fovea_right));
        else
          a = global_grasp_cap->predict(obs.fovea_left, obs.state_left,
                                        obs.stereo_gaze);
        break;
      case SubtaskLabel::Rotate:
        if (global_only)
          a = global_rotate->predict(obs.fovea_left, obs.state_left, obs.stereo_gaze);
        else
          a = rotate->predict(obs.fovea_left, obs.ft12);
        break;
      default:
        throw invalid_input_error("dual_action_step: unknown subtask");
    }
    if (mode_out) *mode_out = mode;
    return clamp.apply(a);
  }
};

// ---------------------------------------------------------------------------
// l2 training helpers

struct L2TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 13;
  int max_steps_per_epoch = 0;
};

// Generic minibatch loop over an index set; forward_backward returns the
// per-sample loss and accumulates gradients.
template <typename Net, typename ForwardBackward>
std::vector<double> train_l2(Net& net, size_t n_samples, ForwardBackward&& fb,
                             const L2TrainConfig& cfg) {
  if (n_samples == 0) throw invalid_input_error("train_l2: empty dataset");
  RAdam::Config oc;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  RAdam opt(net.params(), oc);
  Rng rng(cfg.seed);
  std::vector<size_t> order(n_samples);
  for (size_t i = 0; i < n_samples; ++i) order[i] = i;
  std::vector<double> curve;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_index(i)]);
    double total = 0.0;
    size_t seen = 0;
    int steps = 0;
    for (size_t start = 0; start < n_samples; start += size_t(cfg.batch_size)) {
      if (cfg.max_steps_per_epoch > 0 && steps >= cfg.max_steps_per_epoch) break;
      const size_t end = std::min(n_samples, start + size_t(cfg.batch_size));
      for (Tensor* p : net.params()) p->zero_grad();
      for (size_t j = start; j < end; ++j) {
        const double loss = fb(order[j], 1.0 / double(end - start));
        if (!std::isfinite(loss))
          throw training_diverged_error("l2 training diverged at epoch " +
                                        std::to_string(epoch));
        total += loss;
        ++seen;
      }
      opt.step();
      ++steps;
    }
    curve.push_back(seen ? total / double(seen) : 0.0);
  }
  net.mark_trained();
  return curve;
}

}  // namespace m2r

#endif  // M2R_POLICY_HPP
