#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "m2r/policy.hpp"
#include "m2r/rng.hpp"

using namespace m2r;

namespace {

// Brute-force annotation check: count every adjacent transition and flag
// any local -> global edge.
AnnotationCheck brute_force(const std::vector<ActionMode>& labels) {
  for (size_t i = 1; i < labels.size(); ++i)
    if (labels[i - 1] == ActionMode::local && labels[i] == ActionMode::global)
      return {false, int(i)};
  return {true, -1};
}

PolicyNetConfig tiny_config() {
  PolicyNetConfig cfg;
  cfg.image_size = 8;
  cfg.image_channels = 1;
  cfg.conv_channels = 2;
  cfg.mlp_hidden = 8;
  cfg.attention_dim = 4;
  return cfg;
}

}  // namespace

TEST_CASE("validate_annotation agrees with brute force on 10000 sequences") {
  Rng rng(211);
  for (int it = 0; it < 10000; ++it) {
    const size_t len = 1 + rng.uniform_index(50);
    std::vector<ActionMode> labels(len);
    for (auto& l : labels)
      l = rng.uniform(0.0, 1.0) < 0.5 ? ActionMode::global : ActionMode::local;
    const AnnotationCheck a = validate_annotation(labels);
    const AnnotationCheck b = brute_force(labels);
    CHECK(a.ok == b.ok);
    CHECK(a.first_bad_transition == b.first_bad_transition);
  }
}

TEST_CASE("multi-transition pattern is rejected") {
  // global local global local: two transitions, the second one illegal
  const std::vector<ActionMode> labels{ActionMode::global, ActionMode::local,
                                       ActionMode::global, ActionMode::local};
  const AnnotationCheck c = validate_annotation(labels);
  CHECK_FALSE(c.ok);
  CHECK(c.first_bad_transition == 2);
  CHECK_THROWS_AS(validate_annotation({}), invalid_input_error);
}

TEST_CASE("single-block and single-transition sequences are accepted") {
  using M = ActionMode;
  CHECK(validate_annotation({M::global}).ok);
  CHECK(validate_annotation({M::local}).ok);
  CHECK(validate_annotation({M::global, M::global, M::local, M::local}).ok);
  CHECK(validate_annotation({M::local, M::local}).ok);
}

TEST_CASE("untrained nets refuse to predict") {
  const PolicyNetConfig cfg = tiny_config();
  Tensor img({1, 8, 8});
  GlobalActionNet g(cfg);
  CHECK_THROWS_AS(g.predict(img, StateVector10::Zero(), Eigen::Vector4d::Zero()),
                  not_initialized_error);
  LocalActionNet l(cfg);
  CHECK_THROWS_AS(l.predict(img), not_initialized_error);
  RotateNet r(cfg);
  CHECK_THROWS_AS(r.predict(img, Eigen::Matrix<double, 12, 1>::Zero()),
                  not_initialized_error);
  ModeClassifier m(cfg);
  CHECK_THROWS_AS(m.predict(img, StateVector10::Zero(), Eigen::Vector4d::Zero()),
                  not_initialized_error);
}

TEST_CASE("net outputs are finite and deterministic per seed") {
  const PolicyNetConfig cfg = tiny_config();
  Rng rng(5);
  Tensor img({1, 8, 8});
  img.fill_uniform(rng, 0, 1);
  StateVector10 s = StateVector10::Zero();
  s(9) = 0.5;
  Eigen::Vector4d gz(0.1, -0.2, 0.3, -0.4);
  GlobalActionNet a(cfg), b(cfg);
  const auto va = a.forward(img, s, gz);
  const auto vb = b.forward(img, s, gz);
  CHECK(va == vb);
  CHECK(va.allFinite());
  PolicyNetConfig cfg2 = cfg;
  cfg2.init_seed = 999;
  GlobalActionNet c(cfg2);
  CHECK(c.forward(img, s, gz) != va);
}

TEST_CASE("rotate net attention rows sum to one") {
  const PolicyNetConfig cfg = tiny_config();
  RotateNet r(cfg);
  Rng rng(6);
  Tensor img({1, 8, 8});
  img.fill_uniform(rng, 0, 1);
  Eigen::Matrix<double, 12, 1> ft;
  for (int i = 0; i < 12; ++i) ft(i) = rng.uniform(-1, 1);
  r.forward(img, ft);
  const Tensor& w = r.attention_weights();
  REQUIRE(w.shape == std::vector<size_t>{2, 2});
  CHECK(std::abs(w.at2(0, 0) + w.at2(0, 1) - 1.0) < 1e-12);
  CHECK(std::abs(w.at2(1, 0) + w.at2(1, 1) - 1.0) < 1e-12);
}

TEST_CASE("action clamp is symmetric per component") {
  ActionClamp clamp;
  clamp.limit << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7;
  ActionDelta a;
  a.dpos = Vec3(5, -5, 0.2);
  a.dori = Vec3(-9, 0.1, 9);
  a.dgrip = -2;
  const ActionDelta c = clamp.apply(a);
  CHECK(c.dpos == Vec3(0.1, -0.2, 0.2));
  CHECK(c.dori == Vec3(-0.4, 0.1, 0.6));
  CHECK(c.dgrip == -0.7);
}

TEST_CASE("train_l2 fits a linear target and marks the net trained") {
  // regress the global net onto a fixed action for one input
  const PolicyNetConfig cfg = tiny_config();
  GlobalActionNet net(cfg);
  Rng rng(7);
  Tensor img({1, 8, 8});
  img.fill_uniform(rng, 0, 1);
  StateVector10 s = StateVector10::Zero();
  Eigen::Vector4d gz = Eigen::Vector4d::Zero();
  Eigen::Matrix<double, 7, 1> target;
  target << 0.1, -0.2, 0.05, 0.0, 0.0, 0.0, 0.3;
  L2TrainConfig tc;
  tc.epochs = 400;
  tc.lr = 3e-3;
  CHECK_FALSE(net.initialized());
  const auto curve = train_l2(
      net, 1,
      [&](size_t, double w) {
        const auto pred = net.forward(img, s, gz);
        const auto diff = pred - target;
        net.backward(2.0 * w * diff);
        return diff.squaredNorm();
      },
      tc);
  CHECK(net.initialized());
  REQUIRE(curve.size() == 400);
  CHECK(curve.back() < 1e-6);
  CHECK(curve.back() < curve.front());
  CHECK_THROWS_AS(train_l2(net, 0, [](size_t, double) { return 0.0; }, tc),
                  invalid_input_error);
}

TEST_CASE("dual action policy routes subtasks and modes") {
  const PolicyNetConfig cfg = tiny_config();
  DualActionPolicy p;
  p.global_grasp_bottle = std::make_unique<GlobalActionNet>(cfg);
  p.global_grasp_cap = std::make_unique<GlobalActionNet>(cfg);
  // the local corrector consumes both eyes' crops stacked
  PolicyNetConfig local_cfg = cfg;
  local_cfg.image_channels = 2;
  p.local_grasp_cap = std::make_unique<LocalActionNet>(local_cfg);
  p.rotate = std::make_unique<RotateNet>(cfg);
  p.mode_classifier = std::make_unique<ModeClassifier>(cfg);
  p.global_grasp_bottle->mark_trained();
  p.global_grasp_cap->mark_trained();
  p.local_grasp_cap->mark_trained();
  p.rotate->mark_trained();
  p.mode_classifier->mark_trained();

  Observation obs;
  obs.fovea_left = Tensor({1, 8, 8});
  obs.fovea_right = Tensor({1, 8, 8});
  Rng rng(8);
  obs.fovea_left.fill_uniform(rng, 0, 1);
  obs.fovea_right.fill_uniform(rng, 0, 1);

  ActionMode mode;
  const ActionDelta a = p.dual_action_step(SubtaskLabel::GraspBottle, obs, &mode);
  CHECK(a.finite());
  CHECK(mode == ActionMode::global);  // bottle path never classifies

  // GraspCap consults the classifier; with global_only it must not
  p.global_only = true;
  p.mode_classifier.reset();
  const ActionDelta b = p.dual_action_step(SubtaskLabel::GraspCap, obs, &mode);
  CHECK(b.finite());
  CHECK(mode == ActionMode::global);

  // Rotate under global_only routes through global_rotate
  p.global_rotate = std::make_unique<GlobalActionNet>(cfg);
  p.global_rotate->mark_trained();
  CHECK(p.dual_action_step(SubtaskLabel::Rotate, obs).finite());
}

TEST_CASE("checkpoint round trip restores predictions") {
  const PolicyNetConfig cfg = tiny_config();
  GlobalActionNet a(cfg);
  a.mark_trained();
  Rng rng(9);
  Tensor img({1, 8, 8});
  img.fill_uniform(rng, 0, 1);
  const auto before = a.forward(img, StateVector10::Zero(), Eigen::Vector4d::Zero());
  const std::string path = "/tmp/m2r_test_policy_ckpt.txt";
  a.save(path);
  PolicyNetConfig cfg2 = cfg;
  cfg2.init_seed = 42;
  GlobalActionNet b(cfg2);
  b.load(path);
  CHECK(b.initialized());
  const auto after = b.forward(img, StateVector10::Zero(), Eigen::Vector4d::Zero());
  CHECK(before == after);
  std::remove(path.c_str());
}
