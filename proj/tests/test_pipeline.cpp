#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "m2r/pipeline.hpp"

using namespace m2r;

namespace {

WorldConfig tiny_world() {
  WorldConfig cfg;
  cfg.image_size = 16;
  cfg.fovea_size = 8;
  cfg.seed = 42;
  return cfg;
}

CalibrationMaps identity_maps() {
  CalibrationMaps maps;
  maps.position_map = Mat4::Identity();
  maps.rotation_map = Mat3::Identity();
  return maps;
}

TrainPipelineConfig tiny_train() {
  TrainPipelineConfig cfg;
  cfg.conv_channels = 2;
  cfg.mlp_hidden = 8;
  cfg.attention_dim = 4;
  return cfg;
}

}  // namespace

TEST_CASE("variant names round trip") {
  for (Variant v : {Variant::da_force, Variant::no_force, Variant::no_da,
                    Variant::no_gaze})
    CHECK(variant_from_string(to_string(v)) == v);
  CHECK_THROWS_AS(variant_from_string("da_force"), invalid_input_error);
}

TEST_CASE("world config maps apply and serialize") {
  WorldConfig cfg;
  const ConfigMap map = world_config_to_map(cfg);
  CHECK(map.count("kappa") == 1);
  CHECK(map.count("image_size") == 1);
  CHECK(map.count("seed") == 1);

  WorldConfig other;
  other.kappa = -1;
  other.image_size = 0;
  other.seed = 0;
  apply_world_config(other, map);
  CHECK(other.kappa == cfg.kappa);
  CHECK(other.image_size == cfg.image_size);
  CHECK(other.seed == cfg.seed);

  CHECK_THROWS_AS(apply_world_config(other, {{"no_such_key", "1"}}), config_error);
  CHECK_THROWS_AS(apply_world_config(other, {{"kappa", "soft"}}), config_error);
}

TEST_CASE("train config maps apply and serialize") {
  TrainPipelineConfig cfg;
  cfg.policy_epochs = 33;
  cfg.lr = 0.25;
  const ConfigMap map = train_config_to_map(cfg);
  TrainPipelineConfig back;
  apply_train_config(back, map);
  CHECK(back.policy_epochs == 33);
  CHECK(back.lr == 0.25);
  CHECK_THROWS_AS(apply_train_config(back, {{"momentum", "0.9"}}), config_error);
}

TEST_CASE("policy sample extraction routes arms, eyes and modes") {
  const WorldConfig world = tiny_world();
  const DemoSet demos = generate_master_demos(world, DemoCounts{2, 2, 2});
  const CalibrationMaps maps = identity_maps();
  const SampleSet set = extract_policy_samples(demos.episodes, maps, world, false);

  size_t expected_bottle = 0, expected_cap = 0, expected_rotate = 0;
  for (const auto& e : demos.episodes) {
    const size_t n = e.frames.size() - 1;
    switch (e.subtask()) {
      case SubtaskLabel::GraspBottle: expected_bottle += n; break;
      case SubtaskLabel::GraspCap: expected_cap += n; break;
      case SubtaskLabel::Rotate: expected_rotate += n; break;
    }
  }
  CHECK(set.grasp_bottle.size() == expected_bottle);
  CHECK(set.grasp_cap_all.size() == expected_cap);
  CHECK(set.mode.size() == expected_cap);
  CHECK(set.grasp_cap_global.size() + set.grasp_cap_local.size() == expected_cap);
  CHECK(set.rotate.size() == expected_rotate);

  // bottle samples use the right arm; with identity calibration the state
  // reproduces the recorded right pose
  const Episode* bottle_ep = nullptr;
  for (const auto& e : demos.episodes)
    if (e.subtask() == SubtaskLabel::GraspBottle) { bottle_ep = &e; break; }
  REQUIRE(bottle_ep);
  const Frame& f0 = bottle_ep->frames.front();
  const StateVector10 want = pose_to_state10(f0.pose_right, f0.grip_right);
  CHECK((set.grasp_bottle.front().state - want).cwiseAbs().maxCoeff() < 1e-12);

  // fovea shape and gaze features
  for (const auto& s : set.grasp_bottle) {
    CHECK(s.image.shape ==
          std::vector<size_t>{3, size_t(world.fovea_size), size_t(world.fovea_size)});
    CHECK(s.stereo_gaze.allFinite());
  }
  // local samples carry the local label, global ones do not
  for (const auto& s : set.grasp_cap_local) CHECK(s.mode_label == 1);
  for (const auto& s : set.grasp_cap_global) CHECK(s.mode_label == 0);
  // cap samples carry both eyes' crops stacked for the local corrector
  for (const auto& s : set.grasp_cap_all)
    CHECK(s.stereo_image.shape ==
          std::vector<size_t>{6, size_t(world.fovea_size),
                              size_t(world.fovea_size)});
}

TEST_CASE("global-vision extraction downsamples full images and zeroes gaze") {
  const WorldConfig world = tiny_world();
  const DemoSet demos = generate_master_demos(world, DemoCounts{2, 0, 0});
  const SampleSet set =
      extract_policy_samples(demos.episodes, identity_maps(), world, true);
  REQUIRE_FALSE(set.grasp_bottle.empty());
  for (const auto& s : set.grasp_bottle) {
    CHECK(s.image.shape ==
          std::vector<size_t>{3, size_t(world.fovea_size), size_t(world.fovea_size)});
    CHECK(s.stereo_gaze == Eigen::Vector4d::Zero());
  }
  // the downsampled view is the box average of the full-resolution one
  const int factor = world.image_size / world.fovea_size;
  const auto& ep = demos.episodes.front();
  const Tensor full = eye_view(ep.frames.front().image, Eye::right);
  const Tensor down = downsample_avg(full, factor);
  CHECK(set.grasp_bottle.front().image.v == down.v);
  double expect = 0.0;
  for (int dy = 0; dy < factor; ++dy)
    for (int dx = 0; dx < factor; ++dx) expect += full.at3(0, size_t(dy), size_t(dx));
  expect /= double(factor * factor);
  CHECK(down.at3(0, 0, 0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("frame stride subsamples policy and gaze samples") {
  const WorldConfig world = tiny_world();
  const DemoSet demos = generate_master_demos(world, DemoCounts{2, 0, 0});
  const SampleSet all =
      extract_policy_samples(demos.episodes, identity_maps(), world, false, 1);
  const SampleSet strided =
      extract_policy_samples(demos.episodes, identity_maps(), world, false, 3);
  CHECK(strided.grasp_bottle.size() < all.grasp_bottle.size());
  CHECK(strided.grasp_bottle.size() >= all.grasp_bottle.size() / 3);

  const GazeSampleSets gz = extract_gaze_samples(demos.episodes);
  size_t frames = 0;
  for (const auto& e : demos.episodes) frames += e.frames.size();
  const int gb = subtask_index(SubtaskLabel::GraspBottle);
  CHECK(gz[gb][0].size() == frames);
  CHECK(gz[gb][1].size() == frames);
  CHECK(gz[subtask_index(SubtaskLabel::Rotate)][0].empty());
}

TEST_CASE("action clamp tracks the demonstration percentile") {
  SampleSet set;
  for (int i = 1; i <= 100; ++i) {
    PolicySample s;
    s.action.setZero();
    s.action(0) = 0.001 * i;  // |a| in {0.001 .. 0.1}
    set.grasp_bottle.push_back(s);
  }
  const ActionClamp clamp = action_clamp_from_samples(set, 0.95);
  // 95th percentile of the sorted magnitudes is 0.096, plus 20% headroom
  CHECK(clamp.limit(0) == doctest::Approx(0.096 * 1.2).epsilon(1e-12));
  // untouched components fall back to the minimum limit
  CHECK(clamp.limit(1) == 1e-6);
}

TEST_CASE("expert trials succeed and are deterministic") {
  WorldConfig cfg;
  cfg.seed = 7;
  Rng rng(7);
  const Vec3 bottle = detail::sample_bottle(cfg, rng);
  const TrialResult a = run_trial(nullptr, cfg, bottle, Rng(99));
  CHECK(a.grasp_bottle_ok);
  CHECK(a.grasp_cap_ok);
  CHECK(a.rotate_ok);
  CHECK(a.success);
  CHECK(a.failure == FailureCategory::none);
  const TrialResult b = run_trial(nullptr, cfg, bottle, Rng(99));
  CHECK(b.success == a.success);
  CHECK(b.final_cap_offset == a.final_cap_offset);
}

TEST_CASE("ablation report matches a hand computation") {
  auto trial = [](Variant v, bool ok, FailureCategory f) {
    TrialResult r;
    r.variant = v;
    r.success = ok;
    r.failure = f;
    return r;
  };
  std::map<Variant, std::vector<TrialResult>> results;
  results[Variant::da_force] = {
      trial(Variant::da_force, true, FailureCategory::none),
      trial(Variant::da_force, false, FailureCategory::grasp_cap),
      trial(Variant::da_force, true, FailureCategory::none)};
  results[Variant::no_force] = {
      trial(Variant::no_force, false, FailureCategory::slip),
      trial(Variant::no_force, false, FailureCategory::slip),
      trial(Variant::no_force, true, FailureCategory::none)};
  const AblationReport rep = ablation_report(results);
  const auto& acc = rep.accumulative.at(Variant::da_force);
  REQUIRE(acc.size() == 3);
  CHECK(acc[0] == 1.0);
  CHECK(acc[1] == 0.5);
  CHECK(acc[2] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(rep.failures.at(Variant::no_force).at(FailureCategory::slip) == 2);
  CHECK(rep.failures.at(Variant::da_force).at(FailureCategory::none) == 2);

  std::ostringstream csv;
  write_ablation_csv(csv, results, rep);
  CHECK(csv.str().rfind("variant,trial,success,accumulative_success_rate,failure\n",
                        0) == 0);
  CHECK(csv.str().find("da-force,2,0,0.5,grasp_cap\n") != std::string::npos);
  std::ostringstream fcsv;
  write_failure_summary_csv(fcsv, rep);
  CHECK(fcsv.str().rfind("variant,failure,count\n", 0) == 0);
  CHECK(fcsv.str().find("no-force,slip,2\n") != std::string::npos);

  results[Variant::no_force].pop_back();
  CHECK_THROWS_AS(ablation_report(results), invalid_input_error);
  CHECK_THROWS_AS(ablation_report({}), invalid_input_error);
}

TEST_CASE("variant model bundles round trip through disk") {
  const WorldConfig world = tiny_world();
  const TrainPipelineConfig tc = tiny_train();
  VariantModels m = make_variant_models(Variant::da_force, world, tc);
  m.policy.global_grasp_bottle->mark_trained();
  m.policy.global_grasp_cap->mark_trained();
  m.policy.local_grasp_cap->mark_trained();
  m.policy.rotate->mark_trained();
  m.policy.mode_classifier->mark_trained();
  m.policy.clamp.limit << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7;

  Rng rng(17);
  Tensor img({3, size_t(world.fovea_size), size_t(world.fovea_size)});
  img.fill_uniform(rng, 0, 1);
  Tensor full({3, size_t(world.image_size), size_t(world.image_size)});
  full.fill_uniform(rng, 0, 1);
  const StateVector10 st = StateVector10::Zero();
  const Eigen::Vector4d gz(0.1, 0.2, -0.1, -0.2);
  const auto pred_before = m.policy.global_grasp_bottle->forward(img, st, gz);
  const GaussianMixture2D gaze_before = m.gaze[0][0]->forward(full);

  const std::string dir = "/tmp/m2r_test_bundle";
  save_variant_models(dir, m);
  VariantModels back = load_variant_models(dir);
  CHECK(back.variant == Variant::da_force);
  CHECK(back.net_cfg.image_size == world.fovea_size);
  CHECK((back.policy.clamp.limit - m.policy.clamp.limit).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK(back.policy.global_grasp_bottle->initialized());
  CHECK_FALSE(back.policy.global_only);
  const auto pred_after = back.policy.global_grasp_bottle->forward(img, st, gz);
  CHECK(pred_before == pred_after);
  REQUIRE(back.gaze[0][0]);
  const GaussianMixture2D gaze_after = back.gaze[0][0]->forward(full);
  CHECK(gaze_before.logits == gaze_after.logits);
  CHECK(gaze_before.means == gaze_after.means);
  std::filesystem::remove_all(dir);

  // no-da bundles restore the global-only routing flag
  VariantModels nd = make_variant_models(Variant::no_da, world, tc);
  nd.policy.global_grasp_bottle->mark_trained();
  nd.policy.global_grasp_cap->mark_trained();
  nd.policy.global_rotate->mark_trained();
  const std::string dir2 = "/tmp/m2r_test_bundle_nd";
  save_variant_models(dir2, nd);
  const VariantModels nd_back = load_variant_models(dir2);
  CHECK(nd_back.policy.global_only);
  CHECK(nd_back.policy.global_rotate != nullptr);
  std::filesystem::remove_all(dir2);

  CHECK_THROWS_AS(load_variant_models("/tmp/m2r_no_such_bundle"), m2r_error);
}

TEST_CASE("make_variant_models honors the variant layout") {
  const WorldConfig world = tiny_world();
  const TrainPipelineConfig tc = tiny_train();
  const VariantModels da = make_variant_models(Variant::da_force, world, tc);
  CHECK(da.net_cfg.image_size == world.fovea_size);
  CHECK_FALSE(da.policy.global_only);
  CHECK(da.gaze[0][0] != nullptr);
  CHECK(da.uses_force());

  const VariantModels nf = make_variant_models(Variant::no_force, world, tc);
  CHECK_FALSE(nf.uses_force());

  const VariantModels nd = make_variant_models(Variant::no_da, world, tc);
  CHECK(nd.policy.global_only);
  CHECK(nd.policy.global_rotate != nullptr);

  const VariantModels ng = make_variant_models(Variant::no_gaze, world, tc);
  CHECK(ng.net_cfg.image_size == world.fovea_size);
  CHECK(ng.uses_global_vision());
  CHECK(ng.gaze[0][0] == nullptr);
}
