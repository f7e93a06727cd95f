// m2r: desk-scale master-to-robot transfer pipeline driver.
//
// Subcommands: simulate, calibrate, annotate, train-gaze, train-policy,
// evaluate, report, stats. Every run writes a `<out>.manifest` with the
// tool version, effective config hash, and seed. Exit codes: 0 success,
// 2 usage, 3 I/O, 4 data/validation.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "m2r/m2r.hpp"

namespace {

using namespace m2r;

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitData = 4;

void write_output_manifest(const std::string& out_path, const ConfigMap& effective,
                           std::uint64_t seed) {
  write_manifest(out_path + ".manifest", effective, seed);
}

ConfigMap load_optional_config(const std::string& path) {
  return path.empty() ? ConfigMap{} : load_config(path);
}

// flag > config file > default
void merge_flag(ConfigMap& file_cfg, const std::string& key, const std::string& value,
                bool flag_given) {
  if (flag_given || !file_cfg.count(key)) file_cfg[key] = value;
}

struct SimulateArgs {
  std::string config, out, pairs_out;
  int episodes = 30;
  int pairs_n = 0;
  double split_frac = 0.9;
  std::uint64_t seed = 1;
  bool seed_given = false;
};

int run_simulate(const SimulateArgs& a) {
  WorldConfig world;
  ConfigMap file_cfg = load_optional_config(a.config);
  apply_world_config(world, file_cfg);
  if (a.seed_given || !file_cfg.count("seed")) world.seed = a.seed;
  world.validate();

  DemoCounts counts;
  counts.grasp_bottle = size_t(a.episodes) / 3 + (size_t(a.episodes) % 3 > 0 ? 1 : 0);
  counts.grasp_cap = size_t(a.episodes) / 3 + (size_t(a.episodes) % 3 > 1 ? 1 : 0);
  counts.rotate = size_t(a.episodes) / 3;
  DemoSet demos = generate_master_demos(world, counts);
  if (demos.episodes.size() >= 10) {
    auto [train, val] = split_dataset(demos.episodes, a.split_frac, world.seed);
    demos.episodes = std::move(train);
    demos.episodes.insert(demos.episodes.end(), val.begin(), val.end());
  }
  save_episodes(a.out, demos.episodes);
  ConfigMap effective = world_config_to_map(world);
  effective["episodes"] = std::to_string(a.episodes);
  effective["split_frac"] = std::to_string(a.split_frac);
  write_output_manifest(a.out, effective, world.seed);

  if (!a.pairs_out.empty()) {
    Rng rng = Rng(world.seed).fork(0x7061697273ULL);
    const size_t n = a.pairs_n > 0 ? size_t(a.pairs_n) : 500;
    const auto pairs = generate_calibration_pairs(world, n, rng);
    std::ofstream pout(a.pairs_out);
    if (!pout) throw io_error("cannot open pose-pair file for writing: " + a.pairs_out);
    write_pose_pairs(pout, pairs);
    write_output_manifest(a.pairs_out, effective, world.seed);
  }
  std::cout << "simulate: wrote " << demos.episodes.size() << " episodes to " << a.out
            << "\n";
  return 0;
}

struct CalibrateArgs {
  std::string pairs, out, report;
  double holdout_frac = 0.2;
  std::string project_so3 = "off";
  std::uint64_t seed = 1;
};

int run_calibrate(const CalibrateArgs& a) {
  if (a.project_so3 != "on" && a.project_so3 != "off")
    throw invalid_input_error("--project-so3 must be `on` or `off`");
  const auto pairs = load_pose_pairs(a.pairs);
  if (pairs.size() < 5)
    throw invalid_input_error("calibrate: need at least 5 pose pairs, got " +
                              std::to_string(pairs.size()));
  // deterministic shuffle, then tail fraction held out
  std::vector<PosePair> shuffled = pairs;
  Rng rng(a.seed);
  for (size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled[i - 1], shuffled[rng.uniform_index(i)]);
  const size_t n_fit =
      shuffled.size() - size_t(a.holdout_frac * double(shuffled.size()));
  std::vector<PosePair> fit(shuffled.begin(), shuffled.begin() + long(n_fit));
  std::vector<PosePair> held(shuffled.begin() + long(n_fit), shuffled.end());
  if (fit.size() < 4 || held.empty())
    throw invalid_input_error("calibrate: holdout fraction leaves too few pairs");

  const CalibrationMaps maps = fit_calibration(fit, a.project_so3 == "on");
  const ErrorReport rep = calibration_report(maps, held);
  save_calibration_maps(a.out, maps);

  ConfigMap effective;
  effective["pairs"] = a.pairs;
  effective["holdout_frac"] = std::to_string(a.holdout_frac);
  effective["project_so3"] = a.project_so3;
  write_output_manifest(a.out, effective, a.seed);

  if (!a.report.empty()) {
    std::ofstream r(a.report);
    if (!r) throw io_error("cannot open report for writing: " + a.report);
    char buf[256];
    r << "metric,x,y,z,total\n";
    std::snprintf(buf, sizeof buf, "before,%.17g,%.17g,%.17g,%.17g\n",
                  rep.axis_error_before.x(), rep.axis_error_before.y(),
                  rep.axis_error_before.z(), rep.total_before);
    r << buf;
    std::snprintf(buf, sizeof buf, "after,%.17g,%.17g,%.17g,%.17g\n",
                  rep.axis_error_after.x(), rep.axis_error_after.y(),
                  rep.axis_error_after.z(), rep.total_after);
    r << buf;
    write_output_manifest(a.report, effective, a.seed);
  }
  std::cout << "calibrate: held-out mean error " << rep.total_before << " -> "
            << rep.total_after << " m over " << held.size() << " pairs\n";
  return 0;
}

struct AnnotateArgs {
  std::string demos, out, config, maps;
};

int run_annotate(const AnnotateArgs& a) {
  // read_episodes enforces the single-transition rule on labeled episodes
  std::vector<Episode> episodes = load_episodes(a.demos);
  size_t labeled = 0, derived = 0;
  WorldConfig world;
  apply_world_config(world, load_optional_config(a.config));
  const bool can_derive = !a.config.empty() && !a.maps.empty();
  CalibrationMaps maps;
  if (can_derive) maps = load_calibration_maps(a.maps);

  for (auto& e : episodes) {
    if (e.subtask() != SubtaskLabel::GraspCap) continue;
    if (e.frames.front().mode) {
      ++labeled;
      continue;
    }
    if (!can_derive)
      throw invalid_input_error(
          "annotate: episode " + e.id +
          " lacks mode labels; pass --config and --maps to derive them");
    // label local from the first frame whose calibrated hand-to-cap
    // distance drops inside the local radius; g*l* holds by construction
    size_t first_local = e.frames.size();
    for (size_t i = 0; i < e.frames.size(); ++i) {
      const Vec3 cap = bottle_position_from_frame(world, e.frames[i]) +
                       Vec3(0.0, 0.0, world.cap_height);
      const Pose cal = apply_calibration(maps, e.frames[i].pose_left);
      if ((cal.position - cap).norm() <= world.local_radius) {
        first_local = i;
        break;
      }
    }
    for (size_t i = 0; i < e.frames.size(); ++i)
      e.frames[i].mode = i >= first_local ? ActionMode::local : ActionMode::global;
    ++derived;
  }
  if (!a.out.empty()) {
    save_episodes(a.out, episodes);
    ConfigMap effective;
    effective["demos"] = a.demos;
    write_output_manifest(a.out, effective, 0);
  }
  std::cout << "annotate: " << labeled << " episodes already labeled, " << derived
            << " labeled by the distance rule\n";
  return 0;
}

struct TrainArgs {
  std::string demos, maps, out, config, variant = "da-force";
  int epochs = 300;
  double lr = 3e-5;
  double weight_decay = 0.01;
  std::uint64_t seed = 5;
  bool epochs_given = false, lr_given = false, wd_given = false, seed_given = false;
};

TrainPipelineConfig make_train_config(const TrainArgs& a, ConfigMap& effective) {
  TrainPipelineConfig cfg;
  ConfigMap file_cfg = load_optional_config(a.config);
  merge_flag(file_cfg, "policy_epochs", std::to_string(a.epochs), a.epochs_given);
  merge_flag(file_cfg, "gaze_epochs", std::to_string(a.epochs), a.epochs_given);
  {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", a.lr);
    merge_flag(file_cfg, "lr", buf, a.lr_given);
    std::snprintf(buf, sizeof buf, "%.17g", a.weight_decay);
    merge_flag(file_cfg, "weight_decay", buf, a.wd_given);
  }
  merge_flag(file_cfg, "seed", std::to_string(a.seed), a.seed_given);
  apply_train_config(cfg, file_cfg);
  effective = train_config_to_map(cfg);
  return cfg;
}

int run_train_gaze(const TrainArgs& a) {
  ConfigMap effective;
  const TrainPipelineConfig cfg = make_train_config(a, effective);
  const auto episodes = load_episodes(a.demos);
  std::vector<Episode> train;
  for (const auto& e : episodes)
    if (e.split == Split::train) train.push_back(e);
  if (train.empty()) throw invalid_input_error("train-gaze: no training episodes");

  GazeSampleSets sets = extract_gaze_samples(train, cfg.gaze_frame_stride);
  std::filesystem::create_directories(a.out);
  GazeTrainConfig gc;
  gc.epochs = cfg.gaze_epochs;
  gc.batch_size = cfg.batch_size;
  gc.lr = cfg.lr;
  gc.weight_decay = cfg.weight_decay;
  gc.seed = cfg.seed + 77;
  static const char* subtask_names[] = {"GraspBottle", "GraspCap", "Rotate"};
  ConfigMap manifest = effective;
  for (int s = 0; s < 3; ++s)
    for (int e = 0; e < 2; ++e) {
      if (sets[s][e].empty()) continue;
      GazeNetConfig net_cfg;
      net_cfg.image_size = int(sets[s][e].front().image.shape[1]);
      net_cfg.init_seed = cfg.seed + std::uint64_t(100 + 10 * s + e);
      GazeNet net(net_cfg);
      std::vector<std::pair<const Tensor*, Vec2>> data;
      for (const auto& p : sets[s][e]) data.push_back({&p.image, p.g});
      const auto rec = train_gaze_predictor(net, data, gc);
      const std::string name =
          std::string("gaze_") + subtask_names[s] + (e == 0 ? "_left" : "_right");
      net.save(a.out + "/" + name + ".ckpt");
      manifest["net_" + name] = name + ".ckpt";
      std::cout << "train-gaze: " << name << " final NLL " << rec.epoch_loss.back()
                << " over " << data.size() << " samples\n";
    }
  write_manifest(a.out + "/manifest.txt", manifest, cfg.seed);
  return 0;
}

int run_train_policy(const TrainArgs& a) {
  ConfigMap effective;
  const TrainPipelineConfig cfg = make_train_config(a, effective);
  const Variant variant = variant_from_string(a.variant);
  const auto episodes = load_episodes(a.demos);
  std::vector<Episode> train;
  for (const auto& e : episodes)
    if (e.split == Split::train) train.push_back(e);
  if (train.empty()) throw invalid_input_error("train-policy: no training episodes");
  const CalibrationMaps maps = load_calibration_maps(a.maps);
  WorldConfig world;
  world.image_size = int(train.front().frames.front().image.shape[1]);
  VariantModels models = train_variant(variant, train, maps, world, cfg);
  save_variant_models(a.out, models);
  effective["variant"] = a.variant;
  write_manifest(a.out + "/manifest.txt", effective, cfg.seed);
  std::cout << "train-policy: saved " << a.variant << " bundle to " << a.out << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string models, demos, config, out, variant = "da-force";
  int trials = 18;
  std::uint64_t seed = 9;
};

int run_evaluate(const EvaluateArgs& a) {
  WorldConfig world;
  ConfigMap file_cfg = load_optional_config(a.config);
  apply_world_config(world, file_cfg);
  world.validate();

  const bool expert = a.variant == "expert";
  VariantModels models;
  if (!expert) {
    if (a.models.empty())
      throw invalid_input_error("evaluate: --models required unless --variant expert");
    models = load_variant_models(a.models);
    if (to_string(models.variant) != a.variant)
      throw invalid_input_error("evaluate: bundle variant " +
                                std::string(to_string(models.variant)) +
                                " does not match --variant " + a.variant);
  }

  // trial positions: validation episodes' initial bottle positions when a
  // demo file is given, otherwise fresh draws from the bottle distribution
  std::vector<Vec3> positions;
  Rng pos_rng = Rng(a.seed).fork(1);
  if (!a.demos.empty()) {
    for (const auto& e : load_episodes(a.demos))
      if (e.split == Split::validation)
        positions.push_back(bottle_position_from_frame(world, e.frames.front()));
  }
  while (int(positions.size()) < a.trials)
    positions.push_back(detail::sample_bottle(world, pos_rng));
  positions.resize(size_t(a.trials));

  std::ofstream out(a.out);
  if (!out) throw io_error("cannot open results file for writing: " + a.out);
  out << "variant,trial,success,failure,grasp_bottle,grasp_cap,rotate\n";
  int successes = 0;
  for (int t = 0; t < a.trials; ++t) {
    Rng trial_rng = Rng(a.seed).fork(1000 + std::uint64_t(t));
    const TrialResult r = run_trial(expert ? nullptr : &models, world,
                                    positions[size_t(t)], trial_rng);
    successes += r.success ? 1 : 0;
    out << a.variant << "," << t + 1 << "," << (r.success ? 1 : 0) << ","
        << to_string(r.failure) << "," << (r.grasp_bottle_ok ? 1 : 0) << ","
        << (r.grasp_cap_ok ? 1 : 0) << "," << (r.rotate_ok ? 1 : 0) << "\n";
  }
  ConfigMap effective = world_config_to_map(world);
  effective["variant"] = a.variant;
  effective["trials"] = std::to_string(a.trials);
  write_output_manifest(a.out, effective, a.seed);
  std::cout << "evaluate: " << a.variant << " " << successes << "/" << a.trials
            << " successes -> " << a.out << "\n";
  return 0;
}

struct ReportArgs {
  std::vector<std::string> results;
  std::string out, failures;
};

int run_report(const ReportArgs& a) {
  std::map<Variant, std::vector<TrialResult>> all;
  for (const auto& path : a.results) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open results file: " + path);
    std::string line;
    if (!std::getline(in, line) ||
        line.rfind("variant,trial,success,failure", 0) != 0)
      throw parse_error(path + ": missing results header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string variant, trial, success, failure, gb, gc, rot;
      if (!std::getline(ls, variant, ',') || !std::getline(ls, trial, ',') ||
          !std::getline(ls, success, ',') || !std::getline(ls, failure, ','))
        throw parse_error(path + ": malformed results row: " + line);
      std::getline(ls, gb, ',');
      std::getline(ls, gc, ',');
      std::getline(ls, rot, ',');
      TrialResult r;
      r.variant = variant_from_string(variant);
      r.success = success == "1";
      r.grasp_bottle_ok = gb == "1";
      r.grasp_cap_ok = gc == "1";
      r.rotate_ok = rot == "1";
      for (FailureCategory f :
           {FailureCategory::none, FailureCategory::grasp_bottle,
            FailureCategory::grasp_cap, FailureCategory::rotate_timeout,
            FailureCategory::slip})
        if (failure == to_string(f)) r.failure = f;
      all[r.variant].push_back(r);
    }
  }
  const AblationReport rep = ablation_report(all);
  std::ofstream out(a.out);
  if (!out) throw io_error("cannot open report for writing: " + a.out);
  write_ablation_csv(out, all, rep);
  ConfigMap effective;
  for (size_t i = 0; i < a.results.size(); ++i)
    effective["results_" + std::to_string(i)] = a.results[i];
  write_output_manifest(a.out, effective, 0);
  if (!a.failures.empty()) {
    std::ofstream f(a.failures);
    if (!f) throw io_error("cannot open failure summary for writing: " + a.failures);
    write_failure_summary_csv(f, rep);
    write_output_manifest(a.failures, effective, 0);
  }
  std::cout << "report: " << all.size() << " variants -> " << a.out << "\n";
  return 0;
}

struct StatsArgs {
  std::string demos, out;
};

int run_stats(const StatsArgs& a) {
  const auto stats = dataset_stats(load_episodes(a.demos));
  if (a.out.empty()) {
    write_stats_csv(std::cout, stats);
  } else {
    std::ofstream out(a.out);
    if (!out) throw io_error("cannot open stats file for writing: " + a.out);
    write_stats_csv(out, stats);
    ConfigMap effective;
    effective["demos"] = a.demos;
    write_output_manifest(a.out, effective, 0);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"m2r: desk-scale master-to-robot transfer pipeline"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Generate master demonstrations");
  c_sim->add_option("--config", sim.config, "world config file (key = value)");
  c_sim->add_option("--episodes", sim.episodes, "total episode count")
      ->check(CLI::PositiveNumber);
  c_sim->add_option("--out", sim.out, "episode output file")->required();
  c_sim->add_option("--pairs-out", sim.pairs_out, "also write a calibration pose-pair file");
  c_sim->add_option("--pairs-n", sim.pairs_n, "calibration pair count");
  c_sim->add_option("--split-frac", sim.split_frac, "train fraction");
  auto* sim_seed = c_sim->add_option("--seed", sim.seed, "world seed");

  CalibrateArgs cal;
  auto* c_cal = app.add_subcommand("calibrate", "Fit the master-to-robot maps");
  c_cal->add_option("--pairs", cal.pairs, "pose-pair file")->required();
  c_cal->add_option("--holdout-frac", cal.holdout_frac, "held-out fraction");
  c_cal->add_option("--project-so3", cal.project_so3, "project A_o onto SO(3): on|off");
  c_cal->add_option("--out", cal.out, "calibration maps output")->required();
  c_cal->add_option("--report", cal.report, "before/after error report CSV");
  c_cal->add_option("--seed", cal.seed, "holdout shuffle seed");

  AnnotateArgs ann;
  auto* c_ann = app.add_subcommand("annotate", "Validate or derive global/local labels");
  c_ann->add_option("--demos", ann.demos, "episode file")->required();
  c_ann->add_option("--out", ann.out, "annotated episode output");
  c_ann->add_option("--config", ann.config, "world config (for the distance rule)");
  c_ann->add_option("--maps", ann.maps, "calibration maps (for the distance rule)");

  TrainArgs tg;
  auto* c_tg = app.add_subcommand("train-gaze", "Train the gaze predictors");
  c_tg->add_option("--demos", tg.demos, "episode file")->required();
  c_tg->add_option("--out", tg.out, "output directory")->required();
  c_tg->add_option("--config", tg.config, "training config file");
  auto* tg_epochs = c_tg->add_option("--epochs", tg.epochs, "training epochs");
  auto* tg_lr = c_tg->add_option("--lr", tg.lr, "learning rate");
  auto* tg_wd = c_tg->add_option("--weight-decay", tg.weight_decay, "weight decay");
  auto* tg_seed = c_tg->add_option("--seed", tg.seed, "training seed");

  TrainArgs tp;
  auto* c_tp = app.add_subcommand("train-policy", "Train a full variant model bundle");
  c_tp->add_option("--demos", tp.demos, "episode file")->required();
  c_tp->add_option("--maps", tp.maps, "calibration maps file")->required();
  c_tp->add_option("--variant", tp.variant, "da-force|no-force|no-da|no-gaze");
  c_tp->add_option("--out", tp.out, "output bundle directory")->required();
  c_tp->add_option("--config", tp.config, "training config file");
  auto* tp_epochs = c_tp->add_option("--epochs", tp.epochs, "training epochs");
  auto* tp_lr = c_tp->add_option("--lr", tp.lr, "learning rate");
  auto* tp_wd = c_tp->add_option("--weight-decay", tp.weight_decay, "weight decay");
  auto* tp_seed = c_tp->add_option("--seed", tp.seed, "training seed");

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Run closed-loop trials");
  c_ev->add_option("--models", ev.models, "model bundle directory");
  c_ev->add_option("--demos", ev.demos, "episode file for validation positions");
  c_ev->add_option("--config", ev.config, "world config file");
  c_ev->add_option("--variant", ev.variant, "da-force|no-force|no-da|no-gaze|expert");
  c_ev->add_option("--trials", ev.trials, "trial count")->check(CLI::PositiveNumber);
  c_ev->add_option("--out", ev.out, "results CSV")->required();
  c_ev->add_option("--seed", ev.seed, "trial seed");

  ReportArgs rep;
  auto* c_rep = app.add_subcommand("report", "Ablation report from results files");
  c_rep->add_option("--results", rep.results, "results CSV files")->required();
  c_rep->add_option("--out", rep.out, "accumulative-curve CSV")->required();
  c_rep->add_option("--failures", rep.failures, "failure-count summary CSV");

  StatsArgs st;
  auto* c_st = app.add_subcommand("stats", "Per-subtask dataset statistics");
  c_st->add_option("demos", st.demos, "episode file")->required();
  c_st->add_option("--out", st.out, "stats CSV (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  sim.seed_given = sim_seed->count() > 0;
  tg.epochs_given = tg_epochs->count() > 0;
  tg.lr_given = tg_lr->count() > 0;
  tg.wd_given = tg_wd->count() > 0;
  tg.seed_given = tg_seed->count() > 0;
  tp.epochs_given = tp_epochs->count() > 0;
  tp.lr_given = tp_lr->count() > 0;
  tp.wd_given = tp_wd->count() > 0;
  tp.seed_given = tp_seed->count() > 0;

  try {
    if (c_sim->parsed()) return run_simulate(sim);
    if (c_cal->parsed()) return run_calibrate(cal);
    if (c_ann->parsed()) return run_annotate(ann);
    if (c_tg->parsed()) return run_train_gaze(tg);
    if (c_tp->parsed()) return run_train_policy(tp);
    if (c_ev->parsed()) return run_evaluate(ev);
    if (c_rep->parsed()) return run_report(rep);
    if (c_st->parsed()) return run_stats(st);
  } catch (const io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const m2r_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
