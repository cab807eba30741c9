// Command-line front end: synthetic scenario generation and the staged
// pipeline (calibrate, slam, place, denoise, eval), each stage reading and
// writing the documented file layout and printing a JSON summary.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mhr/ba_core.hpp"
#include "mhr/config.hpp"
#include "mhr/denoiser.hpp"
#include "mhr/depth_calibration.hpp"
#include "mhr/io.hpp"
#include "mhr/metrics.hpp"
#include "mhr/synth.hpp"
#include "mhr/world_frame.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kConfigEcho = "config.json";
constexpr const char* kIntrinsics = "intrinsics.json";
constexpr const char* kTemplate = "body_template.json";
constexpr const char* kGtTraj = "gt_trajectory.tum";
constexpr const char* kTrueDepthDir = "depth_true";
constexpr const char* kPriorDepthDir = "depth_prior";
constexpr const char* kMaskDir = "masks";
constexpr const char* kGtTracks = "tracks_gt_world.jsonl";
constexpr const char* kDetTracks = "tracks_detected_camera.jsonl";
constexpr const char* kObservations = "anchors_observations.json";
constexpr const char* kCalibration = "calibration.json";
constexpr const char* kEstTraj = "trajectory_est.tum";
constexpr const char* kInvDepths = "inv_depths_est.json";
constexpr const char* kCloud = "cloud_world.ply";
constexpr const char* kPlacedTracks = "tracks_world_est.jsonl";
constexpr const char* kDenoisedTracks = "tracks_world_denoised.jsonl";
constexpr const char* kMetricsFile = "metrics.json";
constexpr const char* kDiagnostics = "diagnostics.json";

std::string frame_file(const std::string& dir, const char* sub, int t, const char* ext) {
  char name[64];
  std::snprintf(name, sizeof(name), "frame_%05d%s", t, ext);
  return (fs::path(dir) / sub / name).string();
}

int count_frames(const std::string& dir, const char* sub, const char* ext) {
  int t = 0;
  while (fs::exists(frame_file(dir, sub, t, ext))) ++t;
  if (t == 0) throw mhr::InputError("no frames found under " + (fs::path(dir) / sub).string());
  return t;
}

mhr::CalibrationResult load_calibration(const std::string& out_dir, const std::string& in_dir) {
  std::string path = (fs::path(out_dir) / kCalibration).string();
  if (!fs::exists(path)) path = (fs::path(in_dir) / kCalibration).string();
  if (!fs::exists(path))
    throw mhr::InputError("calibration.json not found; run the calibrate stage first");
  std::ifstream in(path);
  json j = json::parse(in, nullptr, true);
  mhr::CalibrationResult r;
  r.s = j.at("s").get<double>();
  r.o = j.at("o").get<double>();
  r.final_energy = j.value("final_energy", 0.0);
  r.iterations = j.value("iterations", 0);
  r.converged = j.value("converged", true);
  return r;
}

json run_synth(const mhr::PipelineConfig& cfg, const std::string& out_dir) {
  mhr::SynthScenario sc = mhr::generate(cfg.seed, cfg.synth);
  fs::create_directories(fs::path(out_dir) / kTrueDepthDir);
  fs::create_directories(fs::path(out_dir) / kPriorDepthDir);
  fs::create_directories(fs::path(out_dir) / kMaskDir);

  mhr::save_config((fs::path(out_dir) / kConfigEcho).string(), cfg);
  mhr::save_intrinsics_json((fs::path(out_dir) / kIntrinsics).string(), sc.intr);
  mhr::save_template(sc.tmpl, (fs::path(out_dir) / kTemplate).string());
  mhr::save_trajectory_tum((fs::path(out_dir) / kGtTraj).string(),
                           mhr::Trajectory::from_poses(sc.times, sc.gt_poses));
  for (int t = 0; t < cfg.synth.frames; ++t) {
    mhr::save_depth_raw(frame_file(out_dir, kTrueDepthDir, t, ".raw"),
                        sc.true_depth[std::size_t(t)]);
    mhr::save_depth_raw(frame_file(out_dir, kPriorDepthDir, t, ".raw"),
                        sc.prior_depth[std::size_t(t)]);
    mhr::save_mask_pgm(frame_file(out_dir, kMaskDir, t, ".pgm"), sc.masks[std::size_t(t)]);
  }
  mhr::save_tracks_jsonl((fs::path(out_dir) / kGtTracks).string(), sc.gt_tracks);
  mhr::save_tracks_jsonl((fs::path(out_dir) / kDetTracks).string(), sc.cam_tracks);
  mhr::save_observations_json((fs::path(out_dir) / kObservations).string(), sc.anchors,
                              sc.observations);

  std::size_t n_obs = 0;
  for (const auto& o : sc.observations) n_obs += o.anchor_index.size();
  return json{{"stage", "synth"},
              {"seed", cfg.seed},
              {"frames", cfg.synth.frames},
              {"bodies", cfg.synth.bodies},
              {"correspondences", n_obs}};
}

json run_calibrate(const mhr::PipelineConfig& cfg, const std::string& in_dir,
                   const std::string& out_dir) {
  mhr::Intrinsics intr =
      mhr::load_intrinsics_json((fs::path(in_dir) / kIntrinsics).string());
  mhr::BodyTemplate tmpl = mhr::load_template((fs::path(in_dir) / kTemplate).string());
  const int frames = count_frames(in_dir, kPriorDepthDir, ".raw");
  std::vector<mhr::BodyTrack> det =
      mhr::load_tracks_jsonl((fs::path(in_dir) / kDetTracks).string(), frames);

  std::vector<mhr::CalibrationFrame> cal;
  for (int t = 0; t < frames; ++t) {
    mhr::CalibrationFrame f;
    f.depth = mhr::load_depth_raw(frame_file(in_dir, kPriorDepthDir, t, ".raw"));
    f.masks = mhr::load_mask_pgm(frame_file(in_dir, kMaskDir, t, ".pgm"));
    for (const mhr::BodyTrack& track : det) {
      const auto& slot = track.slots[std::size_t(t)];
      if (!slot)
        throw mhr::InputError("calibrate: track " + std::to_string(track.track_id) +
                              " missing frame " + std::to_string(t));
      f.meshes.push_back(mhr::pose_mesh(tmpl, *slot));
    }
    cal.push_back(std::move(f));
  }

  mhr::CalibrationResult r = mhr::calibrate(cal, intr, cfg.calibration);
  fs::create_directories(out_dir);
  json out{{"s", r.s},
           {"o", r.o},
           {"final_energy", r.final_energy},
           {"iterations", r.iterations},
           {"converged", r.converged}};
  std::ofstream f((fs::path(out_dir) / kCalibration).string(), std::ios::binary);
  f << out.dump(2) << '\n';
  if (!f.flush()) throw mhr::InputError("cannot write calibration.json");
  if (!r.converged) throw mhr::NumericError("calibration did not converge");
  out["stage"] = "calibrate";
  return out;
}

// Chained two-frame alignments give the full solve its starting trajectory;
// a large depth weight pins the pair problems to the calibrated prior.
std::vector<mhr::SE3> incremental_pose_init(const mhr::BAProblem& problem) {
  const int frames = int(problem.anchor_pixels.size());
  std::vector<mhr::SE3> poses_w2c(1);  // frame 0 is the gauge
  for (int t = 1; t < frames; ++t) {
    const mhr::FramePairObservation* pair = nullptr;
    for (const auto& o : problem.observations)
      if (o.i == t - 1 && o.j == t) pair = &o;
    if (!pair)
      throw mhr::InputError("slam: no correspondences between frames " + std::to_string(t - 1) +
                            " and " + std::to_string(t));
    mhr::BAProblem two;
    two.intr = problem.intr;
    two.poses = {mhr::SE3::identity(), mhr::SE3::identity()};
    two.anchor_pixels = {problem.anchor_pixels[std::size_t(t - 1)],
                         problem.anchor_pixels[std::size_t(t)]};
    two.inv_depths = {problem.inv_depths[std::size_t(t - 1)],
                      problem.inv_depths[std::size_t(t)]};
    mhr::FramePairObservation o = *pair;
    o.i = 0;
    o.j = 1;
    two.observations = {std::move(o)};
    if (problem.has_masks())
      two.union_masks = {problem.union_masks[std::size_t(t - 1)],
                         problem.union_masks[std::size_t(t)]};
    if (problem.has_priors())
      two.prior_depths = {problem.prior_depths[std::size_t(t - 1)],
                          problem.prior_depths[std::size_t(t)]};
    two.depth_weight = 1e4;
    mhr::BASolution sol = mhr::solve(two, {});
    poses_w2c.push_back(sol.poses[1] * poses_w2c[std::size_t(t - 1)]);
  }
  return poses_w2c;
}

json run_slam(const mhr::PipelineConfig& cfg, const std::string& in_dir,
              const std::string& out_dir) {
  mhr::Intrinsics intr =
      mhr::load_intrinsics_json((fs::path(in_dir) / kIntrinsics).string());
  mhr::CalibrationResult calib = load_calibration(out_dir, in_dir);
  const int frames = count_frames(in_dir, kPriorDepthDir, ".raw");

  mhr::BAProblem problem;
  problem.intr = intr;
  problem.depth_weight = cfg.ba.depth_weight;
  mhr::load_observations_json((fs::path(in_dir) / kObservations).string(),
                              problem.anchor_pixels, problem.observations);
  if (int(problem.anchor_pixels.size()) != frames)
    throw mhr::InputError("slam: anchor frame count disagrees with the depth maps");

  std::vector<std::vector<double>> human;
  for (int t = 0; t < frames; ++t) {
    mhr::DepthMap prior =
        mhr::load_depth_raw(frame_file(in_dir, kPriorDepthDir, t, ".raw"));
    mhr::DepthMap metric = mhr::apply_calibration(prior, calib.s, calib.o);
    mhr::InstanceMask mask = mhr::load_mask_pgm(frame_file(in_dir, kMaskDir, t, ".pgm"));
    mhr::BoolGrid umask = mask.union_grid();

    std::vector<double> valid;
    for (int r = 0; r < metric.height(); ++r)
      for (int c = 0; c < metric.width(); ++c)
        if (metric.valid(r, c)) valid.push_back(metric.at(r, c));
    std::sort(valid.begin(), valid.end());
    double fallback = valid.empty() ? 2.0 : valid[valid.size() / 2];

    const auto& anchors = problem.anchor_pixels[std::size_t(t)];
    mhr::VecX inv(long(anchors.size()));
    std::vector<double> flags;
    for (std::size_t k = 0; k < anchors.size(); ++k) {
      int row = int(std::lround(anchors[k].y()));
      int col = int(std::lround(anchors[k].x()));
      double z = metric.valid(row, col) ? metric.at(row, col) : fallback;
      inv[long(k)] = 1.0 / z;
      flags.push_back(umask(row, col) != 0 ? 1.0 : 0.0);
    }
    problem.inv_depths.push_back(std::move(inv));
    problem.union_masks.push_back(std::move(umask));
    problem.prior_depths.push_back(std::move(metric));
    human.push_back(std::move(flags));
  }

  problem.poses = incremental_pose_init(problem);
  mhr::BASolveOptions opts;
  opts.max_iters = cfg.ba.max_iterations;
  mhr::BASolution sol = mhr::solve(problem, opts);

  std::vector<mhr::SE3> c2w = mhr::invert_poses(sol.poses);
  std::vector<double> times;
  for (int t = 0; t < frames; ++t) times.push_back(double(t));
  fs::create_directories(out_dir);
  mhr::save_trajectory_tum((fs::path(out_dir) / kEstTraj).string(),
                           mhr::Trajectory::from_poses(times, c2w));
  mhr::save_inv_depths_json((fs::path(out_dir) / kInvDepths).string(), sol.inv_depths);

  std::vector<std::vector<mhr::Vec3>> colors;
  for (int t = 0; t < frames; ++t) {
    std::vector<mhr::Vec3> frame;
    for (double h : human[std::size_t(t)])
      frame.push_back(h > 0 ? mhr::Vec3(217, 77, 51) / 255.0
                            : mhr::Vec3(153, 153, 153) / 255.0);
    colors.push_back(std::move(frame));
  }
  std::vector<std::pair<int, int>> origin;
  mhr::PointCloud cloud = mhr::lift_world_points(c2w, problem.anchor_pixels, sol.inv_depths,
                                                 intr, colors, human, &origin);
  cloud = mhr::filter_epipolar(cloud, origin, sol.poses, intr, problem.observations,
                               cfg.ba.epipolar_tau_px);
  mhr::save_cloud_ply((fs::path(out_dir) / kCloud).string(), cloud);

  json out{{"stage", "slam"},
           {"frames", frames},
           {"iterations", sol.iterations},
           {"initial_cost", sol.cost_trace.front()},
           {"final_cost", sol.cost_trace.back()},
           {"converged", sol.converged},
           {"cloud_points", cloud.size()}};
  if (!sol.converged) throw mhr::NumericError("bundle adjustment did not converge");
  return out;
}

json run_place(const mhr::PipelineConfig&, const std::string& in_dir,
               const std::string& out_dir) {
  mhr::BodyTemplate tmpl = mhr::load_template((fs::path(in_dir) / kTemplate).string());
  mhr::Trajectory traj =
      mhr::load_trajectory_tum((fs::path(out_dir) / kEstTraj).string());
  std::vector<mhr::SE3> poses = traj.poses();
  std::vector<mhr::BodyTrack> det = mhr::load_tracks_jsonl(
      (fs::path(in_dir) / kDetTracks).string(), int(poses.size()));

  std::vector<mhr::BodyTrack> world;
  for (const mhr::BodyTrack& track : det) {
    if (track.frame != mhr::FrameTag::camera)
      throw mhr::InputError("place: detections must be camera-frame");
    mhr::BodyTrack w;
    w.track_id = track.track_id;
    w.frame = mhr::FrameTag::world;
    for (std::size_t t = 0; t < track.slots.size(); ++t) {
      if (!track.slots[t]) {
        w.slots.emplace_back();
        continue;
      }
      w.slots.push_back(mhr::camera_to_world(*track.slots[t], poses[t], tmpl));
    }
    world.push_back(std::move(w));
  }
  fs::create_directories(out_dir);
  mhr::save_tracks_jsonl((fs::path(out_dir) / kPlacedTracks).string(), world);
  return json{{"stage", "place"}, {"tracks", world.size()}};
}

json run_denoise(const mhr::PipelineConfig& cfg, const std::string& in_dir,
                 const std::string& out_dir) {
  (void)in_dir;
  std::vector<mhr::BodyTrack> tracks =
      mhr::load_tracks_jsonl((fs::path(out_dir) / kPlacedTracks).string());
  mhr::PointCloud cloud = mhr::load_cloud_ply((fs::path(out_dir) / kCloud).string());
  mhr::DenoiserWeights weights = cfg.denoiser.weights_path.empty()
                                     ? mhr::init_denoiser_weights(cfg.denoiser.net)
                                     : mhr::load_weights(cfg.denoiser.weights_path);
  std::vector<mhr::BodyTrack> out;
  for (const mhr::BodyTrack& track : tracks)
    out.push_back(mhr::denoise(mhr::interpolate_track(track), cloud, weights,
                               cfg.denoiser.net));
  mhr::save_tracks_jsonl((fs::path(out_dir) / kDenoisedTracks).string(), out);
  return json{{"stage", "denoise"},
              {"tracks", out.size()},
              {"weights", cfg.denoiser.weights_path.empty() ? std::string("identity-init")
                                                            : cfg.denoiser.weights_path}};
}

json run_eval(const mhr::PipelineConfig& cfg, const std::string& in_dir,
              const std::string& out_dir) {
  mhr::Trajectory gt_traj =
      mhr::load_trajectory_tum((fs::path(in_dir) / kGtTraj).string());
  mhr::Trajectory est_traj =
      mhr::load_trajectory_tum((fs::path(out_dir) / kEstTraj).string());
  mhr::AteOptions ate_opts;
  ate_opts.align = cfg.metrics.ate_align;
  ate_opts.with_scale = cfg.metrics.ate_with_scale;

  mhr::MetricsReport report;
  report.ate_mm = mhr::ate(est_traj.poses(), gt_traj.poses(), ate_opts);

  const int frames = int(gt_traj.size());
  mhr::BodyTemplate tmpl = mhr::load_template((fs::path(in_dir) / kTemplate).string());
  std::vector<mhr::BodyTrack> gt =
      mhr::load_tracks_jsonl((fs::path(in_dir) / kGtTracks).string(), frames);
  std::string pred_file = (fs::path(out_dir) / kDenoisedTracks).string();
  if (!fs::exists(pred_file)) pred_file = (fs::path(out_dir) / kPlacedTracks).string();
  std::vector<mhr::BodyTrack> pred = mhr::load_tracks_jsonl(pred_file, frames);
  if (pred.size() != gt.size()) throw mhr::InputError("eval: track count mismatch");

  const bool ws = cfg.metrics.mpjpe_with_scale;
  double pa = 0, wa = 0, fa = 0, acc = 0;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (pred[k].track_id != gt[k].track_id)
      throw mhr::InputError("eval: track ids disagree");
    mhr::JointSequence jp = mhr::track_joints(tmpl, mhr::interpolate_track(pred[k]));
    mhr::JointSequence jg = mhr::track_joints(tmpl, gt[k]);
    pa += mhr::pa_mpjpe(jp, jg, nullptr, ws);
    wa += mhr::wa_mpjpe(jp, jg, nullptr, ws);
    fa += mhr::fa_mpjpe(jp, jg, nullptr, ws);
    acc += mhr::accel_error(jp, jg);
  }
  report.pa_mpjpe_mm = pa / double(gt.size());
  report.wa_mpjpe_mm = wa / double(gt.size());
  report.fa_mpjpe_mm = fa / double(gt.size());
  report.accel_mm_f2 = acc / double(gt.size());

  mhr::CalibrationResult calib = load_calibration(out_dir, in_dir);
  const int depth_frames = count_frames(in_dir, kTrueDepthDir, ".raw");
  mhr::DepthMap first = mhr::load_depth_raw(frame_file(in_dir, kTrueDepthDir, 0, ".raw"));
  const int h = first.height(), w = first.width();
  mhr::MatX gt_stack(h * depth_frames, w), pred_stack(h * depth_frames, w);
  for (int t = 0; t < depth_frames; ++t) {
    mhr::DepthMap gt_d = mhr::load_depth_raw(frame_file(in_dir, kTrueDepthDir, t, ".raw"));
    mhr::DepthMap pr = mhr::apply_calibration(
        mhr::load_depth_raw(frame_file(in_dir, kPriorDepthDir, t, ".raw")), calib.s, calib.o);
    gt_stack.middleRows(long(t) * h, h) = gt_d.values();
    pred_stack.middleRows(long(t) * h, h) = pr.values();
  }
  mhr::DepthMetrics dm =
      mhr::depth_metrics(mhr::DepthMap(pred_stack), mhr::DepthMap(gt_stack));
  report.delta1 = dm.delta1;
  report.delta2 = dm.delta2;
  report.delta3 = dm.delta3;
  report.rel = dm.rel;
  report.rmse_m = dm.rmse;

  fs::create_directories(out_dir);
  mhr::save_metrics_json((fs::path(out_dir) / kMetricsFile).string(), report);
  return json{{"stage", "eval"},          {"pa_mpjpe_mm", report.pa_mpjpe_mm},
              {"wa_mpjpe_mm", report.wa_mpjpe_mm}, {"fa_mpjpe_mm", report.fa_mpjpe_mm},
              {"accel_mm_f2", report.accel_mm_f2}, {"ate_mm", report.ate_mm},
              {"delta1", report.delta1},           {"rel", report.rel},
              {"rmse_m", report.rmse_m}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"human-prior metric SLAM and body-track denoising, desk scale"};
  app.require_subcommand(1);

  std::string config_path, in_dir, out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false, no_align = false;

  auto add_common = [&](CLI::App* cmd, bool needs_in) {
    cmd->add_option("--config", config_path, "pipeline config JSON");
    cmd->add_option("--seed", seed, "override the config seed");
    cmd->add_option("--out-dir", out_dir, "output directory")->required();
    if (needs_in) cmd->add_option("--in-dir", in_dir, "scenario directory")->required();
  };

  CLI::App* c_synth = app.add_subcommand("synth", "generate a synthetic scenario");
  add_common(c_synth, false);
  CLI::App* c_cal = app.add_subcommand("calibrate", "fit depth scale and offset to the bodies");
  add_common(c_cal, true);
  CLI::App* c_slam = app.add_subcommand("slam", "masked RGB-D bundle adjustment");
  add_common(c_slam, true);
  CLI::App* c_place = app.add_subcommand("place", "transport detections into the world frame");
  add_common(c_place, true);
  CLI::App* c_den = app.add_subcommand("denoise", "denoise world tracks against the scene");
  add_common(c_den, true);
  CLI::App* c_eval = app.add_subcommand("eval", "score estimates against ground truth");
  add_common(c_eval, true);
  c_eval->add_flag("--no-align", no_align, "skip trajectory alignment in ATE");
  CLI::App* c_pipe = app.add_subcommand("pipeline", "run every stage into one directory");
  add_common(c_pipe, false);
  c_pipe->add_flag("--no-align", no_align, "skip trajectory alignment in ATE");

  CLI11_PARSE(app, argc, argv);
  for (const CLI::App* sub : app.get_subcommands())
    if (sub->count("--seed") > 0) seed_set = true;

  try {
    mhr::PipelineConfig cfg;
    if (!config_path.empty()) cfg = mhr::load_config(config_path);
    if (seed_set) cfg.seed = seed;
    cfg.synth.anchors_per_frame = cfg.ba.anchors_per_frame;
    if (no_align) cfg.metrics.ate_align = false;
    cfg.validate();

    json summary;
    if (*c_synth) summary = run_synth(cfg, out_dir);
    if (*c_cal) summary = run_calibrate(cfg, in_dir, out_dir);
    if (*c_slam) summary = run_slam(cfg, in_dir, out_dir);
    if (*c_place) summary = run_place(cfg, in_dir, out_dir);
    if (*c_den) summary = run_denoise(cfg, in_dir, out_dir);
    if (*c_eval) summary = run_eval(cfg, in_dir, out_dir);
    if (*c_pipe) {
      json stages = json::array();
      stages.push_back(run_synth(cfg, out_dir));
      stages.push_back(run_calibrate(cfg, out_dir, out_dir));
      stages.push_back(run_slam(cfg, out_dir, out_dir));
      stages.push_back(run_place(cfg, out_dir, out_dir));
      if (cfg.denoiser.enabled) stages.push_back(run_denoise(cfg, out_dir, out_dir));
      stages.push_back(run_eval(cfg, out_dir, out_dir));
      summary = json{{"stage", "pipeline"}, {"stages", std::move(stages)}};
    }
    std::cout << summary.dump(2) << std::endl;
    return 0;
  } catch (const mhr::NumericError& e) {
    if (!out_dir.empty()) {
      std::error_code ec;
      fs::create_directories(out_dir, ec);
      std::ofstream diag((fs::path(out_dir) / kDiagnostics).string(), std::ios::binary);
      diag << json{{"error", e.what()}}.dump(2) << '\n';
    }
    std::cerr << "numerical failure: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "input error: " << e.what() << std::endl;
    return 1;
  }
}
