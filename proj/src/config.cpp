#include "mhr/config.hpp"

#include <fstream>
#include <initializer_list>

#include "json.hpp"

namespace mhr {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  if (!j.is_object()) throw InputError("config: " + where + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed) known = known || item.key() == k;
    if (!known) throw InputError("config: unknown key '" + item.key() + "' in " + where);
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void PipelineConfig::validate() const {
  if (focal_policy != "(W+H)/2")
    throw InputError("config: unsupported focal policy '" + focal_policy + "'");
  if (calibration.lambda < 0.0) throw InputError("config: negative calibration lambda");
  if (calibration.max_iterations < 1 || ba.max_iterations < 1)
    throw InputError("config: iteration counts must be positive");
  if (ba.depth_weight < 0.0) throw InputError("config: negative depth weight");
  if (ba.anchors_per_frame < 1) throw InputError("config: need at least one anchor");
  if (ba.epipolar_tau_px <= 0.0) throw InputError("config: epipolar threshold must be positive");
  denoiser.net.validate();
  synth.validate();
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("config parse failure in " + path + ": " + e.what());
  }

  PipelineConfig c;
  try {
    reject_unknown(j, {"seed", "focal_policy", "calibration", "ba", "metrics", "denoiser",
                       "synth"},
                   "the top level");
    get_if(j, "seed", c.seed);
    get_if(j, "focal_policy", c.focal_policy);

    if (j.contains("calibration")) {
      const json& s = j["calibration"];
      reject_unknown(s, {"lambda", "max_iterations", "splat_radius"}, "calibration");
      get_if(s, "lambda", c.calibration.lambda);
      get_if(s, "max_iterations", c.calibration.max_iterations);
      get_if(s, "splat_radius", c.calibration.splat_radius);
    }
    if (j.contains("ba")) {
      const json& s = j["ba"];
      reject_unknown(s, {"depth_weight", "max_iterations", "anchors_per_frame",
                         "epipolar_tau_px"},
                     "ba");
      get_if(s, "depth_weight", c.ba.depth_weight);
      get_if(s, "max_iterations", c.ba.max_iterations);
      get_if(s, "anchors_per_frame", c.ba.anchors_per_frame);
      get_if(s, "epipolar_tau_px", c.ba.epipolar_tau_px);
    }
    if (j.contains("metrics")) {
      const json& s = j["metrics"];
      reject_unknown(s, {"ate_align", "ate_with_scale", "mpjpe_with_scale"}, "metrics");
      get_if(s, "ate_align", c.metrics.ate_align);
      get_if(s, "ate_with_scale", c.metrics.ate_with_scale);
      get_if(s, "mpjpe_with_scale", c.metrics.mpjpe_with_scale);
    }
    if (j.contains("denoiser")) {
      const json& s = j["denoiser"];
      reject_unknown(s,
                     {"enabled", "weights_path", "latent_dim", "decoder_layers",
                      "attention_heads", "feedforward_dim", "scene_tokens", "max_window",
                      "train_window_lo", "train_window_hi", "infer_window"},
                     "denoiser");
      get_if(s, "enabled", c.denoiser.enabled);
      get_if(s, "weights_path", c.denoiser.weights_path);
      get_if(s, "latent_dim", c.denoiser.net.latent_dim);
      get_if(s, "decoder_layers", c.denoiser.net.decoder_layers);
      get_if(s, "attention_heads", c.denoiser.net.attention_heads);
      get_if(s, "feedforward_dim", c.denoiser.net.feedforward_dim);
      get_if(s, "scene_tokens", c.denoiser.net.scene_tokens);
      get_if(s, "max_window", c.denoiser.net.max_window);
      get_if(s, "train_window_lo", c.denoiser.net.train_window_lo);
      get_if(s, "train_window_hi", c.denoiser.net.train_window_hi);
      get_if(s, "infer_window", c.denoiser.net.infer_window);
    }
    if (j.contains("synth")) {
      const json& s = j["synth"];
      reject_unknown(s,
                     {"frames", "width", "height", "bodies", "ground_points", "clutter_points",
                      "pair_span", "splat_radius", "sigma_px", "corruption", "depth_noise",
                      "scale_true", "offset_true", "walk_speed"},
                     "synth");
      get_if(s, "frames", c.synth.frames);
      get_if(s, "width", c.synth.width);
      get_if(s, "height", c.synth.height);
      get_if(s, "bodies", c.synth.bodies);
      get_if(s, "ground_points", c.synth.ground_points);
      get_if(s, "clutter_points", c.synth.clutter_points);
      get_if(s, "pair_span", c.synth.pair_span);
      get_if(s, "splat_radius", c.synth.splat_radius);
      get_if(s, "sigma_px", c.synth.sigma_px);
      get_if(s, "corruption", c.synth.corruption);
      get_if(s, "depth_noise", c.synth.depth_noise);
      get_if(s, "scale_true", c.synth.scale_true);
      get_if(s, "offset_true", c.synth.offset_true);
      get_if(s, "walk_speed", c.synth.walk_speed);
    }
  } catch (const json::exception& e) {
    throw InputError("config type error in " + path + ": " + e.what());
  }
  c.synth.anchors_per_frame = c.ba.anchors_per_frame;
  c.validate();
  return c;
}

void save_config(const std::string& path, const PipelineConfig& c) {
  json j{
      {"seed", c.seed},
      {"focal_policy", c.focal_policy},
      {"calibration",
       {{"lambda", c.calibration.lambda},
        {"max_iterations", c.calibration.max_iterations},
        {"splat_radius", c.calibration.splat_radius}}},
      {"ba",
       {{"depth_weight", c.ba.depth_weight},
        {"max_iterations", c.ba.max_iterations},
        {"anchors_per_frame", c.ba.anchors_per_frame},
        {"epipolar_tau_px", c.ba.epipolar_tau_px}}},
      {"metrics",
       {{"ate_align", c.metrics.ate_align},
        {"ate_with_scale", c.metrics.ate_with_scale},
        {"mpjpe_with_scale", c.metrics.mpjpe_with_scale}}},
      {"denoiser",
       {{"enabled", c.denoiser.enabled},
        {"weights_path", c.denoiser.weights_path},
        {"latent_dim", c.denoiser.net.latent_dim},
        {"decoder_layers", c.denoiser.net.decoder_layers},
        {"attention_heads", c.denoiser.net.attention_heads},
        {"feedforward_dim", c.denoiser.net.feedforward_dim},
        {"scene_tokens", c.denoiser.net.scene_tokens},
        {"max_window", c.denoiser.net.max_window},
        {"train_window_lo", c.denoiser.net.train_window_lo},
        {"train_window_hi", c.denoiser.net.train_window_hi},
        {"infer_window", c.denoiser.net.infer_window}}},
      {"synth",
       {{"frames", c.synth.frames},
        {"width", c.synth.width},
        {"height", c.synth.height},
        {"bodies", c.synth.bodies},
        {"ground_points", c.synth.ground_points},
        {"clutter_points", c.synth.clutter_points},
        {"pair_span", c.synth.pair_span},
        {"splat_radius", c.synth.splat_radius},
        {"sigma_px", c.synth.sigma_px},
        {"corruption", c.synth.corruption},
        {"depth_noise", c.synth.depth_noise},
        {"scale_true", c.synth.scale_true},
        {"offset_true", c.synth.offset_true},
        {"walk_speed", c.synth.walk_speed}}},
  };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write config '" + path + "'");
  out << j.dump(2) << '\n';
  out.flush();
  if (!out) throw InputError("short write on config '" + path + "'");
}

}  // namespace mhr
