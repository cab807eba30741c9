#pragma once

#include <cstdint>
#include <string>

#include "mhr/denoiser.hpp"
#include "mhr/metrics.hpp"
#include "mhr/synth.hpp"

namespace mhr {

struct BAConfig {
  double depth_weight = 1.0;
  int max_iterations = 50;
  int anchors_per_frame = 64;
  double epipolar_tau_px = 2.0;
};

struct MetricOptionsConfig {
  bool ate_align = true;
  bool ate_with_scale = false;
  bool mpjpe_with_scale = true;
};

struct DenoiseStageConfig {
  bool enabled = false;
  std::string weights_path;  // empty: identity-initialized weights
  DenoiserConfig net;
};

/// Every tunable of the pipeline, one JSON file. Unknown keys anywhere in
/// the document are errors; so is any focal policy other than the supported
/// one (fx = fy = (W+H)/2).
struct PipelineConfig {
  std::uint64_t seed = 42;
  std::string focal_policy = "(W+H)/2";
  CalibrationOptions calibration;
  BAConfig ba;
  MetricOptionsConfig metrics;
  DenoiseStageConfig denoiser;
  SynthConfig synth;

  void validate() const;
};

PipelineConfig load_config(const std::string& path);
void save_config(const std::string& path, const PipelineConfig& config);

}  // namespace mhr
