#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mhr/autodiff.hpp"
#include "mhr/body_model.hpp"
#include "mhr/world_frame.hpp"

namespace mhr {

struct DenoiserConfig {
  int latent_dim = 64;
  int decoder_layers = 6;
  int attention_heads = 4;
  int feedforward_dim = 128;
  int scene_tokens = 16;
  int joints = BodyTemplate::kJoints;
  int max_window = 128;       // TPE capacity
  int train_window_lo = 64;
  int train_window_hi = 128;
  int infer_window = 100;
  std::uint64_t seed = 1;

  // Per-frame parameter layout: phi quaternion, J theta quaternions, beta,
  // gamma. 105 for J = 22.
  int flat_dim() const { return 4 + 4 * joints + 10 + 3; }
  void validate() const;
};

/// Per-term weights of the training objective; all default to 1.
struct DenoiserLossWeights {
  double phi = 1.0;
  double theta = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  double adversarial = 1.0;
  double velocity = 1.0;
  double acceleration = 1.0;
};

/// Named dense tensors in a fixed order. Everything the network owns lives
/// here: input projection, TPE table, scene encoder, decoder layers, residual
/// heads, and the discriminator ("disc." prefix).
class DenoiserWeights {
 public:
  void add(const std::string& name, MatX value);
  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  MatX& at(const std::string& name);
  const MatX& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }

  template <typename Fn>
  void visit(Fn&& fn) {
    for (const std::string& n : order_) fn(n, tensors_.at(n));
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    for (const std::string& n : order_) fn(n, tensors_.at(n));
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, MatX> tensors_;
};

/// Fresh weights for the given config. Residual heads start at identity:
/// zero weight matrices, rotation biases (1,0,0,0), additive biases 0, so an
/// untrained denoiser reproduces its input exactly. Everything else is small
/// seeded Gaussian noise (layernorm gains 1).
DenoiserWeights init_denoiser_weights(const DenoiserConfig& config);

/// T x F matrix of per-frame parameters, in the flat_dim layout. The track
/// must be fully observed.
MatX flatten_track(const BodyTrack& track, const DenoiserConfig& config);

/// Inverse of flatten_track (no renormalization, exact round trip).
BodyTrack unflatten_track(const MatX& flat, const DenoiserConfig& config,
                          int track_id = 0, FrameTag frame = FrameTag::world);

/// z0 rows: FC(flat) + TPE row per frame. T must fit the TPE capacity.
MatX embed(const MatX& flat, const DenoiserWeights& weights, const DenoiserConfig& config);

/// Stand-in scene encoder: shared per-point feedforward, spatial grouping
/// into scene_tokens voxel cells, max-pool per cell. Empty cells (and an
/// empty cloud) yield the learned null token. Output is K x D, before TPE.
MatX encode_scene(const PointCloud& cloud, const DenoiserWeights& weights,
                  const DenoiserConfig& config);

/// Optional instrumentation for decode: extremes of the softmax row sums per
/// attention instance (they must all be 1 up to rounding).
struct DecodeStats {
  std::vector<double> min_row_sum;
  std::vector<double> max_row_sum;
};

/// Pre-norm transformer decoder: per layer, self-attention over time,
/// cross-attention to the scene tokens (TPE rows are added to the tokens
/// here), feedforward; residual connections throughout and no final norm.
MatX decode(const MatX& z0, const MatX& scene_tokens, const DenoiserWeights& weights,
            const DenoiserConfig& config, DecodeStats* stats = nullptr);

/// Residual heads on z1: quaternion heads are normalized and composed onto
/// the noisy rotations (left multiplication), beta/gamma heads add. Returns
/// the denoised flat parameters. Throws NumericError on a zero-norm raw
/// quaternion.
MatX apply_heads(const MatX& z1, const MatX& noisy_flat, const DenoiserWeights& weights,
                 const DenoiserConfig& config);

/// Full forward pipeline on a world track.
BodyTrack denoise(const BodyTrack& track, const PointCloud& cloud,
                  const DenoiserWeights& weights, const DenoiserConfig& config);

/// 1 - |<q, q*>|: zero iff the same rotation (double cover folded away).
double loss_rotation(const Quat& pred, const Quat& target);

/// Sum of absolute differences.
double loss_l1(const VecX& pred, const VecX& target);

/// First- and second-difference speed magnitude gaps, summed over joints and
/// steps. Joint sequences are T x 3J (xyz blocks per joint). T >= 3.
std::pair<double, double> loss_motion(const MatX& pred_joints, const MatX& target_joints);

/// Generator-side adversarial loss: mean over frames of the squared gap
/// between every discriminator factor and 1.
double loss_discriminator(const MatX& theta_flat, const MatX& beta,
                          const DenoiserWeights& weights, const DenoiserConfig& config);

/// One denoising training example: noisy world track, its ground truth, and
/// the conditioning scene.
struct DenoiserTask {
  BodyTrack noisy;
  BodyTrack target;
  PointCloud cloud;
};

struct TrainStepResult {
  double total = 0.0;
  double phi = 0.0, theta = 0.0, beta = 0.0, gamma = 0.0;
  double adversarial = 0.0, velocity = 0.0, acceleration = 0.0;
};

/// Total training loss at the current weights (no update); the exact
/// objective train_step descends.
TrainStepResult denoiser_loss(const DenoiserTask& task, const DenoiserWeights& weights,
                              const DenoiserConfig& config, const BodyTemplate& tmpl,
                              const DenoiserLossWeights& lw = {});

/// One SGD step on every non-discriminator tensor. Throws NumericError if
/// the loss is non-finite.
TrainStepResult train_step(const DenoiserTask& task, DenoiserWeights& weights,
                           const DenoiserConfig& config, const BodyTemplate& tmpl,
                           double lr, const DenoiserLossWeights& lw = {});

/// Gradient of the total training loss for one named tensor, by the same
/// tape backward train_step uses. For gradient verification.
MatX denoiser_loss_grad(const DenoiserTask& task, const DenoiserWeights& weights,
                        const DenoiserConfig& config, const BodyTemplate& tmpl,
                        const std::string& tensor, const DenoiserLossWeights& lw = {});

/// Least-squares discriminator update: real factors toward 1, fake toward 0.
/// Only "disc." tensors move. Returns the discriminator loss before the step.
double train_discriminator(const MatX& real_theta, const MatX& real_beta,
                           const MatX& fake_theta, const MatX& fake_beta,
                           DenoiserWeights& weights, const DenoiserConfig& config, double lr);

/// Binary weight file: magic, JSON tensor directory, then row-major 64-bit
/// little-endian payloads in directory order.
void save_weights(const DenoiserWeights& weights, const std::string& path);
DenoiserWeights load_weights(const std::string& path);

}  // namespace mhr
