#include "mhr/denoiser.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace mhr {

void DenoiserConfig::validate() const {
  if (latent_dim <= 0 || attention_heads <= 0 || latent_dim % attention_heads != 0)
    throw InputError("denoiser config: latent_dim must be a positive multiple of heads");
  if (decoder_layers <= 0 || feedforward_dim <= 0 || scene_tokens <= 0 || joints <= 0)
    throw InputError("denoiser config: dimensions must be positive");
  if (max_window < 2 || infer_window < 2 || train_window_lo < 2 ||
      train_window_hi < train_window_lo)
    throw InputError("denoiser config: windows must be at least 2 and ordered");
  if (scene_tokens > max_window)
    throw InputError("denoiser config: scene tokens exceed the TPE capacity");
}

void DenoiserWeights::add(const std::string& name, MatX value) {
  if (tensors_.count(name)) throw InputError("duplicate tensor name " + name);
  order_.push_back(name);
  tensors_.emplace(name, std::move(value));
}

MatX& DenoiserWeights::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw InputError("unknown tensor " + name);
  return it->second;
}

const MatX& DenoiserWeights::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw InputError("unknown tensor " + name);
  return it->second;
}

namespace {

MatX randn(SplitMix64& rng, int rows, int cols, double scale) {
  MatX m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  return m;
}

MatX tiled_identity_quat(int count) {
  MatX m = MatX::Zero(1, 4 * count);
  for (int j = 0; j < count; ++j) m(0, 4 * j) = 1.0;
  return m;
}

constexpr double kInitScale = 0.02;

}  // namespace

DenoiserWeights init_denoiser_weights(const DenoiserConfig& config) {
  config.validate();
  SplitMix64 rng(config.seed);
  const int d = config.latent_dim;
  const int f = config.flat_dim();
  const int j = config.joints;

  DenoiserWeights w;
  w.add("fc_in.w", randn(rng, f, d, kInitScale));
  w.add("fc_in.b", MatX::Zero(1, d));
  w.add("tpe", randn(rng, config.max_window, d, kInitScale));
  w.add("scene.fc1.w", randn(rng, PointCloud::kChannels, d, kInitScale));
  w.add("scene.fc1.b", MatX::Zero(1, d));
  w.add("scene.fc2.w", randn(rng, d, d, kInitScale));
  w.add("scene.fc2.b", MatX::Zero(1, d));
  w.add("scene.null", randn(rng, 1, d, kInitScale));
  for (int l = 0; l < config.decoder_layers; ++l) {
    std::string p = "dec" + std::to_string(l) + ".";
    w.add(p + "ln1.g", MatX::Ones(1, d));
    w.add(p + "ln1.b", MatX::Zero(1, d));
    for (const char* name : {"self.wq", "self.wk", "self.wv", "self.wo"})
      w.add(p + name, randn(rng, d, d, kInitScale));
    for (const char* name : {"self.bq", "self.bk", "self.bv", "self.bo"})
      w.add(p + name, MatX::Zero(1, d));
    w.add(p + "ln2.g", MatX::Ones(1, d));
    w.add(p + "ln2.b", MatX::Zero(1, d));
    for (const char* name : {"cross.wq", "cross.wk", "cross.wv", "cross.wo"})
      w.add(p + name, randn(rng, d, d, kInitScale));
    for (const char* name : {"cross.bq", "cross.bk", "cross.bv", "cross.bo"})
      w.add(p + name, MatX::Zero(1, d));
    w.add(p + "ln3.g", MatX::Ones(1, d));
    w.add(p + "ln3.b", MatX::Zero(1, d));
    w.add(p + "ff1.w", randn(rng, d, config.feedforward_dim, kInitScale));
    w.add(p + "ff1.b", MatX::Zero(1, config.feedforward_dim));
    w.add(p + "ff2.w", randn(rng, config.feedforward_dim, d, kInitScale));
    w.add(p + "ff2.b", MatX::Zero(1, d));
  }
  // Residual heads at identity: zero weights, rotation biases (1,0,0,0).
  w.add("head.phi.w", MatX::Zero(d, 4));
  w.add("head.phi.b", tiled_identity_quat(1));
  w.add("head.theta.w", MatX::Zero(d, 4 * j));
  w.add("head.theta.b", tiled_identity_quat(j));
  w.add("head.beta.w", MatX::Zero(d, 10));
  w.add("head.beta.b", MatX::Zero(1, 10));
  w.add("head.gamma.w", MatX::Zero(d, 3));
  w.add("head.gamma.b", MatX::Zero(1, 3));
  w.add("disc.joint.w", randn(rng, 4, j, kInitScale));
  w.add("disc.joint.b", MatX::Zero(1, j));
  w.add("disc.pose.w", randn(rng, 4 * j, 1, kInitScale));
  w.add("disc.pose.b", MatX::Zero(1, 1));
  w.add("disc.shape.w", randn(rng, 10, 1, kInitScale));
  w.add("disc.shape.b", MatX::Zero(1, 1));
  return w;
}

MatX flatten_track(const BodyTrack& track, const DenoiserConfig& config) {
  if (!track.fully_observed()) throw InputError("flatten_track: track has missing frames");
  const int t_count = track.length();
  const int j = config.joints;
  MatX flat(t_count, config.flat_dim());
  for (int t = 0; t < t_count; ++t) {
    const BodyParams& p = *track.slots[std::size_t(t)];
    if (int(p.theta.size()) != j) throw InputError("flatten_track: joint count mismatch");
    flat(t, 0) = p.phi.w;
    flat(t, 1) = p.phi.x;
    flat(t, 2) = p.phi.y;
    flat(t, 3) = p.phi.z;
    for (int k = 0; k < j; ++k) {
      const Quat& q = p.theta[std::size_t(k)];
      flat(t, 4 + 4 * k) = q.w;
      flat(t, 5 + 4 * k) = q.x;
      flat(t, 6 + 4 * k) = q.y;
      flat(t, 7 + 4 * k) = q.z;
    }
    flat.block(t, 4 + 4 * j, 1, 10) = p.beta.transpose();
    flat.block(t, 14 + 4 * j, 1, 3) = p.gamma.transpose();
  }
  return flat;
}

BodyTrack unflatten_track(const MatX& flat, const DenoiserConfig& config, int track_id,
                          FrameTag frame) {
  if (flat.cols() != config.flat_dim()) throw InputError("unflatten_track: column count mismatch");
  const int j = config.joints;
  BodyTrack track;
  track.track_id = track_id;
  track.frame = frame;
  track.slots.resize(std::size_t(flat.rows()));
  for (int t = 0; t < flat.rows(); ++t) {
    BodyParams p;
    p.phi = Quat(flat(t, 0), flat(t, 1), flat(t, 2), flat(t, 3));
    p.theta.resize(std::size_t(j));
    for (int k = 0; k < j; ++k)
      p.theta[std::size_t(k)] =
          Quat(flat(t, 4 + 4 * k), flat(t, 5 + 4 * k), flat(t, 6 + 4 * k), flat(t, 7 + 4 * k));
    p.beta = flat.block(t, 4 + 4 * j, 1, 10).transpose();
    p.gamma = flat.block(t, 14 + 4 * j, 1, 3).transpose();
    track.slots[std::size_t(t)] = std::move(p);
  }
  return track;
}

namespace {

using ad::Var;

struct VarMap {
  std::map<std::string, Var> vars;

  const Var& operator()(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw InputError("denoiser forward: missing tensor " + name);
    return it->second;
  }
};

VarMap lift_weights(const DenoiserWeights& w, bool trainable) {
  VarMap vm;
  w.visit([&](const std::string& name, const MatX& t) {
    vm.vars.emplace(name, trainable ? ad::param(t) : ad::constant(t));
  });
  return vm;
}

Var linear(const VarMap& w, const Var& x, const std::string& stem) {
  return ad::add_rowvec(ad::matmul(x, w(stem + ".w")), w(stem + ".b"));
}

Var layer_norm(const VarMap& w, const Var& x, const std::string& stem) {
  return ad::add_rowvec(ad::mul_rowvec(ad::layernorm_rows(x), w(stem + ".g")), w(stem + ".b"));
}

Var embed_t(const VarMap& w, const Var& flat, const DenoiserConfig& config) {
  const long t_count = flat.rows();
  if (t_count > config.max_window)
    throw InputError("embed: window exceeds the TPE capacity");
  Var z = ad::add_rowvec(ad::matmul(flat, w("fc_in.w")), w("fc_in.b"));
  return ad::add(z, ad::slice_rows(w("tpe"), 0, t_count));
}

// Three near-equal factors of k, largest first.
std::array<int, 3> factor3(int k) {
  std::array<int, 3> best{k, 1, 1};
  int best_spread = k - 1;
  for (int a = 1; a * a * a <= k; ++a) {
    if (k % a) continue;
    int rest = k / a;
    for (int b = a; b * b <= rest; ++b) {
      if (rest % b) continue;
      int c = rest / b;
      if (c - a < best_spread) {
        best_spread = c - a;
        best = {c, b, a};
      }
    }
  }
  return best;
}

// Deterministic voxel grouping: the grid splits the cloud's bounding box,
// with the most cells along the widest axis.
std::vector<int> scene_groups(const PointCloud& cloud, int k) {
  std::array<int, 3> factors = factor3(k);
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const CloudPoint& p : cloud) {
    lo = lo.cwiseMin(p.xyz);
    hi = hi.cwiseMax(p.xyz);
  }
  std::array<int, 3> axis_order{0, 1, 2};
  std::sort(axis_order.begin(), axis_order.end(), [&](int a, int b) {
    double ea = hi[a] - lo[a], eb = hi[b] - lo[b];
    return ea != eb ? ea > eb : a < b;
  });
  std::array<int, 3> cells{1, 1, 1};
  for (int i = 0; i < 3; ++i) cells[std::size_t(axis_order[std::size_t(i)])] = factors[std::size_t(i)];

  std::vector<int> group;
  group.reserve(cloud.size());
  for (const CloudPoint& p : cloud) {
    int idx[3];
    for (int a = 0; a < 3; ++a) {
      double span = hi[a] - lo[a];
      double norm = span > 0.0 ? (p.xyz[a] - lo[a]) / span : 0.0;
      idx[a] = std::min(int(norm * cells[std::size_t(a)]), cells[std::size_t(a)] - 1);
    }
    group.push_back((idx[0] * cells[1] + idx[1]) * cells[2] + idx[2]);
  }
  return group;
}

Var encode_scene_t(const VarMap& w, const PointCloud& cloud, const DenoiserConfig& config) {
  const int k = config.scene_tokens;
  if (cloud.empty()) {
    // No conditioning signal: every token is the learned null token.
    return ad::matmul(ad::constant(MatX::Ones(k, 1)), w("scene.null"));
  }
  MatX feat(long(cloud.size()), PointCloud::kChannels);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    feat(long(i), 0) = cloud[i].xyz.x();
    feat(long(i), 1) = cloud[i].xyz.y();
    feat(long(i), 2) = cloud[i].xyz.z();
    feat(long(i), 3) = cloud[i].rgb.x();
    feat(long(i), 4) = cloud[i].rgb.y();
    feat(long(i), 5) = cloud[i].rgb.z();
    feat(long(i), 6) = cloud[i].human;
  }
  std::vector<int> group = scene_groups(cloud, k);
  Var h = ad::gelu(linear(w, ad::constant(std::move(feat)), "scene.fc1"));
  Var pooled = ad::group_maxpool(linear(w, h, "scene.fc2"), group, k);

  MatX empty = MatX::Ones(k, 1);
  for (int g : group) empty(g, 0) = 0.0;
  // Empty cells hold a zero row from the pool; adding selector * null swaps
  // exactly those rows for the learned token.
  return ad::add(pooled, ad::matmul(ad::constant(std::move(empty)), w("scene.null")));
}

Var attention(const VarMap& w, const Var& queries_in, const Var& keys_in,
              const std::string& stem, const DenoiserConfig& config, DecodeStats* stats) {
  const int dh = config.latent_dim / config.attention_heads;
  Var q = ad::add_rowvec(ad::matmul(queries_in, w(stem + ".wq")), w(stem + ".bq"));
  Var key = ad::add_rowvec(ad::matmul(keys_in, w(stem + ".wk")), w(stem + ".bk"));
  Var val = ad::add_rowvec(ad::matmul(keys_in, w(stem + ".wv")), w(stem + ".bv"));
  std::vector<Var> heads;
  heads.reserve(std::size_t(config.attention_heads));
  for (int h = 0; h < config.attention_heads; ++h) {
    Var qh = ad::slice_cols(q, h * dh, dh);
    Var kh = ad::slice_cols(key, h * dh, dh);
    Var vh = ad::slice_cols(val, h * dh, dh);
    Var attn = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), 1.0 / std::sqrt(double(dh))));
    if (stats) {
      VecX sums = attn.value().rowwise().sum();
      stats->min_row_sum.push_back(sums.minCoeff());
      stats->max_row_sum.push_back(sums.maxCoeff());
    }
    heads.push_back(ad::matmul(attn, vh));
  }
  return ad::add_rowvec(ad::matmul(ad::concat_cols(heads), w(stem + ".wo")), w(stem + ".bo"));
}

Var decode_t(const VarMap& w, const Var& z0, const Var& scene_tokens_with_tpe,
             const DenoiserConfig& config, DecodeStats* stats) {
  Var z = z0;
  for (int l = 0; l < config.decoder_layers; ++l) {
    std::string p = "dec" + std::to_string(l) + ".";
    Var hn = layer_norm(w, z, p + "ln1");
    z = ad::add(z, attention(w, hn, hn, p + "self", config, stats));
    Var cn = layer_norm(w, z, p + "ln2");
    z = ad::add(z, attention(w, cn, scene_tokens_with_tpe, p + "cross", config, stats));
    Var fn = layer_norm(w, z, p + "ln3");
    Var ff = ad::add_rowvec(
        ad::matmul(ad::gelu(ad::add_rowvec(ad::matmul(fn, w(p + "ff1.w")), w(p + "ff1.b"))),
                   w(p + "ff2.w")),
        w(p + "ff2.b"));
    z = ad::add(z, ff);
  }
  return z;  // no final norm: zero heads keep the identity map exact
}

struct HeadOutputs {
  Var phi;    // T x 4
  Var theta;  // T x 4J
  Var beta;   // T x 10
  Var gamma;  // T x 3
};

HeadOutputs heads_t(const VarMap& w, const Var& z1, const Var& noisy_flat,
                    const DenoiserConfig& config) {
  const int j = config.joints;
  HeadOutputs out;
  Var raw_phi = linear(w, z1, "head.phi");
  out.phi = ad::quat_mul_rows(ad::normalize_rows(raw_phi), ad::slice_cols(noisy_flat, 0, 4));
  Var raw_theta = linear(w, z1, "head.theta");
  std::vector<Var> joints;
  joints.reserve(std::size_t(j));
  for (int k = 0; k < j; ++k) {
    Var res = ad::normalize_rows(ad::slice_cols(raw_theta, 4 * k, 4));
    joints.push_back(ad::quat_mul_rows(res, ad::slice_cols(noisy_flat, 4 + 4 * k, 4)));
  }
  out.theta = ad::concat_cols(joints);
  out.beta = ad::add(linear(w, z1, "head.beta"), ad::slice_cols(noisy_flat, 4 + 4 * j, 10));
  out.gamma = ad::add(linear(w, z1, "head.gamma"), ad::slice_cols(noisy_flat, 14 + 4 * j, 3));
  return out;
}

Var forward_flat(const VarMap& w, const MatX& noisy_flat, const PointCloud& cloud,
                 const DenoiserConfig& config, DecodeStats* stats, HeadOutputs* head_out) {
  Var noisy = ad::constant(noisy_flat);
  Var z0 = embed_t(w, noisy, config);
  Var tokens = encode_scene_t(w, cloud, config);
  Var tokens_pe = ad::add(tokens, ad::slice_rows(w("tpe"), 0, config.scene_tokens));
  Var z1 = decode_t(w, z0, tokens_pe, config, stats);
  HeadOutputs heads = heads_t(w, z1, noisy, config);
  if (head_out) *head_out = heads;
  return ad::concat_cols({heads.phi, heads.theta, heads.beta, heads.gamma});
}

}  // namespace

MatX embed(const MatX& flat, const DenoiserWeights& weights, const DenoiserConfig& config) {
  if (flat.cols() != config.flat_dim()) throw InputError("embed: column count mismatch");
  VarMap w = lift_weights(weights, false);
  return embed_t(w, ad::constant(flat), config).value();
}

MatX encode_scene(const PointCloud& cloud, const DenoiserWeights& weights,
                  const DenoiserConfig& config) {
  VarMap w = lift_weights(weights, false);
  return encode_scene_t(w, cloud, config).value();
}

MatX decode(const MatX& z0, const MatX& scene_tokens, const DenoiserWeights& weights,
            const DenoiserConfig& config, DecodeStats* stats) {
  if (z0.cols() != config.latent_dim || scene_tokens.cols() != config.latent_dim)
    throw InputError("decode: latent width mismatch");
  if (scene_tokens.rows() != config.scene_tokens)
    throw InputError("decode: scene token count mismatch");
  VarMap w = lift_weights(weights, false);
  Var tokens_pe =
      ad::add(ad::constant(scene_tokens), ad::slice_rows(w("tpe"), 0, config.scene_tokens));
  return decode_t(w, ad::constant(z0), tokens_pe, config, stats).value();
}

MatX apply_heads(const MatX& z1, const MatX& noisy_flat, const DenoiserWeights& weights,
                 const DenoiserConfig& config) {
  if (z1.rows() != noisy_flat.rows()) throw InputError("apply_heads: frame count mismatch");
  if (z1.cols() != config.latent_dim || noisy_flat.cols() != config.flat_dim())
    throw InputError("apply_heads: width mismatch");
  VarMap w = lift_weights(weights, false);
  HeadOutputs out = heads_t(w, ad::constant(z1), ad::constant(noisy_flat), config);
  return ad::concat_cols({out.phi, out.theta, out.beta, out.gamma}).value();
}

BodyTrack denoise(const BodyTrack& track, const PointCloud& cloud,
                  const DenoiserWeights& weights, const DenoiserConfig& config) {
  MatX noisy_flat = flatten_track(track, config);
  VarMap w = lift_weights(weights, false);
  MatX out = forward_flat(w, noisy_flat, cloud, config, nullptr, nullptr).value();
  return unflatten_track(out, config, track.track_id, track.frame);
}

double loss_rotation(const Quat& pred, const Quat& target) {
  return 1.0 - std::abs(pred.dot(target));
}

double loss_l1(const VecX& pred, const VecX& target) {
  if (pred.size() != target.size()) throw InputError("loss_l1: size mismatch");
  return (pred - target).cwiseAbs().sum();
}

std::pair<double, double> loss_motion(const MatX& pred_joints, const MatX& target_joints) {
  if (pred_joints.rows() != target_joints.rows() || pred_joints.cols() != target_joints.cols())
    throw InputError("loss_motion: shape mismatch");
  if (pred_joints.cols() % 3 != 0) throw InputError("loss_motion: columns must be xyz blocks");
  const long t_count = pred_joints.rows();
  if (t_count < 3) throw InputError("loss_motion: need at least 3 frames");
  const long joints = pred_joints.cols() / 3;
  double vel = 0.0, acc = 0.0;
  for (long j = 0; j < joints; ++j) {
    auto pj = pred_joints.middleCols(3 * j, 3);
    auto gj = target_joints.middleCols(3 * j, 3);
    for (long t = 0; t + 1 < t_count; ++t)
      vel += std::abs((pj.row(t + 1) - pj.row(t)).norm() - (gj.row(t + 1) - gj.row(t)).norm());
    for (long t = 1; t + 1 < t_count; ++t) {
      double pa = (pj.row(t + 1) - 2.0 * pj.row(t) + pj.row(t - 1)).norm();
      double ga = (gj.row(t + 1) - 2.0 * gj.row(t) + gj.row(t - 1)).norm();
      acc += std::abs(pa - ga);
    }
  }
  return {vel, acc};
}

namespace {

Var disc_factors_t(const VarMap& w, const Var& theta_flat, const Var& beta, int joints) {
  std::vector<Var> parts;
  parts.reserve(std::size_t(joints) + 2);
  for (int j = 0; j < joints; ++j) {
    Var tj = ad::slice_cols(theta_flat, 4 * j, 4);
    Var wj = ad::slice_cols(w("disc.joint.w"), j, 1);
    Var bj = ad::slice_cols(w("disc.joint.b"), j, 1);
    parts.push_back(ad::sigmoid(ad::add_rowvec(ad::matmul(tj, wj), bj)));
  }
  parts.push_back(ad::sigmoid(
      ad::add_rowvec(ad::matmul(theta_flat, w("disc.pose.w")), w("disc.pose.b"))));
  parts.push_back(ad::sigmoid(ad::add_rowvec(ad::matmul(beta, w("disc.shape.w")),
                                             w("disc.shape.b"))));
  return ad::concat_cols(parts);
}

// Mean over frames of sum over factors of (1 - C)^2.
Var generator_adversarial_t(const VarMap& w, const Var& theta_flat, const Var& beta,
                            int joints) {
  Var c = disc_factors_t(w, theta_flat, beta, joints);
  Var gap = ad::add_scalar(ad::scale(c, -1.0), 1.0);
  return ad::scale(ad::sum(ad::mul(gap, gap)), 1.0 / double(c.rows()));
}

// Constant matrices describing the body for the tape FK.
struct TapeBody {
  Var rest_row;  // 1 x 3M
  Var basis;     // 10 x 3M
  Var rj;        // 3M x 3J
  std::vector<int> parents;
  int joints = 0;
};

TapeBody make_tape_body(const BodyTemplate& tmpl) {
  const int m = tmpl.vertex_count();
  const int j = tmpl.joint_count();
  MatX rest(1, 3 * m);
  for (int v = 0; v < m; ++v)
    for (int c = 0; c < 3; ++c) rest(0, 3 * v + c) = tmpl.rest_vertices(v, c);
  MatX basis(BodyTemplate::kShapeCoeffs, 3 * m);
  for (int k = 0; k < BodyTemplate::kShapeCoeffs; ++k)
    for (int v = 0; v < m; ++v)
      for (int c = 0; c < 3; ++c) basis(k, 3 * v + c) = tmpl.shape_basis[std::size_t(k)](v, c);
  MatX rj = MatX::Zero(3 * m, 3 * j);
  for (int jj = 0; jj < j; ++jj)
    for (int v = 0; v < m; ++v) {
      double wgt = tmpl.joint_regressor(jj, v);
      if (wgt == 0.0) continue;
      for (int c = 0; c < 3; ++c) rj(3 * v + c, 3 * jj + c) = wgt;
    }
  TapeBody body;
  body.rest_row = ad::constant(std::move(rest));
  body.basis = ad::constant(std::move(basis));
  body.rj = ad::constant(std::move(rj));
  body.parents = tmpl.joint_parents;
  body.joints = j;
  return body;
}

// Posed joint locations (T x 3J) from quaternion parameters. Per joint the
// kinematic transform rotates about the shaped joint in the parent frame;
// the regressor is uniform over a vertex ring centered on each joint, which
// makes regressor-of-posed-vertices equal to the joint transform applied to
// the shaped joint. The global orientation then pivots about the pelvis.
Var fk_joints_t(const TapeBody& body, const Var& phi, const Var& theta, const Var& beta,
                const Var& gamma) {
  Var verts = ad::add_rowvec(ad::matmul(beta, body.basis), body.rest_row);
  Var jflat = ad::matmul(verts, body.rj);
  const int j = body.joints;
  std::vector<Var> jpos(static_cast<std::size_t>(j));
  std::vector<Var> qw(static_cast<std::size_t>(j));
  std::vector<Var> tw(static_cast<std::size_t>(j));
  for (int k = 0; k < j; ++k) jpos[std::size_t(k)] = ad::slice_cols(jflat, 3 * k, 3);
  for (int k = 0; k < j; ++k) {
    Var tk = ad::slice_cols(theta, 4 * k, 4);
    Var tl = ad::sub(jpos[std::size_t(k)], ad::quat_rotate_rows(tk, jpos[std::size_t(k)]));
    int parent = body.parents[std::size_t(k)];
    if (parent < 0) {
      qw[std::size_t(k)] = tk;
      tw[std::size_t(k)] = tl;
    } else {
      qw[std::size_t(k)] = ad::quat_mul_rows(qw[std::size_t(parent)], tk);
      tw[std::size_t(k)] =
          ad::add(ad::quat_rotate_rows(qw[std::size_t(parent)], tl), tw[std::size_t(parent)]);
    }
  }
  Var c = jpos[0];
  std::vector<Var> out;
  out.reserve(std::size_t(j));
  for (int k = 0; k < j; ++k) {
    Var posed =
        ad::add(ad::quat_rotate_rows(qw[std::size_t(k)], jpos[std::size_t(k)]), tw[std::size_t(k)]);
    out.push_back(ad::add(ad::add(ad::quat_rotate_rows(phi, ad::sub(posed, c)), c), gamma));
  }
  return ad::concat_cols(out);
}

// Sum over frames (and joints) of 1 - |<q, q*>| between T x 4 blocks.
Var rotation_loss_t(const Var& pred, const MatX& target, int blocks) {
  Var target_c = ad::constant(target);
  Var total;
  for (int b = 0; b < blocks; ++b) {
    Var dots = ad::row_sums(
        ad::mul(ad::slice_cols(pred, 4 * b, 4), ad::slice_cols(target_c, 4 * b, 4)));
    Var term = ad::sum(ad::add_scalar(ad::scale(ad::abs(dots), -1.0), 1.0));
    total = b == 0 ? term : ad::add(total, term);
  }
  return total;
}

Var l1_loss_t(const Var& pred, const MatX& target) {
  return ad::sum(ad::abs(ad::sub(pred, ad::constant(target))));
}

struct MotionLosses {
  Var velocity;
  Var acceleration;
};

MotionLosses motion_losses_t(const Var& pred_joints, const MatX& target_joints) {
  const long t_count = pred_joints.rows();
  if (t_count < 3) throw InputError("motion loss: need at least 3 frames");
  const long joints = pred_joints.cols() / 3;
  MotionLosses out;
  for (long j = 0; j < joints; ++j) {
    Var pj = ad::slice_cols(pred_joints, 3 * j, 3);
    Var vel = ad::sub(ad::slice_rows(pj, 1, t_count - 1), ad::slice_rows(pj, 0, t_count - 1));
    Var acc = ad::sub(ad::slice_rows(vel, 1, t_count - 2), ad::slice_rows(vel, 0, t_count - 2));

    auto gj = target_joints.middleCols(3 * j, 3);
    MatX gvel = gj.bottomRows(t_count - 1) - gj.topRows(t_count - 1);
    MatX gacc = gvel.bottomRows(t_count - 2) - gvel.topRows(t_count - 2);
    MatX gvel_speed = gvel.rowwise().norm();
    MatX gacc_speed = gacc.rowwise().norm();

    Var vterm =
        ad::sum(ad::abs(ad::sub(ad::row_norms(vel), ad::constant(std::move(gvel_speed)))));
    Var aterm =
        ad::sum(ad::abs(ad::sub(ad::row_norms(acc), ad::constant(std::move(gacc_speed)))));
    out.velocity = j == 0 ? vterm : ad::add(out.velocity, vterm);
    out.acceleration = j == 0 ? aterm : ad::add(out.acceleration, aterm);
  }
  return out;
}

struct TrainGraph {
  VarMap params;
  Var total;
  Var phi, theta, beta, gamma, adversarial, velocity, acceleration;
};

MatX target_joint_matrix(const BodyTrack& target, const BodyTemplate& tmpl) {
  const int t_count = target.length();
  const int j = tmpl.joint_count();
  MatX out(t_count, 3 * j);
  for (int t = 0; t < t_count; ++t) {
    MatX joints = posed_joints(tmpl, *target.slots[std::size_t(t)]);
    for (int k = 0; k < j; ++k)
      for (int c = 0; c < 3; ++c) out(t, 3 * k + c) = joints(k, c);
  }
  return out;
}

TrainGraph build_train_graph(const DenoiserTask& task, const DenoiserWeights& weights,
                             const DenoiserConfig& config, const BodyTemplate& tmpl,
                             const DenoiserLossWeights& lw, bool trainable) {
  if (task.noisy.length() != task.target.length())
    throw InputError("train: noisy and target tracks must have equal length");
  MatX noisy_flat = flatten_track(task.noisy, config);
  MatX target_flat = flatten_track(task.target, config);

  TrainGraph g;
  g.params = lift_weights(weights, trainable);
  HeadOutputs heads;
  forward_flat(g.params, noisy_flat, task.cloud, config, nullptr, &heads);

  g.phi = rotation_loss_t(heads.phi, target_flat.leftCols(4), 1);
  g.theta = rotation_loss_t(heads.theta, target_flat.middleCols(4, 4 * config.joints),
                            config.joints);
  g.beta = l1_loss_t(heads.beta, target_flat.middleCols(4 + 4 * config.joints, 10));
  g.gamma = l1_loss_t(heads.gamma, target_flat.middleCols(14 + 4 * config.joints, 3));
  g.adversarial = generator_adversarial_t(g.params, heads.theta, heads.beta, config.joints);

  TapeBody body = make_tape_body(tmpl);
  Var pred_joints = fk_joints_t(body, heads.phi, heads.theta, heads.beta, heads.gamma);
  MotionLosses motion = motion_losses_t(pred_joints, target_joint_matrix(task.target, tmpl));
  g.velocity = motion.velocity;
  g.acceleration = motion.acceleration;

  g.total = ad::add(
      ad::add(ad::add(ad::scale(g.phi, lw.phi), ad::scale(g.theta, lw.theta)),
              ad::add(ad::scale(g.beta, lw.beta), ad::scale(g.gamma, lw.gamma))),
      ad::add(ad::scale(g.adversarial, lw.adversarial),
              ad::add(ad::scale(g.velocity, lw.velocity),
                      ad::scale(g.acceleration, lw.acceleration))));
  return g;
}

TrainStepResult read_losses(const TrainGraph& g) {
  TrainStepResult r;
  r.total = g.total.value()(0, 0);
  r.phi = g.phi.value()(0, 0);
  r.theta = g.theta.value()(0, 0);
  r.beta = g.beta.value()(0, 0);
  r.gamma = g.gamma.value()(0, 0);
  r.adversarial = g.adversarial.value()(0, 0);
  r.velocity = g.velocity.value()(0, 0);
  r.acceleration = g.acceleration.value()(0, 0);
  return r;
}

}  // namespace

double loss_discriminator(const MatX& theta_flat, const MatX& beta,
                          const DenoiserWeights& weights, const DenoiserConfig& config) {
  VarMap w = lift_weights(weights, false);
  return generator_adversarial_t(w, ad::constant(theta_flat), ad::constant(beta), config.joints)
      .value()(0, 0);
}

TrainStepResult denoiser_loss(const DenoiserTask& task, const DenoiserWeights& weights,
                              const DenoiserConfig& config, const BodyTemplate& tmpl,
                              const DenoiserLossWeights& lw) {
  return read_losses(build_train_graph(task, weights, config, tmpl, lw, false));
}

TrainStepResult train_step(const DenoiserTask& task, DenoiserWeights& weights,
                           const DenoiserConfig& config, const BodyTemplate& tmpl, double lr,
                           const DenoiserLossWeights& lw) {
  TrainGraph g = build_train_graph(task, weights, config, tmpl, lw, true);
  TrainStepResult r = read_losses(g);
  if (!std::isfinite(r.total))
    throw NumericError("train_step: non-finite total loss " + std::to_string(r.total));
  ad::backward(g.total);
  weights.visit([&](const std::string& name, MatX& t) {
    if (name.rfind("disc.", 0) == 0) return;  // the generator step leaves the critic alone
    t -= lr * g.params(name).grad();
  });
  return r;
}

MatX denoiser_loss_grad(const DenoiserTask& task, const DenoiserWeights& weights,
                        const DenoiserConfig& config, const BodyTemplate& tmpl,
                        const std::string& tensor, const DenoiserLossWeights& lw) {
  TrainGraph g = build_train_graph(task, weights, config, tmpl, lw, true);
  ad::backward(g.total);
  return g.params(tensor).grad();
}

double train_discriminator(const MatX& real_theta, const MatX& real_beta,
                           const MatX& fake_theta, const MatX& fake_beta,
                           DenoiserWeights& weights, const DenoiserConfig& config, double lr) {
  VarMap w = lift_weights(weights, true);
  Var c_real = disc_factors_t(w, ad::constant(real_theta), ad::constant(real_beta), config.joints);
  Var c_fake = disc_factors_t(w, ad::constant(fake_theta), ad::constant(fake_beta), config.joints);
  Var real_gap = ad::add_scalar(ad::scale(c_real, -1.0), 1.0);
  Var loss = ad::add(ad::scale(ad::sum(ad::mul(real_gap, real_gap)), 1.0 / double(c_real.rows())),
                     ad::scale(ad::sum(ad::mul(c_fake, c_fake)), 1.0 / double(c_fake.rows())));
  double value = loss.value()(0, 0);
  if (!std::isfinite(value)) throw NumericError("train_discriminator: non-finite loss");
  ad::backward(loss);
  weights.visit([&](const std::string& name, MatX& t) {
    if (name.rfind("disc.", 0) != 0) return;
    t -= lr * w(name).grad();
  });
  return value;
}

void save_weights(const DenoiserWeights& weights, const std::string& path) {
  static_assert(std::endian::native == std::endian::little,
                "weight files are little-endian; big-endian hosts are unsupported");
  nlohmann::json dir = nlohmann::json::array();
  weights.visit([&](const std::string& name, const MatX& t) {
    dir.push_back({name, t.rows(), t.cols()});
  });
  std::string header = nlohmann::json{{"tensors", dir}}.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write weight file '" + path + "'");
  out.write("MHRWTS01", 8);
  std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(header.data(), std::streamsize(header.size()));
  weights.visit([&](const std::string&, const MatX& t) {
    for (long r = 0; r < t.rows(); ++r)
      for (long c = 0; c < t.cols(); ++c) {
        double v = t(r, c);
        out.write(reinterpret_cast<const char*>(&v), 8);
      }
  });
  if (!out) throw InputError("short write on weight file '" + path + "'");
}

DenoiserWeights load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open weight file '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "MHRWTS01", 8) != 0)
    throw InputError("weight file '" + path + "' has a bad magic header");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  if (!in || len > (1ull << 30)) throw InputError("weight file header length is implausible");
  std::string header(len, '\0');
  in.read(header.data(), std::streamsize(len));
  if (!in) throw InputError("truncated weight file header");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("weight header parse failure: ") + e.what());
  }
  DenoiserWeights w;
  for (const auto& entry : j.at("tensors")) {
    std::string name = entry.at(0).get<std::string>();
    long rows = entry.at(1).get<long>();
    long cols = entry.at(2).get<long>();
    if (rows < 0 || cols < 0 || rows * cols > (1ll << 28))
      throw InputError("weight tensor shape is implausible");
    MatX t(rows, cols);
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c) {
        double v;
        in.read(reinterpret_cast<char*>(&v), 8);
        if (!in) throw InputError("truncated weight payload in '" + path + "'");
        if (!std::isfinite(v)) throw InputError("non-finite weight in '" + path + "'");
        t(r, c) = v;
      }
    w.add(name, std::move(t));
  }
  return w;
}

}  // namespace mhr
