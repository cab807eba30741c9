#include "mhr/body_model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mhr {

std::string frame_tag_name(FrameTag tag) {
  return tag == FrameTag::camera ? "camera" : "world";
}

FrameTag frame_tag_from_name(const std::string& name) {
  if (name == "camera") return FrameTag::camera;
  if (name == "world") return FrameTag::world;
  throw InputError("unknown frame tag '" + name + "'");
}

void BodyTemplate::validate() const {
  const int m = vertex_count();
  const int j = joint_count();
  if (j != kJoints) throw InputError("template joint count must be " + std::to_string(kJoints));
  if (int(joint_parents.size()) != j) throw InputError("joint_parents size mismatch");
  if (int(vertex_part.size()) != m) throw InputError("vertex_part size mismatch");
  if (int(shape_basis.size()) != kShapeCoeffs) throw InputError("shape basis must have 10 components");
  for (const MatX& b : shape_basis)
    if (b.rows() != m || b.cols() != 3) throw InputError("shape basis component shape mismatch");
  if (joint_regressor.cols() != m) throw InputError("joint_regressor column count mismatch");

  if (joint_parents[0] != -1) throw InputError("joint 0 must be the root");
  for (int k = 1; k < j; ++k) {
    if (joint_parents[std::size_t(k)] < 0 || joint_parents[std::size_t(k)] >= k)
      throw InputError("joint_parents must be topologically ordered (parent < child)");
  }
  for (int k = 0; k < j; ++k) {
    double row_sum = joint_regressor.row(k).sum();
    if (std::abs(row_sum - 1.0) > 1e-9) throw InputError("joint_regressor row does not sum to 1");
    if ((joint_regressor.row(k).array() < 0.0).any())
      throw InputError("joint_regressor has negative weights");
  }
  for (int v = 0; v < m; ++v)
    if (vertex_part[std::size_t(v)] < 0 || vertex_part[std::size_t(v)] >= j)
      throw InputError("vertex_part out of range");
  for (const auto& f : faces)
    for (int idx : f)
      if (idx < 0 || idx >= m) throw InputError("face index out of range");
}

BodyParams BodyParams::identity(int joints) {
  BodyParams p;
  p.phi = Quat::identity();
  p.theta.assign(std::size_t(joints), Quat::identity());
  p.beta = VecX::Zero(BodyTemplate::kShapeCoeffs);
  p.gamma = Vec3::Zero();
  return p;
}

ShapedBody shape_blend(const BodyTemplate& tmpl, const VecX& beta) {
  if (beta.size() != BodyTemplate::kShapeCoeffs) throw InputError("beta must have 10 entries");
  ShapedBody out;
  out.vertices = tmpl.rest_vertices;
  for (int k = 0; k < BodyTemplate::kShapeCoeffs; ++k)
    out.vertices += beta[k] * tmpl.shape_basis[std::size_t(k)];
  out.joints = tmpl.joint_regressor * out.vertices;
  return out;
}

Vec3 pelvis(const BodyTemplate& tmpl, const VecX& beta) {
  return shape_blend(tmpl, beta).joints.row(0).transpose();
}

BodyMesh pose_mesh(const BodyTemplate& tmpl, const BodyParams& params, FrameTag frame) {
  const int j = tmpl.joint_count();
  const int m = tmpl.vertex_count();
  if (int(params.theta.size()) != j) throw InputError("theta size must match joint count");

  ShapedBody shaped = shape_blend(tmpl, params.beta);

  // FK: each joint rotates about its shaped location, in the parent's frame.
  std::vector<Mat3> rot(static_cast<std::size_t>(j));
  std::vector<Vec3> trans(static_cast<std::size_t>(j));
  for (int k = 0; k < j; ++k) {
    Mat3 rl = params.theta[std::size_t(k)].to_matrix();
    Vec3 jk = shaped.joints.row(k).transpose();
    Vec3 tl = jk - rl * jk;
    int parent = tmpl.joint_parents[std::size_t(k)];
    if (parent < 0) {
      rot[std::size_t(k)] = rl;
      trans[std::size_t(k)] = tl;
    } else {
      rot[std::size_t(k)] = rot[std::size_t(parent)] * rl;
      trans[std::size_t(k)] = rot[std::size_t(parent)] * tl + trans[std::size_t(parent)];
    }
  }

  Mat3 phi = params.phi.to_matrix();
  Vec3 c = shaped.joints.row(0).transpose();

  BodyMesh mesh;
  mesh.frame = frame;
  mesh.vertices.resize(m, 3);
  for (int v = 0; v < m; ++v) {
    std::size_t part = std::size_t(tmpl.vertex_part[std::size_t(v)]);
    Vec3 posed = rot[part] * shaped.vertices.row(v).transpose() + trans[part];
    mesh.vertices.row(v) = (phi * (posed - c) + c + params.gamma).transpose();
  }
  return mesh;
}

MatX posed_joints(const BodyTemplate& tmpl, const BodyParams& params) {
  return tmpl.joint_regressor * pose_mesh(tmpl, params).vertices;
}

namespace {

struct JointSpec {
  const char* name;
  int parent;
  double x, y, z;
};

// Rest skeleton, meters, y-up, roughly human proportioned.
constexpr JointSpec kSkeleton[BodyTemplate::kJoints] = {
    {"pelvis", -1, 0.00, 0.95, 0.00},   {"spine1", 0, 0.00, 1.05, 0.00},
    {"spine2", 1, 0.00, 1.15, 0.00},    {"chest", 2, 0.00, 1.30, 0.00},
    {"neck", 3, 0.00, 1.45, 0.00},      {"head", 4, 0.00, 1.60, 0.00},
    {"hip_l", 0, 0.10, 0.90, 0.00},     {"knee_l", 6, 0.12, 0.50, 0.00},
    {"ankle_l", 7, 0.13, 0.10, 0.00},   {"foot_l", 8, 0.13, 0.03, 0.12},
    {"hip_r", 0, -0.10, 0.90, 0.00},    {"knee_r", 10, -0.12, 0.50, 0.00},
    {"ankle_r", 11, -0.13, 0.10, 0.00}, {"foot_r", 12, -0.13, 0.03, 0.12},
    {"shoulder_l", 3, 0.20, 1.40, 0.00}, {"elbow_l", 14, 0.42, 1.28, 0.00},
    {"wrist_l", 15, 0.55, 1.12, 0.00},  {"hand_l", 16, 0.60, 1.04, 0.00},
    {"shoulder_r", 3, -0.20, 1.40, 0.00}, {"elbow_r", 18, -0.42, 1.28, 0.00},
    {"wrist_r", 19, -0.55, 1.12, 0.00}, {"hand_r", 20, -0.60, 1.04, 0.00},
};

// Orthonormal pair spanning the plane perpendicular to dir.
void perp_frame(const Vec3& dir, Vec3& u, Vec3& w) {
  Vec3 ref = std::abs(dir.y()) < 0.9 ? Vec3(0, 1, 0) : Vec3(1, 0, 0);
  u = dir.cross(ref).normalized();
  w = dir.cross(u).normalized();
}

}  // namespace

BodyTemplate make_default_template() {
  constexpr int J = BodyTemplate::kJoints;
  constexpr int kRing = 5;
  constexpr int kPerPart = 2 * kRing;
  constexpr int M = J * kPerPart;  // 220

  BodyTemplate tmpl;
  tmpl.joint_parents.resize(J);
  tmpl.rest_vertices.resize(M, 3);
  tmpl.vertex_part.resize(M);
  tmpl.joint_regressor = MatX::Zero(J, M);

  std::vector<Vec3> joints(J);
  for (int j = 0; j < J; ++j) {
    tmpl.joint_parents[std::size_t(j)] = kSkeleton[j].parent;
    joints[std::size_t(j)] = Vec3(kSkeleton[j].x, kSkeleton[j].y, kSkeleton[j].z);
  }

  for (int j = 0; j < J; ++j) {
    int parent = kSkeleton[j].parent;
    Vec3 bone = parent < 0 ? Vec3(0, 0.12, 0)
                           : Vec3(joints[std::size_t(parent)] - joints[std::size_t(j)]);
    if (bone.norm() < 1e-9) bone = Vec3(0, 0.12, 0);
    Vec3 dir = bone.normalized();
    Vec3 u, w;
    perp_frame(dir, u, w);

    int base = j * kPerPart;
    for (int k = 0; k < kRing; ++k) {
      double ang = 2.0 * M_PI * k / kRing;
      // Ring 0 circles the joint itself; its mean is the joint, which is what
      // the regressor row relies on.
      Vec3 v0 = joints[std::size_t(j)] + 0.04 * (std::cos(ang) * u + std::sin(ang) * w);
      // Ring 1 sits halfway up the bone, slightly wider: the capsule belly.
      Vec3 v1 = joints[std::size_t(j)] + 0.5 * bone +
                0.05 * (std::cos(ang) * u + std::sin(ang) * w);
      tmpl.rest_vertices.row(base + k) = v0.transpose();
      tmpl.rest_vertices.row(base + kRing + k) = v1.transpose();
      tmpl.vertex_part[std::size_t(base + k)] = j;
      tmpl.vertex_part[std::size_t(base + kRing + k)] = j;
      tmpl.joint_regressor(j, base + k) = 1.0 / kRing;
    }

    // Pentagon fan plus a ring0-ring1 strip per part.
    for (int k = 1; k + 1 < kRing; ++k)
      tmpl.faces.push_back({base, base + k, base + k + 1});
    for (int k = 0; k < kRing; ++k) {
      int a = base + k, b = base + (k + 1) % kRing;
      int c = base + kRing + k, d = base + kRing + (k + 1) % kRing;
      tmpl.faces.push_back({a, c, d});
      tmpl.faces.push_back({a, d, b});
    }
  }

  // Shape basis: component 0 scales the body about the rest pelvis; the rest
  // are smooth low-frequency displacement fields from a fixed seed.
  Vec3 pelvis_rest = joints[0];
  tmpl.shape_basis.resize(BodyTemplate::kShapeCoeffs);
  tmpl.shape_basis[0] =
      0.1 * (tmpl.rest_vertices.rowwise() - pelvis_rest.transpose());
  SplitMix64 rng(0xB0D15EEDULL);
  for (int k = 1; k < BodyTemplate::kShapeCoeffs; ++k) {
    MatX field(M, 3);
    for (int d = 0; d < 3; ++d) {
      Vec3 omega(rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0));
      double phase = rng.uniform(0.0, 2.0 * M_PI);
      for (int v = 0; v < M; ++v) {
        double arg = omega.dot(tmpl.rest_vertices.row(v).transpose()) + phase;
        field(v, d) = 0.02 * std::sin(arg);
      }
    }
    tmpl.shape_basis[std::size_t(k)] = field;
  }

  tmpl.validate();
  return tmpl;
}

namespace {

nlohmann::json matrix_to_json(const MatX& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatX matrix_from_json(const nlohmann::json& rows, int cols) {
  MatX m(int(rows.size()), cols);
  for (int r = 0; r < m.rows(); ++r) {
    const auto& row = rows.at(std::size_t(r));
    if (int(row.size()) != cols) throw InputError("template matrix row width mismatch");
    for (int c = 0; c < cols; ++c) m(r, c) = row.at(std::size_t(c)).get<double>();
  }
  return m;
}

}  // namespace

std::string template_to_json(const BodyTemplate& tmpl) {
  nlohmann::json j;
  j["joints"] = tmpl.joint_count();
  j["vertices"] = tmpl.vertex_count();
  j["joint_parents"] = tmpl.joint_parents;
  j["vertex_part"] = tmpl.vertex_part;
  j["rest_vertices"] = matrix_to_json(tmpl.rest_vertices);
  nlohmann::json basis = nlohmann::json::array();
  for (const MatX& b : tmpl.shape_basis) basis.push_back(matrix_to_json(b));
  j["shape_basis"] = std::move(basis);
  nlohmann::json reg = nlohmann::json::array();
  for (int r = 0; r < tmpl.joint_regressor.rows(); ++r)
    for (int c = 0; c < tmpl.joint_regressor.cols(); ++c)
      if (tmpl.joint_regressor(r, c) != 0.0)
        reg.push_back({r, c, tmpl.joint_regressor(r, c)});
  j["joint_regressor"] = std::move(reg);
  nlohmann::json faces = nlohmann::json::array();
  for (const auto& f : tmpl.faces) faces.push_back({f[0], f[1], f[2]});
  j["faces"] = std::move(faces);
  return j.dump(1);
}

BodyTemplate template_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("template JSON parse failure: ") + e.what());
  }
  try {
    BodyTemplate tmpl;
    int n_joints = j.at("joints").get<int>();
    int n_verts = j.at("vertices").get<int>();
    tmpl.joint_parents = j.at("joint_parents").get<std::vector<int>>();
    tmpl.vertex_part = j.at("vertex_part").get<std::vector<int>>();
    tmpl.rest_vertices = matrix_from_json(j.at("rest_vertices"), 3);
    for (const auto& b : j.at("shape_basis")) tmpl.shape_basis.push_back(matrix_from_json(b, 3));
    tmpl.joint_regressor = MatX::Zero(n_joints, n_verts);
    for (const auto& triple : j.at("joint_regressor"))
      tmpl.joint_regressor(triple.at(0).get<int>(), triple.at(1).get<int>()) =
          triple.at(2).get<double>();
    for (const auto& f : j.at("faces"))
      tmpl.faces.push_back({f.at(0).get<int>(), f.at(1).get<int>(), f.at(2).get<int>()});
    tmpl.validate();
    return tmpl;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("template JSON field failure: ") + e.what());
  }
}

BodyTemplate load_template(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open template file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return template_from_json(ss.str());
}

void save_template(const BodyTemplate& tmpl, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write template file '" + path + "'");
  out << template_to_json(tmpl);
}

}  // namespace mhr
