#pragma once

#include <array>
#include <string>
#include <vector>

#include "mhr/geometry.hpp"

namespace mhr {

enum class FrameTag { camera, world };

std::string frame_tag_name(FrameTag tag);
FrameTag frame_tag_from_name(const std::string& name);

/// Simplified parametric body: J joints in a rooted tree, M vertices rigidly
/// bound to one joint each, a linear shape basis, and a joint regressor whose
/// rows average a fixed vertex ring so joints track the shaped surface.
struct BodyTemplate {
  static constexpr int kJoints = 22;
  static constexpr int kShapeCoeffs = 10;

  MatX rest_vertices;                 // M x 3
  std::vector<MatX> shape_basis;      // kShapeCoeffs entries, each M x 3
  std::vector<int> joint_parents;     // size J, root (pelvis) at 0 with parent -1
  MatX joint_regressor;               // J x M, rows sum to 1
  std::vector<int> vertex_part;       // size M, owning joint per vertex
  std::vector<std::array<int, 3>> faces;

  int vertex_count() const { return int(rest_vertices.rows()); }
  int joint_count() const { return int(joint_regressor.rows()); }
  void validate() const;  // throws InputError on structural violations
};

struct BodyParams {
  Quat phi;                  // global orientation, applied about the pelvis
  std::vector<Quat> theta;   // local joint rotations, size J
  VecX beta;                 // 10 shape coefficients
  Vec3 gamma;                // root translation, meters

  static BodyParams identity(int joints = BodyTemplate::kJoints);
};

struct BodyMesh {
  MatX vertices;  // M x 3
  FrameTag frame = FrameTag::camera;
};

struct ShapedBody {
  MatX vertices;  // M x 3
  MatX joints;    // J x 3
};

ShapedBody shape_blend(const BodyTemplate& tmpl, const VecX& beta);

/// Pelvis location c(beta): row 0 of the shaped joints.
Vec3 pelvis(const BodyTemplate& tmpl, const VecX& beta);

/// Forward kinematics, rigid per-part skinning, then the global orientation
/// about the pelvis: V = phi (V_posed - c) + c + gamma.
BodyMesh pose_mesh(const BodyTemplate& tmpl, const BodyParams& params,
                   FrameTag frame = FrameTag::camera);

/// regressor * pose_mesh(...).vertices, the joint locations of the posed body.
MatX posed_joints(const BodyTemplate& tmpl, const BodyParams& params);

/// Procedural 220-vertex body, deterministic (fixed internal seed). The same
/// asset ships as data/body_template.json; a test pins the two together.
BodyTemplate make_default_template();

std::string template_to_json(const BodyTemplate& tmpl);
BodyTemplate template_from_json(const std::string& text);
BodyTemplate load_template(const std::string& path);
void save_template(const BodyTemplate& tmpl, const std::string& path);

}  // namespace mhr
