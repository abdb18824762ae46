#pragma once

#include <array>
#include <string>
#include <vector>

#include "ocdd/tensor.hpp"

namespace ocdd::ballworld {

enum class ObjShape { ball, bar };

/// Feature layout, width 8:
///   [x, y, rot_norm, movable, size, shape_ball, shape_bar, reserved]
/// Changeable features are 0..2. rot_norm is the unwrapped angle / 2pi,
/// offset so the first frame lands in [0, 1).
inline constexpr int kFeatureDim = 8;
inline constexpr int kChangeable = 3;
inline constexpr int kLayoutVersion = 1;

struct ObjectSpec {
  ObjShape shape = ObjShape::ball;
  double size = 0.05;           // ball radius or bar half-length (scene units)
  double half_thickness = 0.0;  // bars only
  double x = 0.5;
  double y = 0.5;
  double rot = 0.0;             // radians
  bool movable = true;
  std::string color = "gray";   // display/restoration only
};

struct PhysicsParams {
  double gravity = 9.8;          // scene units / s^2
  double restitution = 0.6;
  double friction = 0.2;         // Coulomb-style tangential damping
  double rest_threshold = 0.05;  // approach speed below which impacts are inelastic
  double slop = 2e-4;            // tolerated overlap before positional correction
  double correction = 0.8;
  int substeps_per_frame = 256;
  double frame_dt = 2.5 / 64.0;
};

/// Range a movable ball is sampled from when instantiating a template task.
struct BallSpawn {
  double rmin = 0.04, rmax = 0.08;
  double xmin = 0.1, xmax = 0.9;
  double ymin = 0.5, ymax = 0.9;
  std::string color = "gray";
};

struct SceneTemplate {
  std::string name;
  std::vector<ObjectSpec> fixed_objects;  // static bars, including boxing walls
  std::vector<BallSpawn> ball_spawns;
  int length = 64;
  PhysicsParams physics;
};

/// Known templates: three-balls, ball-on-bar, funnel, drop-two.
SceneTemplate make_template(const std::string& name);
std::vector<std::string> template_names();

/// Concrete task instance: movable balls (in spawn order) followed by the
/// template's fixed objects. Rejection-sampled so no pair starts
/// interpenetrated. Deterministic per (template, seed).
std::vector<ObjectSpec> sample_instance(const SceneTemplate& tpl, uint64_t seed);

// Overlap helpers (positive = interpenetration depth).
double circle_circle_penetration(double x1, double y1, double r1, double x2, double y2,
                                 double r2);
double circle_bar_penetration(double cx, double cy, double r, const ObjectSpec& bar);

/// Impulse-based rigid-body world: balls move under gravity, bars are static.
class World {
 public:
  struct Body {
    ObjectSpec spec;
    double x, y, vx, vy, rot;
    double inv_mass;  // 0 for static
  };

  World(std::vector<ObjectSpec> objects, PhysicsParams params);

  void step(double dt);
  void substep_frame();  // physics.substeps_per_frame steps of frame_dt/substeps

  const std::vector<Body>& bodies() const { return bodies_; }
  const PhysicsParams& physics() const { return params_; }

  double mechanical_energy() const;
  double max_penetration() const;

 private:
  void resolve_pairs();
  std::vector<Body> bodies_;
  PhysicsParams params_;
};

struct TrajectoryRecord {
  nd::Tensor X;  // [O, L, kFeatureDim]
  std::string template_name;
  uint64_t seed = 0;
  double offset_x = 0.0;
  double offset_y = 0.0;
  std::vector<ObjectSpec> objects;  // specs at frame 0
};

/// Roll out a template task. Deterministic per (template, seed). Throws a
/// numeric error if contacts stay unresolved beyond tolerance.
TrajectoryRecord simulate(const SceneTemplate& tpl, uint64_t seed);

/// Rigid scene shift: all positions (walls included) move by (dx, dy);
/// rotations, sizes and flags unchanged; offset recorded in metadata.
TrajectoryRecord augment_offset(const TrajectoryRecord& record, double dx, double dy);

// ---- feature encoding -----------------------------------------------------

struct DisplayState {
  double x, y, rot;
};

/// frames[l][o] = (x, y, rot) in scene units / radians.
nd::Tensor encode_features(const std::vector<ObjectSpec>& objects,
                           const std::vector<std::vector<DisplayState>>& frames);

/// Inverse of encode on the changeable features; color is reattached by the
/// caller from the object specs.
std::vector<std::vector<DisplayState>> decode_features(const nd::Tensor& X);

/// Reconstruct static object properties from the feature tensor (positions
/// taken from frame 0). Colors default per shape unless provided.
std::vector<ObjectSpec> objects_from_features(const nd::Tensor& X,
                                               const std::vector<std::string>& colors = {});

std::vector<bool> movable_flags(const std::vector<ObjectSpec>& objects);

}  // namespace ocdd::ballworld
