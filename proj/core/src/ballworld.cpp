#include "ocdd/ballworld.hpp"

#include <algorithm>
#include <cmath>

namespace ocdd::ballworld {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kWallHt = 0.04;

double wrap_2pi(double a) {
  double w = std::fmod(a, 2.0 * kPi);
  return w < 0 ? w + 2.0 * kPi : w;
}

ObjectSpec wall(double cx, double cy, double rot) {
  ObjectSpec o;
  o.shape = ObjShape::bar;
  o.size = 0.5 + 2.0 * kWallHt;  // covers the corners
  o.half_thickness = kWallHt;
  o.x = cx;
  o.y = cy;
  o.rot = rot;
  o.movable = false;
  o.color = "black";
  return o;
}

std::vector<ObjectSpec> boxing_walls() {
  // Inner surfaces exactly on the unit square.
  return {
      wall(0.5, -kWallHt, 0.0),       // floor
      wall(0.5, 1.0 + kWallHt, 0.0),  // ceiling
      wall(-kWallHt, 0.5, kPi / 2),   // left
      wall(1.0 + kWallHt, 0.5, kPi / 2),
  };
}

ObjectSpec fixed_bar(double cx, double cy, double hl, double rot) {
  ObjectSpec o;
  o.shape = ObjShape::bar;
  o.size = hl;
  o.half_thickness = 0.02;
  o.x = cx;
  o.y = cy;
  o.rot = rot;
  o.movable = false;
  o.color = "purple";
  return o;
}

uint64_t name_tag(const std::string& name) {
  uint64_t h = 1469598103934665603ULL;
  for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  return h;
}

double ball_mass(double r) { return kPi * r * r; }

}  // namespace

std::vector<std::string> template_names() {
  return {"three-balls", "ball-on-bar", "funnel", "drop-two"};
}

SceneTemplate make_template(const std::string& name) {
  SceneTemplate tpl;
  tpl.name = name;
  tpl.fixed_objects = boxing_walls();
  if (name == "three-balls") {
    tpl.ball_spawns = {
        {0.04, 0.08, 0.10, 0.90, 0.45, 0.90, "red"},
        {0.04, 0.08, 0.10, 0.90, 0.45, 0.90, "green"},
        {0.04, 0.08, 0.10, 0.90, 0.45, 0.90, "blue"},
    };
  } else if (name == "ball-on-bar") {
    tpl.fixed_objects.push_back(fixed_bar(0.5, 0.4, 0.22, -0.15));
    tpl.ball_spawns = {{0.04, 0.07, 0.35, 0.65, 0.60, 0.90, "green"}};
  } else if (name == "funnel") {
    tpl.fixed_objects.push_back(fixed_bar(0.28, 0.55, 0.20, -0.6));
    tpl.fixed_objects.push_back(fixed_bar(0.72, 0.55, 0.20, 0.6));
    tpl.ball_spawns = {
        {0.03, 0.05, 0.30, 0.70, 0.75, 0.95, "red"},
        {0.03, 0.05, 0.30, 0.70, 0.75, 0.95, "blue"},
    };
  } else if (name == "drop-two") {
    tpl.ball_spawns = {
        {0.05, 0.09, 0.20, 0.80, 0.50, 0.95, "green"},
        {0.05, 0.09, 0.20, 0.80, 0.50, 0.95, "gray"},
    };
  } else {
    throw_usage("unknown template: " + name);
  }
  return tpl;
}

double circle_circle_penetration(double x1, double y1, double r1, double x2, double y2,
                                 double r2) {
  double dx = x2 - x1, dy = y2 - y1;
  return r1 + r2 - std::sqrt(dx * dx + dy * dy);
}

double circle_bar_penetration(double cx, double cy, double r, const ObjectSpec& bar) {
  double c = std::cos(bar.rot), s = std::sin(bar.rot);
  double px = cx - bar.x, py = cy - bar.y;
  double lx = c * px + s * py;   // into bar frame
  double ly = -s * px + c * py;
  double hl = bar.size, ht = bar.half_thickness;
  double qx = std::clamp(lx, -hl, hl);
  double qy = std::clamp(ly, -ht, ht);
  double dx = lx - qx, dy = ly - qy;
  double dist2 = dx * dx + dy * dy;
  if (dist2 > 0) return r - std::sqrt(dist2);
  // center inside the bar
  double ex = hl - std::abs(lx), ey = ht - std::abs(ly);
  return r + std::min(ex, ey);
}

std::vector<ObjectSpec> sample_instance(const SceneTemplate& tpl, uint64_t seed) {
  Rng rng(derive_seed(seed, name_tag(tpl.name)));
  std::vector<ObjectSpec> placed;
  for (const auto& spawn : tpl.ball_spawns) {
    bool ok = false;
    for (int attempt = 0; attempt < 5000 && !ok; ++attempt) {
      ObjectSpec ball;
      ball.shape = ObjShape::ball;
      ball.size = rng.uniform(spawn.rmin, spawn.rmax);
      ball.x = rng.uniform(std::max(spawn.xmin, ball.size),
                           std::min(spawn.xmax, 1.0 - ball.size));
      ball.y = rng.uniform(std::max(spawn.ymin, ball.size),
                           std::min(spawn.ymax, 1.0 - ball.size));
      ball.movable = true;
      ball.color = spawn.color;
      bool overlap = false;
      for (const auto& other : placed)
        overlap = overlap || circle_circle_penetration(ball.x, ball.y, ball.size + 1e-3,
                                                       other.x, other.y, other.size) > 0;
      for (const auto& bar : tpl.fixed_objects)
        overlap = overlap || circle_bar_penetration(ball.x, ball.y, ball.size + 1e-3, bar) > 0;
      if (!overlap) {
        placed.push_back(ball);
        ok = true;
      }
    }
    if (!ok)
      throw_numeric("template " + tpl.name + ": could not place ball without overlap (seed " +
                    std::to_string(seed) + ")");
  }
  for (const auto& fo : tpl.fixed_objects) placed.push_back(fo);
  return placed;
}

World::World(std::vector<ObjectSpec> objects, PhysicsParams params)
    : params_(params) {
  bodies_.reserve(objects.size());
  for (auto& spec : objects) {
    if (spec.movable && spec.shape == ObjShape::bar)
      throw_config("movable bars are not supported");
    Body b;
    b.x = spec.x;
    b.y = spec.y;
    b.vx = 0;
    b.vy = 0;
    b.rot = spec.rot;
    b.inv_mass = spec.movable ? 1.0 / ball_mass(spec.size) : 0.0;
    b.spec = std::move(spec);
    bodies_.push_back(std::move(b));
  }
}

void World::step(double dt) {
  for (auto& b : bodies_) {
    if (b.inv_mass == 0.0) continue;
    b.vy -= params_.gravity * dt;
    b.x += b.vx * dt;
    b.y += b.vy * dt;
  }
  resolve_pairs();
}

void World::substep_frame() {
  double dt = params_.frame_dt / params_.substeps_per_frame;
  for (int i = 0; i < params_.substeps_per_frame; ++i) step(dt);
}

void World::resolve_pairs() {
  const int iterations = 4;
  size_t n = bodies_.size();
  for (int it = 0; it < iterations; ++it) {
    for (size_t i = 0; i < n; ++i) {
      Body& a = bodies_[i];
      if (a.spec.shape != ObjShape::ball) continue;
      for (size_t j = 0; j < n; ++j) {
        if (j <= i && bodies_[j].spec.shape == ObjShape::ball) continue;
        if (j == i) continue;
        Body& b = bodies_[j];
        double nx, ny, pen;
        if (b.spec.shape == ObjShape::ball) {
          double dx = b.x - a.x, dy = b.y - a.y;
          double dist = std::sqrt(dx * dx + dy * dy);
          pen = a.spec.size + b.spec.size - dist;
          if (pen <= 0) continue;
          if (dist < 1e-12) {
            nx = 1;
            ny = 0;
          } else {
            nx = dx / dist;
            ny = dy / dist;
          }
        } else {
          pen = circle_bar_penetration(a.x, a.y, a.spec.size, b.spec);
          if (pen <= 0) continue;
          // normal from the bar surface toward the ball center
          double c = std::cos(b.spec.rot), s = std::sin(b.spec.rot);
          double px = a.x - b.spec.x, py = a.y - b.spec.y;
          double lx = c * px + s * py, ly = -s * px + c * py;
          double qx = std::clamp(lx, -b.spec.size, b.spec.size);
          double qy = std::clamp(ly, -b.spec.half_thickness, b.spec.half_thickness);
          double dx = lx - qx, dy = ly - qy;
          double lnx, lny;
          double d2 = dx * dx + dy * dy;
          if (d2 > 0) {
            double d = std::sqrt(d2);
            lnx = dx / d;
            lny = dy / d;
          } else {
            double ex = b.spec.size - std::abs(lx);
            double ey = b.spec.half_thickness - std::abs(ly);
            if (ex < ey) {
              lnx = lx >= 0 ? 1.0 : -1.0;
              lny = 0;
            } else {
              lnx = 0;
              lny = ly >= 0 ? 1.0 : -1.0;
            }
          }
          // back to world frame; flip so it points from bar toward ball
          nx = -(c * lnx - s * lny);
          ny = -(s * lnx + c * lny);
        }
        // Here n points from a toward b; approach speed along n.
        double rvx = b.vx - a.vx, rvy = b.vy - a.vy;
        double vn = rvx * nx + rvy * ny;
        double inv_sum = a.inv_mass + b.inv_mass;
        if (inv_sum == 0) continue;
        if (vn < 0) {
          double e = std::abs(vn) < params_.rest_threshold ? 0.0 : params_.restitution;
          double jimp = -(1.0 + e) * vn / inv_sum;
          a.vx -= jimp * a.inv_mass * nx;
          a.vy -= jimp * a.inv_mass * ny;
          b.vx += jimp * b.inv_mass * nx;
          b.vy += jimp * b.inv_mass * ny;
          if (params_.friction > 0) {
            double tx = -ny, ty = nx;
            double vt = (b.vx - a.vx) * tx + (b.vy - a.vy) * ty;
            double jt = -vt / inv_sum;
            double max_jt = params_.friction * std::abs(jimp);
            jt = std::clamp(jt, -max_jt, max_jt);
            a.vx -= jt * a.inv_mass * tx;
            a.vy -= jt * a.inv_mass * ty;
            b.vx += jt * b.inv_mass * tx;
            b.vy += jt * b.inv_mass * ty;
          }
        }
        double push = std::max(pen - params_.slop, 0.0) * params_.correction / inv_sum;
        a.x -= push * a.inv_mass * nx;
        a.y -= push * a.inv_mass * ny;
        b.x += push * b.inv_mass * nx;
        b.y += push * b.inv_mass * ny;
      }
    }
  }
}

double World::mechanical_energy() const {
  double e = 0;
  for (const auto& b : bodies_) {
    if (b.inv_mass == 0) continue;
    double m = 1.0 / b.inv_mass;
    e += m * (0.5 * (b.vx * b.vx + b.vy * b.vy) + params_.gravity * b.y);
  }
  return e;
}

double World::max_penetration() const {
  double worst = 0;
  size_t n = bodies_.size();
  for (size_t i = 0; i < n; ++i) {
    const Body& a = bodies_[i];
    if (a.spec.shape != ObjShape::ball) continue;
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const Body& b = bodies_[j];
      if (b.spec.shape == ObjShape::ball) {
        if (j < i) continue;
        worst = std::max(worst, circle_circle_penetration(a.x, a.y, a.spec.size, b.x, b.y,
                                                          b.spec.size));
      } else {
        ObjectSpec bar = b.spec;
        bar.x = b.x;
        bar.y = b.y;
        bar.rot = b.rot;
        worst = std::max(worst, circle_bar_penetration(a.x, a.y, a.spec.size, bar));
      }
    }
  }
  return worst;
}

TrajectoryRecord simulate(const SceneTemplate& tpl, uint64_t seed) {
  auto instance = sample_instance(tpl, seed);
  World world(instance, tpl.physics);
  std::vector<std::vector<DisplayState>> frames;
  frames.reserve(tpl.length);
  for (int l = 0; l < tpl.length; ++l) {
    if (l > 0) world.substep_frame();
    std::vector<DisplayState> frame;
    frame.reserve(world.bodies().size());
    for (const auto& b : world.bodies()) frame.push_back({b.x, b.y, b.rot});
    frames.push_back(std::move(frame));
    double pen = world.max_penetration();
    if (pen > 5e-3)
      throw_numeric("simulate: unresolved interpenetration " + std::to_string(pen) +
                    " (template " + tpl.name + ", seed " + std::to_string(seed) + ")");
  }
  TrajectoryRecord rec;
  rec.X = encode_features(instance, frames);
  rec.template_name = tpl.name;
  rec.seed = seed;
  rec.objects = std::move(instance);
  return rec;
}

TrajectoryRecord augment_offset(const TrajectoryRecord& record, double dx, double dy) {
  bool has_static = false;
  for (const auto& o : record.objects) has_static = has_static || !o.movable;
  if (!has_static)
    throw_usage("augment_offset: record has no static bars; walls must travel with the scene");
  TrajectoryRecord out = record;
  int O = out.X.dim(0), L = out.X.dim(1);
  for (int o = 0; o < O; ++o)
    for (int l = 0; l < L; ++l) {
      out.X.at(o, l, 0) += static_cast<float>(dx);
      out.X.at(o, l, 1) += static_cast<float>(dy);
    }
  for (auto& obj : out.objects) {
    obj.x += dx;
    obj.y += dy;
  }
  out.offset_x += dx;
  out.offset_y += dy;
  return out;
}

nd::Tensor encode_features(const std::vector<ObjectSpec>& objects,
                           const std::vector<std::vector<DisplayState>>& frames) {
  int O = static_cast<int>(objects.size());
  int L = static_cast<int>(frames.size());
  nd::Tensor X = nd::Tensor::zeros({O, L, kFeatureDim});
  for (int o = 0; o < O; ++o) {
    const auto& spec = objects[o];
    double rot0 = frames.empty() ? spec.rot : frames[0][o].rot;
    double base = wrap_2pi(rot0);
    for (int l = 0; l < L; ++l) {
      const auto& st = frames[l][o];
      X.at(o, l, 0) = static_cast<float>(st.x);
      X.at(o, l, 1) = static_cast<float>(st.y);
      // unwrapped rotation keeps the feature continuous across turns
      X.at(o, l, 2) = static_cast<float>((base + st.rot - rot0) / (2.0 * kPi));
      X.at(o, l, 3) = spec.movable ? 1.0f : 0.0f;
      X.at(o, l, 4) = static_cast<float>(spec.size);
      X.at(o, l, 5) = spec.shape == ObjShape::ball ? 1.0f : 0.0f;
      X.at(o, l, 6) = spec.shape == ObjShape::bar ? 1.0f : 0.0f;
      X.at(o, l, 7) = 0.0f;
    }
  }
  return X;
}

std::vector<std::vector<DisplayState>> decode_features(const nd::Tensor& X) {
  if (X.rank() != 3 || X.dim(2) != kFeatureDim)
    throw_format("decode_features: expected [O,L," + std::to_string(kFeatureDim) + "]");
  int O = X.dim(0), L = X.dim(1);
  std::vector<std::vector<DisplayState>> frames(L);
  for (int l = 0; l < L; ++l) {
    frames[l].resize(O);
    for (int o = 0; o < O; ++o)
      frames[l][o] = {static_cast<double>(X.at(o, l, 0)), static_cast<double>(X.at(o, l, 1)),
                      static_cast<double>(X.at(o, l, 2)) * 2.0 * kPi};
  }
  return frames;
}

std::vector<ObjectSpec> objects_from_features(const nd::Tensor& X,
                                               const std::vector<std::string>& colors) {
  if (X.rank() != 3 || X.dim(2) != kFeatureDim)
    throw_format("objects_from_features: expected [O,L," + std::to_string(kFeatureDim) + "]");
  int O = X.dim(0);
  std::vector<ObjectSpec> out(O);
  for (int o = 0; o < O; ++o) {
    ObjectSpec& spec = out[o];
    spec.movable = X.at(o, 0, 3) != 0.0f;
    spec.size = X.at(o, 0, 4);
    spec.shape = X.at(o, 0, 5) >= X.at(o, 0, 6) ? ObjShape::ball : ObjShape::bar;
    spec.half_thickness = spec.shape == ObjShape::bar ? 0.02 : 0.0;
    spec.x = X.at(o, 0, 0);
    spec.y = X.at(o, 0, 1);
    spec.rot = static_cast<double>(X.at(o, 0, 2)) * 2.0 * kPi;
    if (o < static_cast<int>(colors.size()) && !colors[o].empty())
      spec.color = colors[o];
    else
      spec.color = spec.movable ? "gray" : "black";
  }
  return out;
}

std::vector<bool> movable_flags(const std::vector<ObjectSpec>& objects) {
  std::vector<bool> flags(objects.size());
  for (size_t i = 0; i < objects.size(); ++i) flags[i] = objects[i].movable;
  return flags;
}

}  // namespace ocdd::ballworld
