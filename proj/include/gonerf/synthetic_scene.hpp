#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include "gonerf/geometry.hpp"
#include "gonerf/scene_cache.hpp"

// Analytic ray-cast scenes used as test fixtures and demo inputs.
namespace gonerf::synthetic {

struct Plane {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Vec3 albedo = Vec3::Constant(0.6);
  Vec3 albedo2 = Vec3::Constant(0.3);  // second checker color
  double checker_size = 0.0;           // 0 disables the checker texture
};

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  Vec3 albedo = Vec3::Constant(0.8);
};

struct Cuboid {
  OrientedBox3D box;
  Vec3 albedo = Vec3::Constant(0.7);
};

using Primitive = std::variant<Plane, Sphere, Cuboid>;

struct Lighting {
  Vec3 direction = Vec3(0.3, -0.4, 1.0).normalized();  // toward the light
  double ambient = 0.25;
  Vec3 background = Vec3(0.55, 0.7, 0.9);
};

struct SurfaceHit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal = Vec3::UnitZ();
  Vec3 albedo = Vec3::Zero();
  int primitive = -1;
};

namespace detail {

inline std::optional<SurfaceHit> hit(const Plane& p, const Ray& r) {
  const Vec3 n = p.normal.normalized();
  const double denom = n.dot(r.direction);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = n.dot(p.point - r.origin) / denom;
  if (!(t > 0.0)) return std::nullopt;
  SurfaceHit h;
  h.t = t;
  h.normal = denom < 0.0 ? n : Vec3(-n);
  h.albedo = p.albedo;
  if (p.checker_size > 0.0) {
    const Vec3 q = r.origin + t * r.direction - p.point;
    const Vec3 u = n.unitOrthogonal();
    const Vec3 v = n.cross(u);
    const long a = static_cast<long>(std::floor(q.dot(u) / p.checker_size));
    const long b = static_cast<long>(std::floor(q.dot(v) / p.checker_size));
    if ((a + b) & 1) h.albedo = p.albedo2;
  }
  return h;
}

inline std::optional<SurfaceHit> hit(const Sphere& s, const Ray& r) {
  const Vec3 oc = r.origin - s.center;
  const double b = oc.dot(r.direction);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (!(t > 0.0)) t = -b + sq;
  if (!(t > 0.0)) return std::nullopt;
  SurfaceHit h;
  h.t = t;
  h.normal = (r.origin + t * r.direction - s.center).normalized();
  h.albedo = s.albedo;
  return h;
}

inline std::optional<SurfaceHit> hit(const Cuboid& c, const Ray& r) {
  const RayBoxHit bh = intersect_ray_box(r, c.box);
  if (!bh.hit || bh.t_entry <= 0.0) return std::nullopt;
  SurfaceHit h;
  h.t = bh.t_entry;
  const Vec3 local = c.box.axes.transpose() * (r.origin + h.t * r.direction - c.box.center);
  const Vec3 rel = local.cwiseQuotient(c.box.half_extents);
  int axis = 0;
  rel.cwiseAbs().maxCoeff(&axis);
  Vec3 n = Vec3::Zero();
  n[axis] = rel[axis] > 0 ? 1.0 : -1.0;
  h.normal = c.box.axes * n;
  h.albedo = c.albedo;
  return h;
}

}  // namespace detail

// Closest hit among all primitives; primitive index recorded in the result.
inline SurfaceHit trace(const std::vector<Primitive>& prims, const Ray& r) {
  SurfaceHit best;
  for (std::size_t i = 0; i < prims.size(); ++i) {
    const auto h = std::visit([&](const auto& p) { return detail::hit(p, r); }, prims[i]);
    if (h && h->t < best.t) {
      best = *h;
      best.primitive = static_cast<int>(i);
    }
  }
  return best;
}

inline Vec3 shade(const SurfaceHit& h, const Lighting& light) {
  if (h.primitive < 0) return light.background;
  const double lambert = std::max(0.0, h.normal.dot(light.direction.normalized()));
  return (h.albedo * (light.ambient + (1.0 - light.ambient) * lambert)).cwiseMax(0.0).cwiseMin(1.0);
}

struct RenderedView {
  Image color;
  Image depth;
  std::vector<int> primitive;  // front-most primitive per pixel, -1 = miss
};

inline RenderedView render(const std::vector<Primitive>& prims, const CameraView& cam,
                           const Lighting& light = {}) {
  RenderedView out;
  out.color = Image(cam.width, cam.height, 3);
  out.depth = Image(cam.width, cam.height, 1);
  out.primitive.assign(static_cast<std::size_t>(cam.width) * cam.height, -1);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Ray r = pixel_center_ray(cam, x, y);
      const SurfaceHit h = trace(prims, r);
      const std::size_t i = static_cast<std::size_t>(y) * cam.width + x;
      out.color.set_rgb(i, shade(h, light));
      out.depth.data[i] = h.primitive < 0 ? std::numeric_limits<float>::infinity()
                                          : static_cast<float>(h.t * r.depth_per_t);
      out.primitive[i] = h.primitive;
    }
  }
  return out;
}

inline SceneCache make_synthetic_scene(const std::vector<Primitive>& prims,
                                       const std::vector<CameraView>& cameras,
                                       const Lighting& light = {}) {
  if (cameras.empty()) throw InvalidInput("make_synthetic_scene: empty camera list");
  SceneCache cache;
  cache.source_backend = "synthetic";
  cache.render_date = "1970-01-01";
  for (const auto& cam : cameras) {
    cam.validate();
    RenderedView rv = render(prims, cam, light);
    SceneViewRGBD v;
    v.view_id = cam.view_id;
    v.camera = cam;
    v.color = std::move(rv.color);
    v.depth = std::move(rv.depth);
    cache.views.push_back(std::move(v));
  }
  cache.validate();
  return cache;
}

// Cameras on a circle of `radius` at `height` looking at `target` (z-up world).
inline std::vector<CameraView> orbit_cameras(int count, double radius, double height, const Vec3& target,
                                             int width, int height_px, double focal,
                                             double start_angle = 0.0, double arc = 2.0 * M_PI) {
  std::vector<CameraView> cams;
  for (int i = 0; i < count; ++i) {
    const double a = start_angle + arc * i / count;
    const Vec3 eye = target + Vec3(radius * std::cos(a), radius * std::sin(a), height);
    cams.push_back(look_at(i, eye, target, Vec3::UnitZ(), width, height_px, focal));
  }
  return cams;
}

// The desk fixture: checkered ground plane z=0 with a sphere beside the
// generation region. Views orbit the origin.
struct DeskScene {
  std::vector<Primitive> primitives;
  std::vector<CameraView> cameras;
  Lighting lighting;
};

inline DeskScene desk_scene(int views = 4, int resolution = 64) {
  DeskScene s;
  Plane ground;
  ground.albedo = Vec3(0.62, 0.58, 0.5);
  ground.albedo2 = Vec3(0.42, 0.4, 0.36);
  ground.checker_size = 0.5;
  s.primitives.push_back(ground);
  s.primitives.push_back(Sphere{Vec3(1.3, 0.9, 0.45), 0.45, Vec3(0.3, 0.5, 0.75)});
  s.cameras = orbit_cameras(views, 3.2, 2.2, Vec3(0.0, 0.0, 0.3), resolution, resolution,
                            resolution * 0.95, -0.5 * M_PI, 2.0 * M_PI);
  return s;
}

}  // namespace gonerf::synthetic
