#pragma once

#include <map>
#include <utility>

#include "gonerf/compositor.hpp"
#include "gonerf/geometry.hpp"
#include "gonerf/scene_cache.hpp"

namespace gonerf {

// Target composites for the oracle provider: a Lambert-shaded cuboid resting
// on the bottom face of the placement box, occluded against cached depth.
struct BoxTargetSpec {
  double fill = 0.6;  // object half-extents as a fraction of the box's
  Vec3 albedo = Vec3(0.85, 0.25, 0.2);
  Vec3 light_direction = Vec3(0.3, -0.4, 1.0).normalized();
  double ambient = 0.25;
};

inline OrientedBox3D target_object_box(const OrientedBox3D& box, double fill) {
  OrientedBox3D obj = box;
  obj.half_extents = box.half_extents * fill;
  obj.center = box.center - box.axes.col(2) * (box.half_extents.z() * (1.0 - fill));
  return obj;
}

class BoxTargets {
 public:
  BoxTargets(const SceneCache& cache, const OrientedBox3D& box, const BoxTargetSpec& spec = {})
      : object_(target_object_box(box, spec.fill)) {
    for (const auto& v : cache.views) {
      const CameraView& cam = v.camera;
      Image scene = v.color;
      Image white(cam.width, cam.height, 3, 1.0f), black(cam.width, cam.height, 3, 0.0f);
      Mask support(cam.width, cam.height);
      for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
          const Ray ray = pixel_center_ray(cam, x, y);
          const RayBoxHit hit = intersect_ray_box(ray, object_);
          if (!hit.hit || hit.t_entry <= 0.0) continue;
          const double d = v.depth.at(x, y);
          if (has_surface(static_cast<float>(d)) && hit.entry_depth > d) continue;
          const Vec3 p = ray.origin + hit.t_entry * ray.direction;
          const Vec3 c = shade(face_normal(p), spec);
          const std::size_t i = static_cast<std::size_t>(y) * cam.width + x;
          scene.set_rgb(i, c);
          white.set_rgb(i, c);
          black.set_rgb(i, c);
          support.at(x, y) = 1;
        }
      }
      images_[{v.view_id, BackgroundMode::scene}] = std::move(scene);
      images_[{v.view_id, BackgroundMode::white}] = std::move(white);
      images_[{v.view_id, BackgroundMode::black}] = std::move(black);
      support_[v.view_id] = std::move(support);
    }
  }

  const OrientedBox3D& object() const { return object_; }
  const Image& image(int view_id, BackgroundMode mode) const { return images_.at({view_id, mode}); }
  // Pixels covered by the visible target object.
  const Mask& support(int view_id) const { return support_.at(view_id); }

 private:
  Vec3 face_normal(const Vec3& p) const {
    const Vec3 local = object_.axes.transpose() * (p - object_.center);
    int best = 0;
    double best_gap = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      const double gap = object_.half_extents[a] - std::abs(local[a]);
      if (gap < best_gap) {
        best_gap = gap;
        best = a;
      }
    }
    return object_.axes.col(best) * (local[best] >= 0.0 ? 1.0 : -1.0);
  }

  static Vec3 shade(const Vec3& n, const BoxTargetSpec& spec) {
    const double lambert = std::max(0.0, n.dot(spec.light_direction));
    return (spec.albedo * (spec.ambient + (1.0 - spec.ambient) * lambert)).cwiseMin(1.0);
  }

  OrientedBox3D object_;
  std::map<std::pair<int, BackgroundMode>, Image> images_;
  std::map<int, Mask> support_;
};

}  // namespace gonerf
