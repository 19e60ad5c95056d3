#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gonerf/errors.hpp"
#include "gonerf/image.hpp"

// Camera convention: pinhole, camera frame x right / y down / z forward.
// Pixel coordinates are continuous; integer pixel (i, j) has its center at
// (i + 0.5, j + 0.5). Depth is always camera-frame z.
namespace gonerf {

struct CameraView {
  int view_id = 0;
  Mat3 intrinsics = Mat3::Identity();
  Mat4 cam_to_world = Mat4::Identity();
  int width = 0;
  int height = 0;

  double fx() const { return intrinsics(0, 0); }
  double fy() const { return intrinsics(1, 1); }
  double cx() const { return intrinsics(0, 2); }
  double cy() const { return intrinsics(1, 2); }
  Mat3 rotation() const { return cam_to_world.topLeftCorner<3, 3>(); }
  Vec3 position() const { return cam_to_world.topRightCorner<3, 1>(); }
  Vec3 forward() const { return rotation().col(2); }

  bool contains(const Vec2& px) const {
    return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= width && px.y() <= height;
  }

  // Throws InvalidInput naming the violated invariant.
  void validate() const {
    if (width <= 0 || height <= 0)
      throw InvalidInput("camera " + std::to_string(view_id) + ": non-positive resolution");
    if (!intrinsics.allFinite() || !cam_to_world.allFinite())
      throw InvalidInput("camera " + std::to_string(view_id) + ": non-finite matrix entry");
    if (!(fx() > 0.0) || !(fy() > 0.0))
      throw InvalidInput("camera " + std::to_string(view_id) + ": focal lengths must be positive");
    if (cx() < 0.0 || cy() < 0.0 || cx() > width || cy() > height)
      throw InvalidInput("camera " + std::to_string(view_id) + ": principal point outside image");
    const Mat3 r = rotation();
    if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
      throw InvalidInput("camera " + std::to_string(view_id) + ": rotation is not orthonormal");
  }
};

inline Mat3 make_intrinsics(double fx, double fy, double cx, double cy) {
  Mat3 k = Mat3::Identity();
  k(0, 0) = fx;
  k(1, 1) = fy;
  k(0, 2) = cx;
  k(1, 2) = cy;
  return k;
}

// Camera at `eye` looking at `target`; `up` is the world up direction.
inline CameraView look_at(int view_id, const Vec3& eye, const Vec3& target, const Vec3& up,
                          int width, int height, double focal) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-12) x = z.unitOrthogonal();
  x.normalize();
  const Vec3 y = z.cross(x);
  CameraView cam;
  cam.view_id = view_id;
  cam.width = width;
  cam.height = height;
  cam.intrinsics = make_intrinsics(focal, focal, width / 2.0, height / 2.0);
  cam.cam_to_world.setIdentity();
  cam.cam_to_world.block<3, 1>(0, 0) = x;
  cam.cam_to_world.block<3, 1>(0, 1) = y;
  cam.cam_to_world.block<3, 1>(0, 2) = z;
  cam.cam_to_world.block<3, 1>(0, 3) = eye;
  return cam;
}

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  // Camera-frame depth gained per unit of t (direction . camera forward).
  double depth_per_t = 1.0;
  int view_id = -1;
  Vec2 pixel = Vec2::Zero();
};

struct RayBoxHit {
  bool hit = false;
  double t_entry = 0.0;
  double t_exit = 0.0;
  double entry_depth = 0.0;  // D_box: camera-frame depth of the entry point
};

struct Projection {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
  bool behind_camera = false;
};

struct ClickSelection {
  int view_id = 0;
  std::array<Vec2, 3> clicks{};
  Vec3 size_ratios = Vec3::Ones();

  void validate(const CameraView& view) const {
    for (const auto& c : clicks) {
      if (!c.allFinite() || !view.contains(c))
        throw InvalidInput("click outside image bounds");
    }
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j)
        if ((clicks[i] - clicks[j]).norm() == 0.0)
          throw DegenerateSelection("clicks must be pairwise distinct");
    if (!(size_ratios.array() > 0.0).all() || !size_ratios.allFinite())
      throw InvalidInput("size ratios must be strictly positive");
  }
};

struct OrientedBox3D {
  Vec3 center = Vec3::Zero();
  Mat3 axes = Mat3::Identity();  // columns: unit x / y / z axes
  Vec3 half_extents = Vec3::Ones();

  void validate() const {
    if (!center.allFinite() || !axes.allFinite() || !half_extents.allFinite())
      throw InvalidInput("box: non-finite field");
    if ((axes.transpose() * axes - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
      throw InvalidInput("box: axes are not orthonormal");
    if (std::abs(axes.determinant() - 1.0) > 1e-6)
      throw InvalidInput("box: axes are not right-handed");
    if (!(half_extents.array() > 0.0).all())
      throw InvalidInput("box: half extents must be strictly positive");
  }

  std::array<Vec3, 8> corners() const {
    std::array<Vec3, 8> out;
    for (int i = 0; i < 8; ++i) {
      const Vec3 s((i & 1) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0, (i & 4) ? 1.0 : -1.0);
      out[i] = center + axes * s.cwiseProduct(half_extents);
    }
    return out;
  }

  bool contains(const Vec3& p, double slack = 0.0) const {
    const Vec3 local = axes.transpose() * (p - center);
    return (local.cwiseAbs().array() <= half_extents.array() + slack).all();
  }

  bool operator==(const OrientedBox3D& o) const {
    return center == o.center && axes == o.axes && half_extents == o.half_extents;
  }
};

// ---------------------------------------------------------------------------
// Projection

inline Projection project(const CameraView& view, const Vec3& point) {
  const Vec3 cam = view.rotation().transpose() * (point - view.position());
  Projection p;
  p.depth = cam.z();
  if (cam.z() <= 0.0) {
    p.behind_camera = true;
    if (cam.z() == 0.0) {
      p.pixel = Vec2::Constant(std::numeric_limits<double>::quiet_NaN());
      return p;
    }
  }
  p.pixel = Vec2(view.fx() * cam.x() / cam.z() + view.cx(), view.fy() * cam.y() / cam.z() + view.cy());
  return p;
}

inline Vec3 back_project(const CameraView& view, const Vec2& pixel, double depth) {
  if (!std::isfinite(depth) || depth <= 0.0)
    throw InvalidInput("back_project: depth must be positive and finite");
  if (!pixel.allFinite()) throw InvalidInput("back_project: non-finite pixel");
  const Vec3 cam((pixel.x() - view.cx()) * depth / view.fx(),
                 (pixel.y() - view.cy()) * depth / view.fy(), depth);
  return view.rotation() * cam + view.position();
}

// World-space ray through a continuous pixel coordinate.
inline Ray pixel_ray(const CameraView& view, const Vec2& pixel) {
  const Vec3 cam_dir((pixel.x() - view.cx()) / view.fx(), (pixel.y() - view.cy()) / view.fy(), 1.0);
  const double n = cam_dir.norm();
  Ray r;
  r.origin = view.position();
  r.direction = view.rotation() * (cam_dir / n);
  r.depth_per_t = 1.0 / n;
  r.view_id = view.view_id;
  r.pixel = pixel;
  return r;
}

inline Ray pixel_center_ray(const CameraView& view, int x, int y) {
  return pixel_ray(view, Vec2(x + 0.5, y + 0.5));
}

// ---------------------------------------------------------------------------
// Depth lookup

// Bilinear interpolation of a depth map at a continuous pixel coordinate.
// Non-surface taps (0, negative or infinite) are dropped and the remaining
// weights renormalized; throws when no tap has a surface.
inline double bilinear_depth(const Image& depth, const Vec2& pixel) {
  const double fx = std::clamp(pixel.x() - 0.5, 0.0, depth.width - 1.0);
  const double fy = std::clamp(pixel.y() - 0.5, 0.0, depth.height - 1.0);
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const int x1 = std::min(x0 + 1, depth.width - 1);
  const int y1 = std::min(y0 + 1, depth.height - 1);
  const double wx = fx - x0, wy = fy - y0;
  const std::array<double, 4> w{(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy};
  const std::array<float, 4> d{depth.at(x0, y0), depth.at(x1, y0), depth.at(x0, y1), depth.at(x1, y1)};
  double acc = 0.0, wsum = 0.0;
  for (int k = 0; k < 4; ++k) {
    if (d[k] > 0.0f && std::isfinite(d[k])) {
      acc += w[k] * d[k];
      wsum += w[k];
    }
  }
  if (wsum <= 0.0) throw InvalidInput("depth lookup: no scene surface under the click");
  return acc / wsum;
}

// ---------------------------------------------------------------------------
// Box construction from three clicks

using DepthLookup = std::function<double(const Vec2&)>;

// Height-to-longest-edge ratio at or below which clicked points count as collinear.
inline constexpr double kFlatTriangle = 1e-5;

struct BoxConstruction {
  OrientedBox3D box;
  std::array<Vec3, 3> points{};  // back-projected p1, p2, p3
  double distance = 0.0;         // d = |p1 - p2|
};

inline BoxConstruction build_box_detailed(const ClickSelection& sel, const CameraView& view,
                                          const DepthLookup& depth_lookup) {
  sel.validate(view);
  BoxConstruction out;
  for (int i = 0; i < 3; ++i) out.points[i] = back_project(view, sel.clicks[i], depth_lookup(sel.clicks[i]));
  const Vec3& p1 = out.points[0];
  const Vec3& p2 = out.points[1];
  const Vec3& p3 = out.points[2];

  const Vec3 normal = (p2 - p1).cross(p3 - p1);
  if (0.5 * normal.norm() <= 1e-8)
    throw DegenerateSelection("clicked points are collinear (triangle area <= 1e-8)");
  const double longest = std::max({(p2 - p1).norm(), (p3 - p1).norm(), (p3 - p2).norm()});
  if (normal.norm() / (longest * longest) <= kFlatTriangle)
    throw DegenerateSelection("clicked points are collinear (triangle height below 1e-5 of its longest edge)");

  const Vec3 x = (p1 - p2).normalized();
  Vec3 z = normal.normalized();
  const Vec3 centroid = (p1 + p2 + p3) / 3.0;
  // Grow toward the viewer: z must face against the viewing direction.
  const Vec3 view_dir = (centroid - view.position()).normalized();
  if (z.dot(view_dir) > 0.0) z = -z;
  // Re-orthonormalize (x lies in the plane up to rounding).
  z = (z - z.dot(x) * x).normalized();
  const Vec3 y = z.cross(x).normalized();

  const double d = (p1 - p2).norm();
  out.distance = d;
  out.box.axes.col(0) = x;
  out.box.axes.col(1) = y;
  out.box.axes.col(2) = z;
  out.box.half_extents = sel.size_ratios * d / 2.0;
  out.box.center = centroid + z * (sel.size_ratios.z() * d / 2.0);
  return out;
}

inline OrientedBox3D build_box(const ClickSelection& sel, const CameraView& view,
                               const DepthLookup& depth_lookup) {
  return build_box_detailed(sel, view, depth_lookup).box;
}

// ---------------------------------------------------------------------------
// Ray / box intersection

inline RayBoxHit intersect_ray_box(const Ray& ray, const OrientedBox3D& box) {
  const Vec3 o = box.axes.transpose() * (ray.origin - box.center);
  const Vec3 d = box.axes.transpose() * ray.direction;
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double h = box.half_extents[a];
    if (std::abs(d[a]) < 1e-12) {
      if (o[a] < -h || o[a] > h) return {};
      continue;
    }
    double ta = (-h - o[a]) / d[a];
    double tb = (h - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  RayBoxHit hit;
  const double entry = std::max(t0, 0.0);
  if (!(t1 > entry)) return hit;
  hit.hit = true;
  hit.t_entry = entry;
  hit.t_exit = t1;
  hit.entry_depth = entry * ray.depth_per_t;
  return hit;
}

// Exact box silhouette: M(i) = 1 iff the pixel-center ray hits the box.
inline Mask project_box_mask(const OrientedBox3D& box, const CameraView& view) {
  Mask m(view.width, view.height);
  for (int y = 0; y < view.height; ++y)
    for (int x = 0; x < view.width; ++x)
      m.at(x, y) = intersect_ray_box(pixel_center_ray(view, x, y), box).hit ? 1 : 0;
  if (!m.any()) {
    bool any_front = false;
    for (const auto& c : box.corners()) any_front = any_front || !project(view, c).behind_camera;
    if (!any_front) log::warn("box is entirely behind camera " + std::to_string(view.view_id));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Box serialization: one line, fixed field order, round-trip precision.

inline std::string box_record(const OrientedBox3D& box) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "center";
  for (int i = 0; i < 3; ++i) os << ' ' << box.center[i];
  os << " axes";
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 3; ++r) os << ' ' << box.axes(r, c);
  os << " half_extents";
  for (int i = 0; i < 3; ++i) os << ' ' << box.half_extents[i];
  return os.str();
}

inline OrientedBox3D parse_box_record(const std::string& text) {
  std::istringstream is(text);
  OrientedBox3D box;
  std::string key;
  auto expect = [&](const char* name) {
    if (!(is >> key) || key != name) throw InvalidInput(std::string("box record: expected '") + name + "'");
  };
  auto num = [&]() {
    double v;
    if (!(is >> v)) throw InvalidInput("box record: malformed number");
    return v;
  };
  expect("center");
  for (int i = 0; i < 3; ++i) box.center[i] = num();
  expect("axes");
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 3; ++r) box.axes(r, c) = num();
  expect("half_extents");
  for (int i = 0; i < 3; ++i) box.half_extents[i] = num();
  box.validate();
  return box;
}

}  // namespace gonerf
