#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gonerf/errors.hpp"
#include "gonerf/geometry.hpp"
#include "gonerf/image.hpp"
#include "gonerf/object_field.hpp"
#include "gonerf/png_io.hpp"
#include "gonerf/scene_cache.hpp"

namespace gonerf {

enum class BackgroundMode { scene, white, black };

inline std::string to_string(BackgroundMode m) {
  switch (m) {
    case BackgroundMode::white: return "white";
    case BackgroundMode::black: return "black";
    default: return "scene";
  }
}

inline BackgroundMode parse_background_mode(const std::string& s) {
  if (s == "scene") return BackgroundMode::scene;
  if (s == "white") return BackgroundMode::white;
  if (s == "black") return BackgroundMode::black;
  throw InvalidInput("unknown background mode '" + s + "'");
}

// Samples along one ray, restricted to [t_entry, t_far].
struct RaySampleSet {
  std::vector<double> t;
  std::vector<double> delta;
  double t_entry = 0.0;
  double t_far = 0.0;

  bool empty() const { return t.empty(); }
  std::size_t size() const { return t.size(); }
};

// Far bound: box exit, or the scene surface when it lies inside the box.
// Stratified samples are jittered uniformly inside K equal bins; otherwise
// bin midpoints are used. Segment length is the bin width in both cases.
inline RaySampleSet sample_ray(const Ray& ray, const RayBoxHit& hit, double scene_depth, int K, bool stratified,
                               std::uint64_t rng_seed) {
  if (!hit.hit) throw ContractViolation("sample_ray: ray does not hit the box");
  if (K < 1) throw InvalidInput("sample_ray: K must be >= 1");
  RaySampleSet s;
  s.t_entry = hit.t_entry;
  s.t_far = hit.t_exit;
  if (scene_depth > 0.0 && std::isfinite(scene_depth)) s.t_far = std::min(s.t_far, scene_depth / ray.depth_per_t);
  if (!(s.t_far > s.t_entry)) return s;
  const double bin = (s.t_far - s.t_entry) / K;
  s.t.resize(K);
  s.delta.assign(K, bin);
  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < K; ++k) {
    const double offset = stratified ? u(rng) : 0.5;
    s.t[k] = s.t_entry + (k + offset) * bin;
  }
  return s;
}

struct RayColor {
  Vec3 color = Vec3::Zero();  // G
  double opacity = 0.0;       // O
};

// Volume rendering quadrature over per-sample densities, colors and segment
// lengths: w_k = T_k (1 - exp(-sigma_k delta_k)), G = sum w_k c_k, O = sum w_k.
inline RayColor accumulate(std::span<const double> sigma, std::span<const Vec3> color,
                           std::span<const double> delta) {
  RayColor out;
  double optical = 0.0;
  for (std::size_t k = 0; k < sigma.size(); ++k) {
    const double a = sigma[k] * delta[k];
    const double w = std::exp(-optical) * -std::expm1(-a);
    out.color += w * color[k];
    out.opacity += w;
    optical += a;
  }
  return out;
}

// Gradients of a scalar loss through accumulate(), given dL/dG and dL/dO.
inline void accumulate_backward(std::span<const double> sigma, std::span<const Vec3> color,
                                std::span<const double> delta, const Vec3& d_color_out, double d_opacity_out,
                                std::span<double> d_sigma, std::span<Vec3> d_color) {
  const std::size_t n = sigma.size();
  std::vector<double> trans(n), w(n), g(n);
  double optical = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    trans[k] = std::exp(-optical);
    const double a = sigma[k] * delta[k];
    w[k] = trans[k] * -std::expm1(-a);
    g[k] = d_color_out.dot(color[k]) + d_opacity_out;
    optical += a;
  }
  double suffix = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double a = sigma[k] * delta[k];
    d_sigma[k] = delta[k] * (trans[k] * std::exp(-a) * g[k] - suffix);
    d_color[k] = w[k] * d_color_out;
    suffix += w[k] * g[k];
  }
}

inline Vec3 box_direction(const OrientedBox3D& box, const Ray& ray) {
  return (box.axes.transpose() * ray.direction).normalized();
}

// Renders one ray through any field exposing box() and a batched query().
template <class Field>
RayColor render_ray(const Field& field, const Ray& ray, const RaySampleSet& samples) {
  if (samples.empty()) return {};
  const std::size_t n = samples.size();
  std::vector<Vec3> pos(n), dirs(n, box_direction(field.box(), ray)), color(n);
  std::vector<double> sigma(n);
  for (std::size_t k = 0; k < n; ++k)
    pos[k] = world_to_box(field.box(), ray.origin + samples.t[k] * ray.direction, 1e-6);
  field.query(pos, dirs, sigma, color);
  return accumulate(sigma, color, samples.delta);
}

// I = G*O + (1-O)*B. Pixels with O = 0 copy the background bit-exactly.
inline Image composite(const Image& G, const Image& O, const Image& background) {
  if (!G.same_shape(background) || O.width != G.width || O.height != G.height || O.channels != 1)
    throw ContractViolation("composite: shapes disagree");
  Image I = background;
  const std::size_t n = static_cast<std::size_t>(G.width) * G.height;
  for (std::size_t i = 0; i < n; ++i) {
    const double o = O.data[i];
    if (!(o >= 0.0 && o <= 1.0)) throw ContractViolation("composite: opacity outside [0,1]");
    if (o == 0.0) continue;
    for (int c = 0; c < 3; ++c) {
      const double g = G.data[i * 3 + c];
      I.data[i * 3 + c] = static_cast<float>(g * o + (1.0 - o) * background.data[i * 3 + c]);
    }
  }
  return I;
}

inline Image background_image(const SceneViewRGBD& view, BackgroundMode mode) {
  if (mode == BackgroundMode::scene) return view.color;
  Image b(view.color.width, view.color.height, 3);
  std::fill(b.data.begin(), b.data.end(), mode == BackgroundMode::white ? 1.0f : 0.0f);
  return b;
}

struct RenderOutput {
  int view_id = -1;
  Image G;  // rendered object color, 3 channels
  Image O;  // opacity, 1 channel
  Image I;  // composite, 3 channels
  Mask M;   // box silhouette
  BackgroundMode background_mode = BackgroundMode::scene;
};

struct RenderSettings {
  int K = 96;
  bool stratified = false;
  std::uint64_t seed = 0;
  BackgroundMode background = BackgroundMode::scene;
};

// Rays of one view that reach the box unoccluded, with their samples
// flattened into one batch.
struct ViewPlan {
  int view_id = -1;
  int width = 0;
  int height = 0;
  Mask mask;
  std::vector<std::size_t> pixel;    // rendered pixel index per ray
  std::vector<std::size_t> offset;   // first sample of each ray; size = rays + 1
  std::vector<Vec3> positions;       // box-normalized
  std::vector<Vec3> directions;      // box frame
  std::vector<double> delta;

  std::size_t rays() const { return pixel.size(); }
};

inline std::uint64_t ray_seed(std::uint64_t seed, std::size_t pixel) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (pixel + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline ViewPlan plan_view(const OrientedBox3D& box, const SceneViewRGBD& view, const RenderSettings& rs) {
  ViewPlan plan;
  const CameraView& cam = view.camera;
  plan.view_id = view.view_id;
  plan.width = cam.width;
  plan.height = cam.height;
  plan.mask = Mask(cam.width, cam.height);
  plan.offset.push_back(0);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Ray ray = pixel_center_ray(cam, x, y);
      const RayBoxHit hit = intersect_ray_box(ray, box);
      if (!hit.hit) continue;
      plan.mask.at(x, y) = 1;
      const double scene_depth = view.depth.at(x, y);
      if (has_surface(static_cast<float>(scene_depth)) && hit.entry_depth > scene_depth) continue;
      const std::size_t idx = static_cast<std::size_t>(y) * cam.width + x;
      const RaySampleSet s = sample_ray(ray, hit, scene_depth, rs.K, rs.stratified, ray_seed(rs.seed, idx));
      if (s.empty()) continue;
      const Vec3 dir = box_direction(box, ray);
      for (std::size_t k = 0; k < s.size(); ++k) {
        plan.positions.push_back(world_to_box(box, ray.origin + s.t[k] * ray.direction, 1e-6));
        plan.directions.push_back(dir);
        plan.delta.push_back(s.delta[k]);
      }
      plan.pixel.push_back(idx);
      plan.offset.push_back(plan.positions.size());
    }
  }
  return plan;
}

inline RenderOutput assemble_output(const ViewPlan& plan, const SceneViewRGBD& view, BackgroundMode mode,
                                    const std::vector<RayColor>& rays) {
  RenderOutput out;
  out.view_id = plan.view_id;
  out.M = plan.mask;
  out.background_mode = mode;
  out.G = Image(plan.width, plan.height, 3);
  out.O = Image(plan.width, plan.height, 1);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    out.G.set_rgb(plan.pixel[r], rays[r].color);
    out.O.data[plan.pixel[r]] = static_cast<float>(std::clamp(rays[r].opacity, 0.0, 1.0));
  }
  out.I = composite(out.G, out.O, background_image(view, mode));
  return out;
}

inline constexpr std::size_t kRenderChunk = 16384;

// Splits rays into chunks of at most kRenderChunk samples (single rays may exceed it).
inline std::vector<std::pair<std::size_t, std::size_t>> ray_chunks(const ViewPlan& plan) {
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  std::size_t begin = 0;
  while (begin < plan.rays()) {
    std::size_t end = begin + 1;
    while (end < plan.rays() && plan.offset[end + 1] - plan.offset[begin] <= kRenderChunk) ++end;
    chunks.emplace_back(begin, end);
    begin = end;
  }
  return chunks;
}

inline RenderOutput render_view(const ObjectField& field, const SceneViewRGBD& view, const RenderSettings& rs) {
  const ViewPlan plan = plan_view(field.box(), view, rs);
  std::vector<RayColor> rays(plan.rays());
  std::vector<double> sigma;
  std::vector<Vec3> color;
  for (const auto& [rb, re] : ray_chunks(plan)) {
    const std::size_t s0 = plan.offset[rb], s1 = plan.offset[re];
    sigma.resize(s1 - s0);
    color.resize(s1 - s0);
    field.query(std::span(plan.positions).subspan(s0, s1 - s0), std::span(plan.directions).subspan(s0, s1 - s0),
                sigma, color);
    for (std::size_t r = rb; r < re; ++r) {
      const std::size_t a = plan.offset[r] - s0, b = plan.offset[r + 1] - s0;
      rays[r] = accumulate(std::span(sigma).subspan(a, b - a), std::span(color).subspan(a, b - a),
                           std::span(plan.delta).subspan(plan.offset[r], b - a));
    }
  }
  return assemble_output(plan, view, rs.background, rays);
}

// Differentiable render of one view: keeps per-chunk field caches so that
// loss gradients on (I, G, O) can be pushed into the field parameters.
class TrainingRender {
 public:
  TrainingRender(const ObjectField& field, const SceneViewRGBD& view, const RenderSettings& rs)
      : field_(field), view_(view), plan_(plan_view(field.box(), view, rs)), mode_(rs.background) {
    sigma_.resize(plan_.positions.size());
    color_.resize(plan_.positions.size());
    std::vector<RayColor> rays(plan_.rays());
    for (const auto& [rb, re] : ray_chunks(plan_)) {
      const std::size_t s0 = plan_.offset[rb], s1 = plan_.offset[re];
      Chunk chunk{rb, re, {}};
      field_.forward(std::span(plan_.positions).subspan(s0, s1 - s0),
                     std::span(plan_.directions).subspan(s0, s1 - s0), std::span(sigma_).subspan(s0, s1 - s0),
                     std::span(color_).subspan(s0, s1 - s0), chunk.cache);
      chunks_.push_back(std::move(chunk));
    }
    for (std::size_t r = 0; r < plan_.rays(); ++r) rays[r] = accumulate(ray_sigma(r), ray_color(r), ray_delta(r));
    output_ = assemble_output(plan_, view_, mode_, rays);
  }

  const RenderOutput& output() const { return output_; }
  const ViewPlan& plan() const { return plan_; }

  // dI: per-pixel dL/dI (3 channels); dG: dL/dG (3 channels); dO: dL/dO (1 channel).
  // Any of them may be empty images, meaning zero.
  void backward(const Image& dI, const Image& dG, const Image& dO, FieldGradients& grads) const {
    const Image bg = background_image(view_, mode_);
    std::vector<double> d_sigma(plan_.positions.size());
    std::vector<Vec3> d_color(plan_.positions.size());
    for (std::size_t r = 0; r < plan_.rays(); ++r) {
      const std::size_t p = plan_.pixel[r];
      const double o = output_.O.data[p];
      const Vec3 g = output_.G.rgb(p);
      Vec3 dg = Vec3::Zero();
      double dop = 0.0;
      if (!dI.data.empty()) {
        const Vec3 di = dI.rgb(p);
        dg += o * di;
        dop += di.dot(g - bg.rgb(p));
      }
      if (!dG.data.empty()) dg += dG.rgb(p);
      if (!dO.data.empty()) dop += dO.data[p];
      const std::size_t a = plan_.offset[r], n = plan_.offset[r + 1] - a;
      accumulate_backward(ray_sigma(r), ray_color(r), ray_delta(r), dg, dop, std::span(d_sigma).subspan(a, n),
                          std::span(d_color).subspan(a, n));
    }
    for (const auto& chunk : chunks_) {
      const std::size_t s0 = plan_.offset[chunk.ray_begin], s1 = plan_.offset[chunk.ray_end];
      field_.backward(chunk.cache, std::span(plan_.positions).subspan(s0, s1 - s0),
                      std::span<const double>(d_sigma).subspan(s0, s1 - s0),
                      std::span<const Vec3>(d_color).subspan(s0, s1 - s0), grads);
    }
  }

 private:
  struct Chunk {
    std::size_t ray_begin, ray_end;
    ObjectField::ForwardCache cache;
  };

  std::span<const double> ray_sigma(std::size_t r) const {
    return std::span(sigma_).subspan(plan_.offset[r], plan_.offset[r + 1] - plan_.offset[r]);
  }
  std::span<const Vec3> ray_color(std::size_t r) const {
    return std::span(color_).subspan(plan_.offset[r], plan_.offset[r + 1] - plan_.offset[r]);
  }
  std::span<const double> ray_delta(std::size_t r) const {
    return std::span(plan_.delta).subspan(plan_.offset[r], plan_.offset[r + 1] - plan_.offset[r]);
  }

  const ObjectField& field_;
  const SceneViewRGBD& view_;
  ViewPlan plan_;
  BackgroundMode mode_;
  std::vector<double> sigma_;
  std::vector<Vec3> color_;
  std::vector<Chunk> chunks_;
  RenderOutput output_;
};

// Writes composite, opacity and mask PNGs for each render plus manifest.json.
inline void export_renders(const std::vector<RenderOutput>& renders, const RenderSettings& rs,
                           const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["schema_version"] = 1;
  manifest["renders"] = nlohmann::json::array();
  for (const auto& r : renders) {
    const std::string id = std::to_string(r.view_id);
    png::write_png(dir / ("composite_" + id + ".png"), r.I);
    png::write_png(dir / ("opacity_" + id + ".png"), r.O);
    png::write_png(dir / ("mask_" + id + ".png"), png::mask_image(r.M));
    manifest["renders"].push_back({{"view_id", r.view_id},
                                   {"seed", rs.seed},
                                   {"K", rs.K},
                                   {"background_mode", to_string(r.background_mode)},
                                   {"composite", "composite_" + id + ".png"},
                                   {"opacity", "opacity_" + id + ".png"},
                                   {"mask", "mask_" + id + ".png"}});
  }
  png::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace gonerf
