#pragma once

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gonerf/errors.hpp"
#include "gonerf/geometry.hpp"
#include "gonerf/image.hpp"
#include "gonerf/png_io.hpp"

// Pre-rendered scene context: per-view color S_n, depth D_n and camera C_n.
//
// On-disk layout of a cache directory:
//   cameras.json          array of {view_id, intrinsics (row-major 9),
//                         cam_to_world (row-major 16), width, height}
//   meta.json             world_scale, source_backend, render_date, color_format
//   color/<view_id>.png   8-bit RGB (color_format "png8"), or
//   color/<view_id>.f32   raw little-endian float32 HxWx3 (color_format "f32")
//   depth/<view_id>.f32   raw little-endian float32 HxW, row-major
//
// A missing surface is +inf in memory and FLT_MAX on disk.
namespace gonerf {

static_assert(std::endian::native == std::endian::little, "raw buffers assume a little-endian host");

inline constexpr float kNoSurfaceOnDisk = std::numeric_limits<float>::max();

inline bool has_surface(float depth) { return depth > 0.0f && std::isfinite(depth); }

enum class ColorFormat { png8, f32 };

inline std::string to_string(ColorFormat f) { return f == ColorFormat::png8 ? "png8" : "f32"; }

struct SceneViewRGBD {
  int view_id = 0;
  Image color;  // HxWx3 in [0,1]
  Image depth;  // HxWx1, camera-frame z; +inf or 0 = no surface
  CameraView camera;

  void validate() const {
    const std::string who = "view " + std::to_string(view_id) + ": ";
    try {
      camera.validate();
    } catch (const InvalidInput& e) {
      throw InvalidInput(who + e.what());
    }
    if (camera.view_id != view_id) throw InvalidInput(who + "camera view_id mismatch");
    if (color.channels != 3) throw InvalidInput(who + "color must have 3 channels");
    if (depth.channels != 1) throw InvalidInput(who + "depth must have 1 channel");
    if (color.width != camera.width || color.height != camera.height)
      throw InvalidInput(who + "color resolution does not match camera");
    if (depth.width != camera.width || depth.height != camera.height)
      throw InvalidInput(who + "depth resolution does not match camera");
    for (float v : color.data)
      if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
        throw InvalidInput(who + "color value outside [0,1] or non-finite");
    for (float v : depth.data)
      if (std::isnan(v) || v < 0.0f || v == -std::numeric_limits<float>::infinity())
        throw InvalidInput(who + "depth negative or non-finite");
  }
};

struct SceneCache {
  std::vector<SceneViewRGBD> views;
  double world_scale = 1.0;
  std::string source_backend = "unknown";
  std::string render_date;
  ColorFormat color_format = ColorFormat::png8;

  void validate() const {
    if (views.empty()) throw InvalidInput("scene cache has no views");
    std::set<int> ids;
    for (const auto& v : views) {
      if (!ids.insert(v.view_id).second)
        throw InvalidInput("duplicate view_id " + std::to_string(v.view_id));
      v.validate();
    }
  }

  const SceneViewRGBD& view(int view_id) const {
    for (const auto& v : views)
      if (v.view_id == view_id) return v;
    throw InvalidInput("unknown view_id " + std::to_string(view_id));
  }

  std::vector<int> view_ids() const {
    std::vector<int> ids;
    for (const auto& v : views) ids.push_back(v.view_id);
    return ids;
  }
};

namespace detail {

inline nlohmann::json camera_json(const CameraView& c) {
  nlohmann::json j;
  j["view_id"] = c.view_id;
  std::vector<double> k, m;
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 3; ++col) k.push_back(c.intrinsics(r, col));
  for (int r = 0; r < 4; ++r)
    for (int col = 0; col < 4; ++col) m.push_back(c.cam_to_world(r, col));
  j["intrinsics"] = k;
  j["cam_to_world"] = m;
  j["width"] = c.width;
  j["height"] = c.height;
  return j;
}

inline CameraView camera_from_json(const nlohmann::json& j) {
  CameraView c;
  try {
    c.view_id = j.at("view_id").get<int>();
    const auto k = j.at("intrinsics").get<std::vector<double>>();
    const auto m = j.at("cam_to_world").get<std::vector<double>>();
    if (k.size() != 9 || m.size() != 16) throw InvalidInput("camera matrices have wrong size");
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col) c.intrinsics(r, col) = k[r * 3 + col];
    for (int r = 0; r < 4; ++r)
      for (int col = 0; col < 4; ++col) c.cam_to_world(r, col) = m[r * 4 + col];
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("cameras.json: ") + e.what());
  }
  return c;
}

inline std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected) {
  const auto bytes = png::read_file(path);
  if (bytes.size() != expected * sizeof(float))
    throw InvalidInput(path.filename().string() + ": expected " + std::to_string(expected) +
                       " floats, found " + std::to_string(bytes.size() / sizeof(float)));
  std::vector<float> out(expected);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

}  // namespace detail

inline SceneCache load_cache(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path cams_path = dir / "cameras.json";
  if (!fs::exists(cams_path)) throw InvalidInput("missing camera file " + cams_path.string());
  nlohmann::json cams;
  try {
    cams = nlohmann::json::parse(png::read_file(cams_path));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("cameras.json: ") + e.what());
  }
  if (!cams.is_array()) throw InvalidInput("cameras.json must be an array");

  SceneCache cache;
  const fs::path meta_path = dir / "meta.json";
  if (fs::exists(meta_path)) {
    try {
      const auto meta = nlohmann::json::parse(png::read_file(meta_path));
      cache.world_scale = meta.value("world_scale", 1.0);
      cache.source_backend = meta.value("source_backend", std::string("unknown"));
      cache.render_date = meta.value("render_date", std::string());
      cache.color_format = meta.value("color_format", std::string("png8")) == "f32" ? ColorFormat::f32
                                                                                   : ColorFormat::png8;
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(std::string("meta.json: ") + e.what());
    }
  }

  for (const auto& cj : cams) {
    SceneViewRGBD v;
    v.camera = detail::camera_from_json(cj);
    v.view_id = v.camera.view_id;
    const std::string id = std::to_string(v.view_id);
    const int w = v.camera.width, h = v.camera.height;
    if (w <= 0 || h <= 0) throw InvalidInput("view " + id + ": non-positive resolution");
    try {
      if (cache.color_format == ColorFormat::png8) {
        const fs::path p = dir / "color" / (id + ".png");
        if (!fs::exists(p)) throw InvalidInput("missing color file");
        v.color = png::read_png(p, 3);
      } else {
        const fs::path p = dir / "color" / (id + ".f32");
        if (!fs::exists(p)) throw InvalidInput("missing color file");
        v.color = Image(w, h, 3);
        v.color.data = detail::read_f32(p, static_cast<std::size_t>(w) * h * 3);
      }
      const fs::path dp = dir / "depth" / (id + ".f32");
      if (!fs::exists(dp)) throw InvalidInput("missing depth file");
      if (fs::file_size(dp) != static_cast<std::uintmax_t>(w) * h * sizeof(float))
        throw InvalidInput("depth resolution does not match camera");
      v.depth = Image(w, h, 1);
      v.depth.data = detail::read_f32(dp, static_cast<std::size_t>(w) * h);
    } catch (const InvalidInput& e) {
      throw InvalidInput("view " + id + ": " + e.what());
    } catch (const IoError& e) {
      throw InvalidInput("view " + id + ": " + e.what());
    }
    for (float& d : v.depth.data) {
      if (std::isinf(d) && d > 0) throw InvalidInput("view " + id + ": depth non-finite on disk");
      if (d == kNoSurfaceOnDisk) d = std::numeric_limits<float>::infinity();
    }
    v.validate();
    cache.views.push_back(std::move(v));
  }
  cache.validate();
  return cache;
}

inline void save_cache(const SceneCache& cache, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  cache.validate();
  std::error_code ec;
  fs::create_directories(dir / "color", ec);
  fs::create_directories(dir / "depth", ec);
  if (ec) throw IoError("cannot create cache directory " + dir.string() + ": " + ec.message());

  nlohmann::json cams = nlohmann::json::array();
  for (const auto& v : cache.views) cams.push_back(detail::camera_json(v.camera));
  png::write_file_atomic(dir / "cameras.json", cams.dump(2) + "\n");

  nlohmann::json meta;
  meta["schema_version"] = 1;
  meta["world_scale"] = cache.world_scale;
  meta["source_backend"] = cache.source_backend;
  meta["render_date"] = cache.render_date;
  meta["color_format"] = to_string(cache.color_format);
  png::write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");

  for (const auto& v : cache.views) {
    const std::string id = std::to_string(v.view_id);
    if (cache.color_format == ColorFormat::png8) {
      png::write_png(dir / "color" / (id + ".png"), v.color);
    } else {
      png::write_file_atomic(dir / "color" / (id + ".f32"), v.color.data.data(),
                             v.color.data.size() * sizeof(float));
    }
    std::vector<float> depth = v.depth.data;
    for (float& d : depth)
      if (std::isinf(d)) d = kNoSurfaceOnDisk;
    png::write_file_atomic(dir / "depth" / (id + ".f32"), depth.data(), depth.size() * sizeof(float));
  }
}

}  // namespace gonerf
