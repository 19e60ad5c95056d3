#pragma once

#include <atomic>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <unistd.h>

#include "gonerf/gonerf.hpp"

namespace gonerf::testing {

inline const SceneCache& desk_cache() {
  static const SceneCache cache = [] {
    const auto desk = synthetic::desk_scene(4, 64);
    return synthetic::make_synthetic_scene(desk.primitives, desk.cameras, desk.lighting);
  }();
  return cache;
}

// Box resting on the ground at the origin of the desk scene.
inline OrientedBox3D desk_box() {
  OrientedBox3D box;
  box.center = Vec3(0.0, 0.0, 0.35);
  box.half_extents = Vec3(0.35, 0.35, 0.35);
  return box;
}

inline ObjectFieldConfig small_field_config(std::uint64_t seed = 1) {
  ObjectFieldConfig cfg;
  cfg.grid.num_levels = 4;
  cfg.grid.base_resolution = 4;
  cfg.grid.per_level_scale = 2.0;
  cfg.grid.table_size_log2 = 10;
  cfg.hidden_width = 16;
  cfg.geo_features = 3;
  cfg.density_shift = 0.0;
  cfg.seed = seed;
  return cfg;
}

inline TrainConfig small_train_config() {
  TrainConfig cfg;
  cfg.total_steps = 40;
  cfg.K = 16;
  cfg.K_render = 16;
  cfg.native_resolution = 32;
  cfg.checkpoint_every = 10;
  cfg.preview_every = 20;
  cfg.field.grid.num_levels = 4;
  cfg.field.grid.base_resolution = 4;
  cfg.field.grid.per_level_scale = 2.0;
  cfg.field.grid.table_size_log2 = 10;
  cfg.field.hidden_width = 16;
  cfg.field.density_shift = -1.0;
  cfg.weights.lambda_R = 0.0;
  return cfg;
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("gonerf_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// Central difference of f around x[i].
inline double central_difference(const std::function<double()>& f, double& x, double h) {
  const double keep = x;
  x = keep + h;
  const double up = f();
  x = keep - h;
  const double down = f();
  x = keep;
  return (up - down) / (2.0 * h);
}

// Relative agreement with an absolute floor for near-zero derivatives.
inline bool fd_agrees(double analytic, double numeric, double rel = 1e-3, double floor = 1e-6) {
  return std::abs(analytic - numeric) <= rel * std::max(std::abs(numeric), std::abs(analytic)) + floor;
}

inline bool bit_equal(const Image& a, const Image& b) {
  return a.same_shape(b) && std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

}  // namespace gonerf::testing
