#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "gonerf/errors.hpp"
#include "gonerf/image.hpp"

namespace gonerf {

struct HashGridConfig {
  int num_levels = 16;
  int base_resolution = 16;
  // Growth factor between levels; the default puts the finest of 16 levels
  // at 512 cells per axis.
  double per_level_scale = std::pow(512.0 / 16.0, 1.0 / 15.0);
  int features_per_level = 2;
  int table_size_log2 = 19;

  void validate() const {
    if (num_levels < 1) throw InvalidInput("hash grid: num_levels must be >= 1");
    if (base_resolution < 2) throw InvalidInput("hash grid: base_resolution must be >= 2");
    if (!(per_level_scale > 1.0)) throw InvalidInput("hash grid: per_level_scale must be > 1");
    if (features_per_level < 1) throw InvalidInput("hash grid: features_per_level must be >= 1");
    if (table_size_log2 < 4 || table_size_log2 > 26)
      throw InvalidInput("hash grid: table_size_log2 out of range [4, 26]");
  }

  int resolution(int level) const {
    return static_cast<int>(std::floor(base_resolution * std::pow(per_level_scale, level) + 1e-9));
  }

  int encoded_dim() const { return num_levels * features_per_level; }

  bool operator==(const HashGridConfig&) const = default;
};

// Multi-resolution hash encoding with trilinear interpolation. Coarse levels
// whose vertex count fits the table are indexed densely; finer levels hash.
// Levels at or above `active_levels` produce exactly zero features and their
// tables are never read.
class HashGrid {
 public:
  HashGrid() = default;

  explicit HashGrid(const HashGridConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    const std::uint64_t cap = std::uint64_t{1} << cfg_.table_size_log2;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> init(-1e-4f, 1e-4f);
    for (int l = 0; l < cfg_.num_levels; ++l) {
      Level lv;
      lv.resolution = cfg_.resolution(l);
      const std::uint64_t side = static_cast<std::uint64_t>(lv.resolution) + 1;
      const std::uint64_t dense = side * side * side;
      lv.dense = dense <= cap;
      lv.entries = lv.dense ? dense : cap;
      lv.table.resize(lv.entries * cfg_.features_per_level);
      for (float& v : lv.table) v = init(rng);
      levels_.push_back(std::move(lv));
    }
  }

  const HashGridConfig& config() const { return cfg_; }
  int num_levels() const { return cfg_.num_levels; }
  int features_per_level() const { return cfg_.features_per_level; }
  int level_resolution(int l) const { return levels_[l].resolution; }
  bool level_is_dense(int l) const { return levels_[l].dense; }
  std::span<float> table(int l) { return levels_[l].table; }
  std::span<const float> table(int l) const { return levels_[l].table; }

  // Trilinear corner indices and weights of `p` (in [0,1]^3) at `level`.
  struct Corners {
    std::array<std::uint64_t, 8> index{};
    std::array<float, 8> weight{};
    std::array<std::array<float, 3>, 8> dweight{};  // d weight / d p (scaled by resolution)
  };

  Corners corners(int level, const Vec3& p, bool with_derivative = false) const {
    const Level& lv = levels_[level];
    const int res = lv.resolution;
    std::array<std::uint32_t, 3> cell{};
    std::array<float, 3> frac{};
    for (int a = 0; a < 3; ++a) {
      const double x = p[a] * res;
      const int c = std::clamp(static_cast<int>(std::floor(x)), 0, res - 1);
      cell[a] = static_cast<std::uint32_t>(c);
      frac[a] = static_cast<float>(x - c);
    }
    Corners out;
    for (int k = 0; k < 8; ++k) {
      std::array<std::uint32_t, 3> v{cell[0] + (k & 1), cell[1] + ((k >> 1) & 1), cell[2] + ((k >> 2) & 1)};
      out.index[k] = vertex_index(lv, v);
      std::array<float, 3> f{};
      for (int a = 0; a < 3; ++a) f[a] = ((k >> a) & 1) ? frac[a] : 1.0f - frac[a];
      out.weight[k] = f[0] * f[1] * f[2];
      if (with_derivative) {
        for (int a = 0; a < 3; ++a) {
          const float s = ((k >> a) & 1) ? 1.0f : -1.0f;
          float prod = s * static_cast<float>(res);
          for (int b = 0; b < 3; ++b)
            if (b != a) prod *= f[b];
          out.dweight[k][a] = prod;
        }
      }
    }
    return out;
  }

  // Encodes positions into columns of `out` (encoded_dim x N).
  void encode(std::span<const Vec3> positions, int active_levels, Eigen::MatrixXf& out) const {
    const int F = cfg_.features_per_level;
    out.setZero(cfg_.encoded_dim(), static_cast<Eigen::Index>(positions.size()));
    const int act = std::clamp(active_levels, 0, cfg_.num_levels);
    for (std::size_t i = 0; i < positions.size(); ++i) {
      float* col = out.col(static_cast<Eigen::Index>(i)).data();
      for (int l = 0; l < act; ++l) {
        const Corners c = corners(l, positions[i]);
        const float* table = levels_[l].table.data();
        for (int k = 0; k < 8; ++k) {
          const float* e = table + c.index[k] * F;
          for (int f = 0; f < F; ++f) col[l * F + f] += c.weight[k] * e[f];
        }
      }
    }
  }

  // Accumulates d loss / d table into `grads` (one buffer per level, sized
  // like the tables). Reduction order is sample order within each level.
  void backward_tables(std::span<const Vec3> positions, const Eigen::MatrixXf& d_encoded,
                       int active_levels, std::vector<std::vector<float>>& grads) const {
    const int F = cfg_.features_per_level;
    const int act = std::clamp(active_levels, 0, cfg_.num_levels);
    for (int l = 0; l < act; ++l) {
      float* g = grads[l].data();
      for (std::size_t i = 0; i < positions.size(); ++i) {
        const float* d = d_encoded.col(static_cast<Eigen::Index>(i)).data() + l * F;
        bool any = false;
        for (int f = 0; f < F; ++f) any = any || d[f] != 0.0f;
        if (!any) continue;
        const Corners c = corners(l, positions[i]);
        for (int k = 0; k < 8; ++k) {
          float* e = g + c.index[k] * F;
          for (int f = 0; f < F; ++f) e[f] += c.weight[k] * d[f];
        }
      }
    }
  }

  // d loss / d position for one sample given d loss / d encoding.
  Vec3 backward_position(const Vec3& p, std::span<const float> d_encoded, int active_levels) const {
    const int F = cfg_.features_per_level;
    const int act = std::clamp(active_levels, 0, cfg_.num_levels);
    Vec3 g = Vec3::Zero();
    for (int l = 0; l < act; ++l) {
      const Corners c = corners(l, p, true);
      const float* table = levels_[l].table.data();
      for (int k = 0; k < 8; ++k) {
        double dot = 0.0;
        for (int f = 0; f < F; ++f) dot += static_cast<double>(d_encoded[l * F + f]) * table[c.index[k] * F + f];
        for (int a = 0; a < 3; ++a) g[a] += c.dweight[k][a] * dot;
      }
    }
    return g;
  }

  std::vector<std::vector<float>> zero_gradients() const {
    std::vector<std::vector<float>> g;
    for (const auto& lv : levels_) g.emplace_back(lv.table.size(), 0.0f);
    return g;
  }

 private:
  struct Level {
    int resolution = 0;
    bool dense = true;
    std::uint64_t entries = 0;
    std::vector<float> table;
  };

  static std::uint64_t vertex_index(const Level& lv, const std::array<std::uint32_t, 3>& v) {
    if (lv.dense) {
      const std::uint64_t side = static_cast<std::uint64_t>(lv.resolution) + 1;
      return v[0] + side * (v[1] + side * v[2]);
    }
    const std::uint32_t h = v[0] ^ (v[1] * 2654435761u) ^ (v[2] * 805459861u);
    return h & (lv.entries - 1);
  }

  HashGridConfig cfg_;
  std::vector<Level> levels_;
};

}  // namespace gonerf
