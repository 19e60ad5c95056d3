#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "gonerf/archive.hpp"
#include "gonerf/errors.hpp"
#include "gonerf/geometry.hpp"
#include "gonerf/hash_grid.hpp"
#include "gonerf/mlp.hpp"
#include "gonerf/spherical_harmonics.hpp"

namespace gonerf {

// Additive pre-activation density bump, in box-normalized coordinates.
struct DensityBlob {
  Vec3 center = Vec3::Constant(0.5);
  double radius = 0.1;
  double amplitude = 8.0;
};

struct ObjectFieldConfig {
  HashGridConfig grid;
  int hidden_width = 64;
  int geo_features = 15;
  // Constant added before the density softplus. -inf gives an exactly empty field.
  double density_shift = -6.0;
  bool zero_init_density_head = true;
  std::vector<DensityBlob> blobs;
  std::uint64_t seed = 0;
};

inline double softplus(double x) {
  if (x > 20.0) return x;
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Coarse-to-fine schedule: two levels at step 0, one more every 1000 steps.
inline int active_levels_for_step(long step, int num_levels) {
  if (step < 0) throw InvalidInput("active_levels_for_step: negative step");
  const long levels = 2 + step / 1000;
  return static_cast<int>(std::min<long>(levels, num_levels));
}

// World point -> box-normalized [0,1]^3. Points more than `slack` world units
// outside the box are rejected; those within the slack are clamped.
inline Vec3 world_to_box(const OrientedBox3D& box, const Vec3& p, double slack = 1e-6) {
  const Vec3 local = box.axes.transpose() * (p - box.center);
  if (((local.cwiseAbs() - box.half_extents).array() > slack).any())
    throw ContractViolation("world_to_box: point outside the box");
  const Vec3 u = (local.cwiseQuotient(box.half_extents) + Vec3::Ones()) * 0.5;
  return u.cwiseMax(0.0).cwiseMin(1.0);
}

inline Vec3 box_to_world(const OrientedBox3D& box, const Vec3& u) {
  return box.center + box.axes * ((2.0 * u - Vec3::Ones()).cwiseProduct(box.half_extents));
}

struct FieldGradients {
  std::vector<std::vector<float>> tables;
  Mlp::Gradients density_net;
  Mlp::Gradients color_net;
};

// Hash-grid radiance field confined to an oriented box. Queries take
// box-normalized positions and box-frame unit view directions.
class ObjectField {
 public:
  static constexpr std::uint32_t kArchiveKind = 0x444c4546;  // "FELD"
  static constexpr std::uint32_t kArchiveVersion = 1;

  ObjectField() = default;

  ObjectField(const ObjectFieldConfig& cfg, const OrientedBox3D& box)
      : cfg_(cfg), box_(box), grid_(cfg.grid, cfg.seed) {
    box_.validate();
    const int enc = cfg_.grid.encoded_dim();
    density_net_ = Mlp({enc, cfg_.hidden_width, 1 + cfg_.geo_features}, cfg_.seed * 7919 + 1);
    color_net_ = Mlp({cfg_.geo_features + 16, cfg_.hidden_width, 3}, cfg_.seed * 7919 + 2);
    if (cfg_.zero_init_density_head) {
      density_net_.layers().back().weight.row(0).setZero();
      density_net_.layers().back().bias(0) = 0.0f;
    }
    active_levels_ = active_levels_for_step(0, cfg_.grid.num_levels);
  }

  // A field with identically zero density.
  static ObjectField empty(const OrientedBox3D& box, HashGridConfig grid = small_grid()) {
    ObjectFieldConfig cfg;
    cfg.grid = grid;
    cfg.density_shift = -std::numeric_limits<double>::infinity();
    return ObjectField(cfg, box);
  }

  static HashGridConfig small_grid() {
    HashGridConfig g;
    g.table_size_log2 = 14;
    return g;
  }

  const ObjectFieldConfig& config() const { return cfg_; }
  const OrientedBox3D& box() const { return box_; }
  const HashGrid& grid() const { return grid_; }
  HashGrid& grid() { return grid_; }
  Mlp& density_net() { return density_net_; }
  Mlp& color_net() { return color_net_; }
  const Mlp& density_net() const { return density_net_; }
  const Mlp& color_net() const { return color_net_; }
  int active_levels() const { return active_levels_; }

  void set_active_levels(long step) { active_levels_ = active_levels_for_step(step, cfg_.grid.num_levels); }
  void set_active_level_count(int n) { active_levels_ = std::clamp(n, 1, cfg_.grid.num_levels); }

  struct ForwardCache {
    Eigen::MatrixXf encoded;
    Mlp::Cache density_cache;
    Mlp::Cache color_cache;
    std::vector<double> pre_activation;
    std::vector<Vec3> color;
  };

  void query(std::span<const Vec3> positions, std::span<const Vec3> dirs, std::span<double> density,
             std::span<Vec3> color) const {
    run(positions, dirs, density, color, nullptr);
  }

  void forward(std::span<const Vec3> positions, std::span<const Vec3> dirs, std::span<double> density,
               std::span<Vec3> color, ForwardCache& cache) const {
    run(positions, dirs, density, color, &cache);
  }

  // Accumulates parameter gradients for a batch processed by forward().
  void backward(const ForwardCache& cache, std::span<const Vec3> positions, std::span<const double> d_density,
                std::span<const Vec3> d_color, FieldGradients& grads) const {
    const auto n = static_cast<Eigen::Index>(positions.size());
    Eigen::MatrixXf d_logit(3, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3& c = cache.color[i];
      for (int k = 0; k < 3; ++k) d_logit(k, i) = static_cast<float>(d_color[i][k] * c[k] * (1.0 - c[k]));
    }
    const Eigen::MatrixXf d_color_in = color_net_.backward(cache.color_cache, d_logit, grads.color_net);
    Eigen::MatrixXf d_head(1 + cfg_.geo_features, n);
    for (Eigen::Index i = 0; i < n; ++i)
      d_head(0, i) = static_cast<float>(d_density[i] * sigmoid(cache.pre_activation[i]));
    d_head.bottomRows(cfg_.geo_features) = d_color_in.topRows(cfg_.geo_features);
    const Eigen::MatrixXf d_enc = density_net_.backward(cache.density_cache, d_head, grads.density_net);
    grid_.backward_tables(positions, d_enc, active_levels_, grads.tables);
  }

  // d density / d box-normalized position at one point.
  Vec3 density_position_gradient(const Vec3& p, const Vec3& dir) const {
    ForwardCache cache;
    double dens;
    Vec3 col;
    forward(std::span<const Vec3>(&p, 1), std::span<const Vec3>(&dir, 1), std::span<double>(&dens, 1),
            std::span<Vec3>(&col, 1), cache);
    FieldGradients scratch = zero_gradients_decoder_only();
    Eigen::MatrixXf d_head = Eigen::MatrixXf::Zero(1 + cfg_.geo_features, 1);
    const double s = sigmoid(cache.pre_activation[0]);
    d_head(0, 0) = 1.0f;
    const Eigen::MatrixXf d_enc = density_net_.backward(cache.density_cache, d_head, scratch.density_net);
    Vec3 g = grid_.backward_position(p, std::span<const float>(d_enc.data(), d_enc.size()), active_levels_);
    g += blob_gradient(p);
    return g * s;
  }

  FieldGradients zero_gradients() const {
    FieldGradients g = zero_gradients_decoder_only();
    g.tables = grid_.zero_gradients();
    return g;
  }

  // Serialized form: config, box record, active levels, tables, decoder.
  std::string to_archive() const {
    archive::Writer w;
    write_payload(w);
    return archive::seal(kArchiveKind, kArchiveVersion, w.bytes());
  }

  static ObjectField from_archive(const std::string& sealed) {
    const std::string payload = archive::open(sealed, kArchiveKind, kArchiveVersion);
    archive::Reader r(std::span<const char>(payload.data(), payload.size()));
    ObjectField f = read_payload(r);
    if (!r.at_end()) throw IoError("field archive: trailing bytes");
    return f;
  }

  void write_payload(archive::Writer& w) const {
    const auto& g = cfg_.grid;
    w.put<std::int32_t>(g.num_levels);
    w.put<std::int32_t>(g.base_resolution);
    w.put<double>(g.per_level_scale);
    w.put<std::int32_t>(g.features_per_level);
    w.put<std::int32_t>(g.table_size_log2);
    w.put<std::int32_t>(cfg_.hidden_width);
    w.put<std::int32_t>(cfg_.geo_features);
    w.put<double>(cfg_.density_shift);
    w.put<std::uint8_t>(cfg_.zero_init_density_head ? 1 : 0);
    w.put<std::uint64_t>(cfg_.seed);
    w.put<std::uint64_t>(cfg_.blobs.size());
    for (const auto& b : cfg_.blobs) {
      for (int k = 0; k < 3; ++k) w.put<double>(b.center[k]);
      w.put<double>(b.radius);
      w.put<double>(b.amplitude);
    }
    w.put_string(box_record(box_));
    w.put<std::int32_t>(active_levels_);
    for (int l = 0; l < grid_.num_levels(); ++l) w.put_span<float>(grid_.table(l));
    for (const Mlp* net : {&density_net_, &color_net_}) {
      for (const auto& layer : net->layers()) {
        w.put_span<float>(std::span<const float>(layer.weight.data(), layer.weight.size()));
        w.put_span<float>(std::span<const float>(layer.bias.data(), layer.bias.size()));
      }
    }
  }

  static ObjectField read_payload(archive::Reader& r) {
    ObjectFieldConfig cfg;
    cfg.grid.num_levels = r.get<std::int32_t>();
    cfg.grid.base_resolution = r.get<std::int32_t>();
    cfg.grid.per_level_scale = r.get<double>();
    cfg.grid.features_per_level = r.get<std::int32_t>();
    cfg.grid.table_size_log2 = r.get<std::int32_t>();
    cfg.hidden_width = r.get<std::int32_t>();
    cfg.geo_features = r.get<std::int32_t>();
    cfg.density_shift = r.get<double>();
    cfg.zero_init_density_head = r.get<std::uint8_t>() != 0;
    cfg.seed = r.get<std::uint64_t>();
    const auto nblobs = r.get<std::uint64_t>();
    if (nblobs > 1024) throw IoError("field archive: implausible blob count");
    for (std::uint64_t i = 0; i < nblobs; ++i) {
      DensityBlob b;
      for (int k = 0; k < 3; ++k) b.center[k] = r.get<double>();
      b.radius = r.get<double>();
      b.amplitude = r.get<double>();
      cfg.blobs.push_back(b);
    }
    cfg.grid.validate();
    const OrientedBox3D box = parse_box_record(r.get_string());
    ObjectField f(cfg, box);
    f.active_levels_ = r.get<std::int32_t>();
    for (int l = 0; l < f.grid_.num_levels(); ++l) r.get_into<float>(f.grid_.table(l));
    for (Mlp* net : {&f.density_net_, &f.color_net_}) {
      for (auto& layer : net->layers()) {
        r.get_into<float>(std::span<float>(layer.weight.data(), layer.weight.size()));
        r.get_into<float>(std::span<float>(layer.bias.data(), layer.bias.size()));
      }
    }
    return f;
  }

  void save(const std::filesystem::path& path) const { archive::write(path, to_archive()); }
  static ObjectField load(const std::filesystem::path& path) { return from_archive(archive::read(path)); }

 private:
  FieldGradients zero_gradients_decoder_only() const {
    FieldGradients g;
    g.density_net = density_net_.zero_gradients();
    g.color_net = color_net_.zero_gradients();
    return g;
  }

  double blob_value(const Vec3& p) const {
    double v = 0.0;
    for (const auto& b : cfg_.blobs)
      v += b.amplitude * std::exp(-(p - b.center).squaredNorm() / (2.0 * b.radius * b.radius));
    return v;
  }

  Vec3 blob_gradient(const Vec3& p) const {
    Vec3 g = Vec3::Zero();
    for (const auto& b : cfg_.blobs) {
      const double r2 = b.radius * b.radius;
      g += -b.amplitude * std::exp(-(p - b.center).squaredNorm() / (2.0 * r2)) * (p - b.center) / r2;
    }
    return g;
  }

  void run(std::span<const Vec3> positions, std::span<const Vec3> dirs, std::span<double> density,
           std::span<Vec3> color, ForwardCache* cache) const {
    const std::size_t n = positions.size();
    if (dirs.size() != n || density.size() != n || color.size() != n)
      throw ContractViolation("ObjectField::query: batch shapes disagree");
    for (const auto& p : positions)
      if (!((p.array() >= 0.0).all() && (p.array() <= 1.0).all()))
        throw ContractViolation("ObjectField::query: position outside the unit cube");

    Eigen::MatrixXf local_enc;
    Eigen::MatrixXf& enc = cache ? cache->encoded : local_enc;
    grid_.encode(positions, active_levels_, enc);
    const Eigen::MatrixXf head = density_net_.forward(enc, cache ? &cache->density_cache : nullptr);

    Eigen::MatrixXf color_in(cfg_.geo_features + 16, static_cast<Eigen::Index>(n));
    color_in.topRows(cfg_.geo_features) = head.bottomRows(cfg_.geo_features);
    for (std::size_t i = 0; i < n; ++i) {
      const auto sh = sh_encode_deg4(dirs[i]);
      for (int k = 0; k < 16; ++k) color_in(cfg_.geo_features + k, static_cast<Eigen::Index>(i)) = sh[k];
    }
    const Eigen::MatrixXf logits = color_net_.forward(color_in, cache ? &cache->color_cache : nullptr);

    if (cache) {
      cache->pre_activation.resize(n);
      cache->color.resize(n);
    }
    const bool has_blobs = !cfg_.blobs.empty();
    for (std::size_t i = 0; i < n; ++i) {
      const auto col = static_cast<Eigen::Index>(i);
      double pre = static_cast<double>(head(0, col)) + cfg_.density_shift;
      if (has_blobs) pre += blob_value(positions[i]);
      density[i] = softplus(pre);
      color[i] = Vec3(sigmoid(logits(0, col)), sigmoid(logits(1, col)), sigmoid(logits(2, col)));
      if (cache) {
        cache->pre_activation[i] = pre;
        cache->color[i] = color[i];
      }
    }
  }

  ObjectFieldConfig cfg_;
  OrientedBox3D box_;
  HashGrid grid_;
  Mlp density_net_;
  Mlp color_net_;
  int active_levels_ = 2;
};

}  // namespace gonerf
