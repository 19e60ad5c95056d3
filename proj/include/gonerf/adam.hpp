#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "gonerf/archive.hpp"
#include "gonerf/errors.hpp"

namespace gonerf {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-15;
};

// Adam over a fixed list of parameter groups. Each group keeps its own step
// counter so groups that are skipped (inactive hash levels) start their bias
// correction when first updated.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  // Returns the group index.
  std::size_t add_group(std::size_t size) {
    groups_.push_back({std::vector<float>(size, 0.0f), std::vector<float>(size, 0.0f), 0});
    return groups_.size() - 1;
  }

  std::size_t group_count() const { return groups_.size(); }
  long group_steps(std::size_t g) const { return groups_[g].step; }

  void update(std::size_t g, std::span<float> params, std::span<const float> grad, double lr) {
    Group& s = groups_[g];
    if (params.size() != s.m.size() || grad.size() != s.m.size())
      throw ContractViolation("Adam: parameter group size mismatch");
    ++s.step;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
    const double step_size = lr / c1;
    const double sc2 = std::sqrt(c2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double gi = grad[i];
      const double m = b1 * s.m[i] + (1.0 - b1) * gi;
      const double v = b2 * s.v[i] + (1.0 - b2) * gi * gi;
      s.m[i] = static_cast<float>(m);
      s.v[i] = static_cast<float>(v);
      params[i] = static_cast<float>(params[i] - step_size * m / (std::sqrt(v) / sc2 + cfg_.eps));
    }
  }

  void write(archive::Writer& w) const {
    w.put<double>(cfg_.beta1);
    w.put<double>(cfg_.beta2);
    w.put<double>(cfg_.eps);
    w.put<std::uint64_t>(groups_.size());
    for (const auto& g : groups_) {
      w.put<std::int64_t>(g.step);
      w.put_span<float>(g.m);
      w.put_span<float>(g.v);
    }
  }

  void read(archive::Reader& r) {
    cfg_.beta1 = r.get<double>();
    cfg_.beta2 = r.get<double>();
    cfg_.eps = r.get<double>();
    const auto n = r.get<std::uint64_t>();
    if (n != groups_.size()) throw IoError("optimizer state: parameter group count mismatch");
    for (auto& g : groups_) {
      g.step = r.get<std::int64_t>();
      r.get_into<float>(g.m);
      r.get_into<float>(g.v);
    }
  }

 private:
  struct Group {
    std::vector<float> m;
    std::vector<float> v;
    long step = 0;
  };
  AdamConfig cfg_;
  std::vector<Group> groups_;
};

}  // namespace gonerf
