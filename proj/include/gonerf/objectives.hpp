#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gonerf/errors.hpp"
#include "gonerf/image.hpp"

namespace gonerf {

enum class ReferenceMode { saturation, style };

inline std::string to_string(ReferenceMode m) { return m == ReferenceMode::style ? "style" : "saturation"; }

inline ReferenceMode parse_reference_mode(const std::string& s) {
  if (s == "saturation") return ReferenceMode::saturation;
  if (s == "style") return ReferenceMode::style;
  throw InvalidInput("unknown reference mode '" + s + "'");
}

struct LossWeights {
  double lambda_start = 30.0;
  double lambda_end = 300.0;
  double lambda_R = 500.0;
  double sds = 1.0;
  bool sparsity = true;
  bool entropy = true;
  ReferenceMode reference_mode = ReferenceMode::saturation;
  double shadow_threshold = 0.2;
  double support_threshold = 0.5;

  void validate() const {
    if (lambda_start < 0 || lambda_end < 0 || lambda_R < 0 || sds < 0)
      throw ConfigError("loss weights must be non-negative");
    if (!(shadow_threshold > 0.0 && shadow_threshold < 1.0)) throw ConfigError("shadow_threshold must lie in (0,1)");
    if (!(support_threshold >= 0.0 && support_threshold < 1.0))
      throw ConfigError("support_threshold must lie in [0,1)");
  }
};

// Cosine ramp from `start` at step 0 to `end` at step == total.
inline double cosine_schedule(long step, long total, double start = 30.0, double end = 300.0) {
  if (total <= 0) throw InvalidInput("cosine_schedule: total must be positive");
  const double s = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  return start + (end - start) * (1.0 - std::cos(M_PI * s)) / 2.0;
}

// A scalar loss together with its gradient on the per-pixel inputs it reads.
struct LossValue {
  double value = 0.0;
  Image grad;  // same shape as the differentiated input; empty when not requested
};

// Mean opacity over the rays that intersect the box.
inline LossValue sparsity_loss(const Image& O, const Mask& support) {
  LossValue out;
  out.grad = Image(O.width, O.height, 1);
  const std::size_t n = support.count();
  if (n == 0) {
    log::warn_once("sparsity_loss: no rays intersect the box");
    return out;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < support.data.size(); ++i) {
    if (!support.data[i]) continue;
    sum += O.data[i];
    out.grad.data[i] = static_cast<float>(1.0 / n);
  }
  out.value = sum / static_cast<double>(n);
  return out;
}

inline constexpr double kEntropyClamp = 1e-5;

inline double binary_entropy(double o) {
  const double c = std::clamp(o, kEntropyClamp, 1.0 - kEntropyClamp);
  return -(c * std::log(c) + (1.0 - c) * std::log(1.0 - c));
}

// Zero outside the clamp range.
inline double binary_entropy_grad(double o) {
  if (o < kEntropyClamp || o > 1.0 - kEntropyClamp) return 0.0;
  return std::log((1.0 - o) / o);
}

inline LossValue opacity_entropy_loss(const Image& O, const Mask& support) {
  LossValue out;
  out.grad = Image(O.width, O.height, 1);
  const std::size_t n = support.count();
  if (n == 0) return out;
  double sum = 0.0;
  for (std::size_t i = 0; i < support.data.size(); ++i) {
    if (!support.data[i]) continue;
    sum += binary_entropy(O.data[i]);
    out.grad.data[i] = static_cast<float>(binary_entropy_grad(O.data[i]) / n);
  }
  out.value = sum / static_cast<double>(n);
  return out;
}

// HSV saturation (max - min) / max, 0 when max = 0.
inline double saturation(const Vec3& rgb) {
  const double mx = rgb.maxCoeff(), mn = rgb.minCoeff();
  return mx > 0.0 ? (mx - mn) / mx : 0.0;
}

// Subgradient of saturation; zero at ties (max == min) and at max = 0.
inline Vec3 saturation_grad(const Vec3& rgb) {
  Vec3 g = Vec3::Zero();
  Eigen::Index imax, imin;
  const double mx = rgb.maxCoeff(&imax), mn = rgb.minCoeff(&imin);
  if (!(mx > 0.0) || mx == mn) return g;
  g[imax] = mn / (mx * mx);
  g[imin] = -1.0 / mx;
  return g;
}

inline Image saturation_channel(const Image& rgb) {
  Image s(rgb.width, rgb.height, 1);
  for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] = static_cast<float>(saturation(rgb.rgb(i)));
  return s;
}

inline Image intensity_channel(const Image& rgb) {
  Image s(rgb.width, rgb.height, 1);
  for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] = static_cast<float>(rgb.rgb(i).mean());
  return s;
}

struct ReferenceStats {
  double mean = 0.0;
  double variance = 0.0;
};

inline ReferenceStats reference_stats(const Image& reference) {
  ReferenceStats r;
  const Image s = saturation_channel(reference);
  const double n = static_cast<double>(s.data.size());
  for (float v : s.data) r.mean += v;
  r.mean /= n;
  for (float v : s.data) r.variance += (v - r.mean) * (v - r.mean);
  r.variance /= n;
  return r;
}

// Pixels that count as generated object: opacity above the support threshold
// and intensity at or above the shadow threshold.
inline Mask object_support(const Image& O, const Image& intensity, const LossWeights& w) {
  Mask m(O.width, O.height);
  for (std::size_t i = 0; i < m.data.size(); ++i)
    m.data[i] = O.data[i] > w.support_threshold && intensity.data[i] >= w.shadow_threshold ? 1 : 0;
  return m;
}

struct SaturationLoss {
  double value = 0.0;
  Image grad_G;  // 3 channels
  Image grad_O;  // 1 channel
  double mean = 0.0;
  double variance = 0.0;
  std::size_t support = 0;
};

// (mean_s - R_mean)^2 + (var_s - R_var)^2 with opacity-weighted saturation
// statistics of G over the object support.
inline SaturationLoss saturation_loss(const Image& G, const Image& O, const ReferenceStats& ref,
                                      const Mask& support) {
  SaturationLoss out;
  out.grad_G = Image(G.width, G.height, 3);
  out.grad_O = Image(O.width, O.height, 1);
  double W = 0.0, ws = 0.0;
  for (std::size_t i = 0; i < support.data.size(); ++i) {
    if (!support.data[i]) continue;
    ++out.support;
    W += O.data[i];
    ws += O.data[i] * saturation(G.rgb(i));
  }
  if (out.support == 0 || W <= 0.0) {
    log::warn_once("saturation_loss: empty object support");
    return out;
  }
  const double mean = ws / W;
  double var = 0.0;
  for (std::size_t i = 0; i < support.data.size(); ++i) {
    if (!support.data[i]) continue;
    const double d = saturation(G.rgb(i)) - mean;
    var += O.data[i] * d * d;
  }
  var /= W;
  const double a = mean - ref.mean, b = var - ref.variance;
  out.value = a * a + b * b;
  out.mean = mean;
  out.variance = var;
  for (std::size_t i = 0; i < support.data.size(); ++i) {
    if (!support.data[i]) continue;
    const Vec3 rgb = G.rgb(i);
    const double s = saturation(rgb), d = s - mean, w = O.data[i];
    const double ds = (2.0 * a * w + 4.0 * b * w * d) / W;
    out.grad_G.set_rgb(i, ds * saturation_grad(rgb));
    out.grad_O.data[i] = static_cast<float>((2.0 * a * d + 2.0 * b * (d * d - var)) / W);
  }
  return out;
}

// Per-pixel perceptual features. Implementations must be linear in the image
// or provide an exact adjoint through backward().
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual int dim() const = 0;
  // One column per selected pixel (in row-major pixel order).
  virtual Eigen::MatrixXd extract(const Image& rgb, const Mask& select) const = 0;
  // Adjoint: dL/dfeatures (dim x count) -> dL/dimage.
  virtual Image backward(const Image& rgb, const Mask& select, const Eigen::MatrixXd& d_features) const = 0;
};

// Fixed random linear projection of 3x3 RGB patches (edge clamped).
class RandomProjectionExtractor : public FeatureExtractor {
 public:
  explicit RandomProjectionExtractor(int dim = 8, std::uint64_t seed = 7) : proj_(dim, 27) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(27.0));
    for (Eigen::Index i = 0; i < proj_.size(); ++i) proj_.data()[i] = n(rng);
  }

  int dim() const override { return static_cast<int>(proj_.rows()); }

  Eigen::MatrixXd extract(const Image& rgb, const Mask& select) const override {
    Eigen::MatrixXd f(proj_.rows(), static_cast<Eigen::Index>(select.count()));
    Eigen::Index col = 0;
    for (int y = 0; y < rgb.height; ++y)
      for (int x = 0; x < rgb.width; ++x)
        if (select.at(x, y)) f.col(col++) = proj_ * patch(rgb, x, y);
    return f;
  }

  Image backward(const Image& rgb, const Mask& select, const Eigen::MatrixXd& d_features) const override {
    Image g(rgb.width, rgb.height, 3);
    Eigen::Index col = 0;
    for (int y = 0; y < rgb.height; ++y) {
      for (int x = 0; x < rgb.width; ++x) {
        if (!select.at(x, y)) continue;
        const Eigen::VectorXd dp = proj_.transpose() * d_features.col(col++);
        int k = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int sx = std::clamp(x + dx, 0, rgb.width - 1), sy = std::clamp(y + dy, 0, rgb.height - 1);
            for (int c = 0; c < 3; ++c) g.at(sx, sy, c) += static_cast<float>(dp[k++]);
          }
      }
    }
    return g;
  }

 private:
  static Eigen::VectorXd patch(const Image& rgb, int x, int y) {
    Eigen::VectorXd p(27);
    int k = 0;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int sx = std::clamp(x + dx, 0, rgb.width - 1), sy = std::clamp(y + dy, 0, rgb.height - 1);
        for (int c = 0; c < 3; ++c) p[k++] = rgb.at(sx, sy, c);
      }
    return p;
  }

  Eigen::MatrixXd proj_;
};

struct StyleLoss {
  double global = 0.0;
  double local = 0.0;
  double value = 0.0;
  Eigen::MatrixXd grad;  // dL/d object features
};

// Global term: squared differences of per-dimension feature means and
// variances. Local term: mean over object features of the squared distance to
// the nearest reference feature.
inline StyleLoss style_loss(const Eigen::MatrixXd& g, const Eigen::MatrixXd& r) {
  StyleLoss out;
  out.grad = Eigen::MatrixXd::Zero(g.rows(), g.cols());
  if (g.cols() == 0 || r.cols() == 0) {
    log::warn_once("style_loss: empty feature set");
    return out;
  }
  if (g.rows() != r.rows()) throw ContractViolation("style_loss: feature dimensions differ");
  const double n = static_cast<double>(g.cols()), m = static_cast<double>(r.cols());
  const Eigen::VectorXd mu_g = g.rowwise().mean(), mu_r = r.rowwise().mean();
  const Eigen::VectorXd var_g = (g.colwise() - mu_g).array().square().rowwise().sum() / n;
  const Eigen::VectorXd var_r = (r.colwise() - mu_r).array().square().rowwise().sum() / m;
  const Eigen::VectorXd dm = mu_g - mu_r, dv = var_g - var_r;
  out.global = dm.squaredNorm() + dv.squaredNorm();
  for (Eigen::Index i = 0; i < g.cols(); ++i) {
    out.grad.col(i) += 2.0 * dm / n + 4.0 * dv.cwiseProduct(g.col(i) - mu_g) / n;
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = 0;
    for (Eigen::Index j = 0; j < r.cols(); ++j) {
      const double d = (g.col(i) - r.col(j)).squaredNorm();
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    out.local += best / n;
    out.grad.col(i) += 2.0 * (g.col(i) - r.col(arg)) / n;
  }
  out.value = out.global + out.local;
  return out;
}

struct LossParts {
  double sds = 0.0;  // norm of the guidance residual, reported only
  double sparsity = 0.0;
  double entropy = 0.0;
  double reference = 0.0;
};

struct WeightedTotal {
  double value = 0.0;
  double lambda_S = 0.0;
  double lambda_O = 0.0;
  double lambda_R = 0.0;
};

inline WeightedTotal total_loss(const LossParts& p, const LossWeights& w, long step, long total_steps) {
  const std::pair<const char*, double> terms[] = {
      {"sds", p.sds}, {"sparsity", p.sparsity}, {"entropy", p.entropy}, {"reference", p.reference}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v)) throw TrainingError(std::string("non-finite loss term '") + name + "' at step " + std::to_string(step));
  WeightedTotal t;
  const double lam = cosine_schedule(step, total_steps, w.lambda_start, w.lambda_end);
  t.lambda_S = w.sparsity ? lam : 0.0;
  t.lambda_O = w.entropy ? lam : 0.0;
  t.lambda_R = w.lambda_R;
  t.value = w.sds * p.sds + t.lambda_S * p.sparsity + t.lambda_O * p.entropy + t.lambda_R * p.reference;
  return t;
}

}  // namespace gonerf
