#pragma once

#include <cctype>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "gonerf/compositor.hpp"
#include "gonerf/errors.hpp"
#include "gonerf/image.hpp"

namespace gonerf {

// Discrete diffusion schedule with scaled-linear betas:
// beta_t = (sqrt(b0) + (sqrt(b1) - sqrt(b0)) (t-1)/(T-1))^2, alpha_bar_t = prod (1 - beta).
class NoiseSchedule {
 public:
  explicit NoiseSchedule(int T = 1000, double beta_start = 0.00085, double beta_end = 0.012,
                         double t_min_frac = 0.02, double t_max_frac = 0.98)
      : T_(T), t_min_frac_(t_min_frac), t_max_frac_(t_max_frac) {
    if (T < 2) throw InvalidInput("NoiseSchedule: T must be >= 2");
    if (!(beta_start > 0.0 && beta_end > beta_start && beta_end < 1.0))
      throw InvalidInput("NoiseSchedule: need 0 < beta_start < beta_end < 1");
    if (!(t_min_frac >= 0.0 && t_min_frac < t_max_frac && t_max_frac <= 1.0))
      throw InvalidInput("NoiseSchedule: need 0 <= t_min_frac < t_max_frac <= 1");
    alpha_bar_.resize(T);
    double prod = 1.0;
    const double s0 = std::sqrt(beta_start), s1 = std::sqrt(beta_end);
    for (int t = 0; t < T; ++t) {
      const double s = s0 + (s1 - s0) * t / (T - 1);
      prod *= 1.0 - s * s;
      alpha_bar_[t] = prod;
    }
  }

  int T() const { return T_; }
  int t_min() const { return std::max(1, static_cast<int>(std::ceil(t_min_frac_ * T_))); }
  int t_max() const { return std::min(T_, static_cast<int>(std::floor(t_max_frac_ * T_))); }

  // t in [1, T].
  double alpha_bar(int t) const {
    if (t < 1 || t > T_) throw InvalidInput("NoiseSchedule: timestep out of range");
    return alpha_bar_[t - 1];
  }

  template <class Rng>
  int sample(Rng& rng) const {
    return std::uniform_int_distribution<int>(t_min(), t_max())(rng);
  }

 private:
  int T_;
  double t_min_frac_;
  double t_max_frac_;
  std::vector<double> alpha_bar_;
};

// Square window containing the mask bounding box scaled by `margin`, centered
// on it, shifted inward at image borders and clipped only when the square
// cannot fit. With an rng, the window is shifted randomly while still
// containing the mask bounding box.
inline PixelRect crop_window(const Mask& mask, double margin, std::mt19937_64* rng = nullptr) {
  if (!mask.any()) throw InvalidInput("make_crop: empty mask");
  if (!(margin >= 1.0)) throw InvalidInput("make_crop: margin must be >= 1");
  const PixelRect b = mask_bounds(mask);
  const int side = std::max(b.w, b.h) > 0 ? static_cast<int>(std::ceil(std::max(b.w, b.h) * margin - 1e-9)) : 1;
  const double cx = b.x + b.w / 2.0, cy = b.y + b.h / 2.0;
  auto place = [&](double center, int need_lo, int need_hi, int limit) {
    int start = static_cast<int>(std::floor(center - side / 2.0 + 0.5));
    if (rng && need_lo > need_hi - side) start = std::uniform_int_distribution<int>(need_hi - side, need_lo)(*rng);
    start = std::clamp(start, need_hi - side, need_lo);
    start = std::max(0, std::min(start, limit - side));
    return std::pair<int, int>(start, std::min(limit, start + side) - start);
  };
  const auto [x, w] = place(cx, b.x, b.x + b.w, mask.width);
  const auto [y, h] = place(cy, b.y, b.y + b.h, mask.height);
  return {x, y, w, h};
}

struct Crop {
  PixelRect window;
  Image image;  // native x native x 3
  Mask mask;    // native x native
};

inline Crop make_crop(const Image& image, const Mask& mask, double margin, int native,
                      std::mt19937_64* rng = nullptr) {
  Crop c;
  c.window = crop_window(mask, margin, rng);
  c.image = WindowResampler(c.window, native, native).gather(image);
  c.mask = resample_mask(mask, c.window, native, native);
  return c;
}

// Noise-prediction query. `noisy`, `masked_image` and `mask` are square crops
// at the provider's native resolution.
struct GuidanceRequest {
  Image noisy;
  int timestep = 1;
  std::string prompt;
  Image masked_image;
  Mask mask;
  double guidance_scale = 7.5;
  std::uint64_t seed = 0;

  // In-process side channel for oracle providers; never sent over the wire.
  struct Oracle {
    int view_id = -1;
    BackgroundMode background = BackgroundMode::scene;
    PixelRect window;
    int full_width = 0;
    int full_height = 0;
    const Image* clean = nullptr;  // the crop I before noising
    const Image* noise = nullptr;  // the epsilon that was added
  } oracle;

  void validate() const {
    if (noisy.width != noisy.height || noisy.channels != 3) throw ContractViolation("guidance: crop must be square RGB");
    if (!masked_image.same_shape(noisy) || mask.width != noisy.width || mask.height != noisy.height)
      throw ContractViolation("guidance: crop shapes disagree");
    if (!mask.any()) throw ContractViolation("guidance: empty mask");
    if (prompt.empty()) throw ContractViolation("guidance: empty prompt");
  }
};

class NoiseProvider {
 public:
  virtual ~NoiseProvider() = default;
  virtual std::string id() const = 0;
  virtual int native_resolution() const = 0;
  // Returns the predicted noise, same shape as request.noisy.
  virtual Image predict(const GuidanceRequest& request) = 0;
};

using TimestepWeight = std::function<double(int)>;

struct GuidanceSettings {
  std::string prompt;
  double guidance_scale = 7.5;
  double crop_margin = 1.2;
  bool random_crop = true;
  TimestepWeight weight = [](int) { return 1.0; };
};

struct SdsGradient {
  Image grad;  // dL/dI on the full image; zero outside the window
  double weight = 1.0;
  int timestep = 0;
  std::string provider_id;
  PixelRect window;
  double norm = 0.0;  // L2 norm of the crop residual (eps_hat - eps)
};

// Inpainting score distillation on the composite of `render`. The provider
// prediction is treated as a constant.
inline SdsGradient sds_step(const RenderOutput& render, const GuidanceSettings& gs, const NoiseSchedule& schedule,
                            NoiseProvider& provider, std::uint64_t rng_seed) {
  std::mt19937_64 rng(rng_seed);
  const int native = provider.native_resolution();
  const Crop crop = make_crop(render.I, render.M, gs.crop_margin, native, gs.random_crop ? &rng : nullptr);
  const int t = schedule.sample(rng);
  const double ab = schedule.alpha_bar(t);
  const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);

  Image eps(native, native, 3);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (float& v : eps.data) v = static_cast<float>(normal(rng));

  GuidanceRequest req;
  req.noisy = Image(native, native, 3);
  for (std::size_t i = 0; i < req.noisy.data.size(); ++i)
    req.noisy.data[i] = static_cast<float>(sa * crop.image.data[i] + sn * eps.data[i]);
  req.timestep = t;
  req.prompt = gs.prompt;
  req.masked_image = crop.image;
  for (std::size_t p = 0; p < crop.mask.data.size(); ++p)
    if (crop.mask.data[p])
      for (int c = 0; c < 3; ++c) req.masked_image.data[p * 3 + c] = 0.0f;
  req.mask = crop.mask;
  req.guidance_scale = gs.guidance_scale;
  req.seed = rng_seed;
  req.oracle = {render.view_id, render.background_mode, crop.window, render.I.width, render.I.height, &crop.image,
                &eps};
  req.validate();

  const Image eps_hat = provider.predict(req);
  if (!eps_hat.same_shape(eps)) throw ProviderError("provider returned a wrongly shaped prediction", false, t, rng_seed);

  SdsGradient out;
  out.weight = gs.weight(t);
  out.timestep = t;
  out.provider_id = provider.id();
  out.window = crop.window;
  Image residual(native, native, 3);
  double sq = 0.0;
  for (std::size_t i = 0; i < residual.data.size(); ++i) {
    const double r = static_cast<double>(eps_hat.data[i]) - eps.data[i];
    if (!std::isfinite(r)) throw ProviderError("provider returned non-finite values", true, t, rng_seed);
    sq += r * r;
    residual.data[i] = static_cast<float>(out.weight * r);
  }
  out.norm = std::sqrt(sq);
  out.grad = WindowResampler(crop.window, native, native).scatter(residual, render.I.width, render.I.height);
  return out;
}

// Test oracle standing in for a pretrained inpainting model:
// eps_hat = eps + eta * sqrt(alpha_bar_t) * (I - I_target) * M, where I_target
// is the target composite of the requested view cropped with the same window.
class TargetOracleProvider : public NoiseProvider {
 public:
  using TargetFn = std::function<const Image&(int view_id, BackgroundMode background)>;

  TargetOracleProvider(TargetFn target, double eta, NoiseSchedule schedule, int native = 64)
      : target_(std::move(target)), eta_(eta), schedule_(std::move(schedule)), native_(native) {}

  std::string id() const override { return "target-oracle"; }
  int native_resolution() const override { return native_; }

  Image predict(const GuidanceRequest& req) override {
    const auto& o = req.oracle;
    if (!o.clean || !o.noise) throw ProviderError("target-oracle needs the in-process oracle channel", false, req.timestep, req.seed);
    const Image& full = target_(o.view_id, o.background);
    if (full.width != o.full_width || full.height != o.full_height)
      throw ContractViolation("target-oracle: target resolution differs from the render");
    const Image target = WindowResampler(o.window, req.noisy.width, req.noisy.height).gather(full);
    const double scale = eta_ * std::sqrt(schedule_.alpha_bar(req.timestep));
    Image eps_hat = *o.noise;
    for (std::size_t p = 0; p < req.mask.data.size(); ++p) {
      if (!req.mask.data[p]) continue;
      for (int c = 0; c < 3; ++c) {
        const std::size_t i = p * 3 + c;
        eps_hat.data[i] = static_cast<float>(eps_hat.data[i] + scale * (o.clean->data[i] - target.data[i]));
      }
    }
    return eps_hat;
  }

 private:
  TargetFn target_;
  double eta_;
  NoiseSchedule schedule_;
  int native_;
};

// Wire-compatible stub: the ideal denoiser for a clean image that equals the
// unmasked context outside the mask and a constant color inside it. The color
// is looked up from the first color word of the prompt, else hashed from it.
// eps_hat = (noisy - sqrt(ab) x0) / sqrt(1 - ab).
class ColorPriorProvider : public NoiseProvider {
 public:
  explicit ColorPriorProvider(NoiseSchedule schedule, int native = 64)
      : schedule_(std::move(schedule)), native_(native) {}

  std::string id() const override { return "color-prior"; }
  int native_resolution() const override { return native_; }

  static Vec3 prompt_color(const std::string& prompt) {
    static const std::vector<std::pair<std::string, Vec3>> named = {
        {"red", {0.85, 0.15, 0.12}},    {"green", {0.2, 0.7, 0.25}},   {"blue", {0.15, 0.3, 0.85}},
        {"yellow", {0.9, 0.8, 0.15}},   {"orange", {0.95, 0.5, 0.1}},  {"purple", {0.55, 0.2, 0.7}},
        {"white", {0.95, 0.95, 0.95}},  {"black", {0.05, 0.05, 0.05}}, {"brown", {0.45, 0.3, 0.15}},
        {"gray", {0.5, 0.5, 0.5}},      {"grey", {0.5, 0.5, 0.5}},     {"pink", {0.95, 0.55, 0.7}}};
    std::string lower = prompt;
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::size_t best = std::string::npos;
    Vec3 color(0.5, 0.5, 0.5);
    for (const auto& [word, rgb] : named) {
      const std::size_t at = lower.find(word);
      if (at != std::string::npos && at < best) {
        best = at;
        color = rgb;
      }
    }
    if (best != std::string::npos) return color;
    const std::uint64_t h = std::hash<std::string>{}(lower);
    return Vec3(0.2 + 0.6 * ((h >> 8) & 0xff) / 255.0, 0.2 + 0.6 * ((h >> 16) & 0xff) / 255.0,
                0.2 + 0.6 * ((h >> 24) & 0xff) / 255.0);
  }

  Image predict(const GuidanceRequest& req) override {
    const double ab = schedule_.alpha_bar(req.timestep);
    const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
    const Vec3 color = prompt_color(req.prompt);
    Image eps_hat(req.noisy.width, req.noisy.height, 3);
    for (std::size_t p = 0; p < req.mask.data.size(); ++p) {
      for (int c = 0; c < 3; ++c) {
        const std::size_t i = p * 3 + c;
        const double x0 = req.mask.data[p] ? color[c] : req.masked_image.data[i];
        eps_hat.data[i] = static_cast<float>((req.noisy.data[i] - sa * x0) / sn);
      }
    }
    return eps_hat;
  }

 private:
  NoiseSchedule schedule_;
  int native_;
};

}  // namespace gonerf
