#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "gonerf/errors.hpp"

namespace gonerf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Row-major, channel-interleaved float image.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  bool empty() const { return data.empty(); }

  float& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float* pixel(std::size_t i) { return data.data() + i * channels; }
  const float* pixel(std::size_t i) const { return data.data() + i * channels; }

  Vec3 rgb(std::size_t i) const {
    const float* p = pixel(i);
    return {p[0], p[1], p[2]};
  }
  void set_rgb(std::size_t i, const Vec3& v) {
    float* p = pixel(i);
    p[0] = static_cast<float>(v.x());
    p[1] = static_cast<float>(v.y());
    p[2] = static_cast<float>(v.z());
  }

  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

// Binary mask, one byte per pixel (0 or 1).
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
  }
  bool any() const { return count() > 0; }
};

// Integer pixel rectangle [x, x+w) x [y, y+h).
struct PixelRect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool contains(int px, int py) const { return px >= x && px < x + w && py >= y && py < y + h; }
  bool operator==(const PixelRect&) const = default;
};

// Tight bounding rectangle of the set pixels. Empty rect when the mask is empty.
inline PixelRect mask_bounds(const Mask& m) {
  int x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (m.at(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  }
  if (x1 < 0) return {};
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

inline Image crop_image(const Image& img, const PixelRect& r) {
  Image out(r.w, r.h, img.channels);
  for (int y = 0; y < r.h; ++y)
    for (int x = 0; x < r.w; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(r.x + x, r.y + y, c);
  return out;
}

// Square dilation of a mask by `radius` pixels (Chebyshev distance).
inline Mask dilate(const Mask& m, int radius) {
  Mask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx >= 0 && yy >= 0 && xx < m.width && yy < m.height) out.at(xx, yy) = 1;
        }
      }
    }
  }
  return out;
}

// Bilinear resampling of a source window onto an out_w x out_h grid
// (pixel-center aligned, edge clamped). Stored as an explicit sparse linear
// operator so the adjoint is exact.
class WindowResampler {
 public:
  WindowResampler(const PixelRect& window, int out_w, int out_h)
      : window_(window), out_w_(out_w), out_h_(out_h) {
    if (window.w <= 0 || window.h <= 0 || out_w <= 0 || out_h <= 0)
      throw InvalidInput("WindowResampler: empty window or output size");
    taps_.resize(static_cast<std::size_t>(out_w) * out_h);
    const double sx = static_cast<double>(window.w) / out_w;
    const double sy = static_cast<double>(window.h) / out_h;
    for (int oy = 0; oy < out_h; ++oy) {
      const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, window.h - 1.0);
      const int y0 = static_cast<int>(std::floor(fy));
      const int y1 = std::min(y0 + 1, window.h - 1);
      const double wy = fy - y0;
      for (int ox = 0; ox < out_w; ++ox) {
        const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, window.w - 1.0);
        const int x0 = static_cast<int>(std::floor(fx));
        const int x1 = std::min(x0 + 1, window.w - 1);
        const double wx = fx - x0;
        Taps& t = taps_[static_cast<std::size_t>(oy) * out_w + ox];
        t.x = {x0, x1, x0, x1};
        t.y = {y0, y0, y1, y1};
        t.w = {(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy};
      }
    }
  }

  const PixelRect& window() const { return window_; }
  int out_width() const { return out_w_; }
  int out_height() const { return out_h_; }

  // Window of `src` -> out grid.
  Image gather(const Image& src) const {
    Image out(out_w_, out_h_, src.channels);
    for (std::size_t i = 0; i < taps_.size(); ++i) {
      const Taps& t = taps_[i];
      for (int c = 0; c < src.channels; ++c) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k)
          acc += t.w[k] * src.at(window_.x + t.x[k], window_.y + t.y[k], c);
        out.pixel(i)[c] = static_cast<float>(acc);
      }
    }
    return out;
  }

  // Adjoint of gather: scatters an out-grid signal back into a full-size
  // image of the given dimensions (zero outside the window).
  Image scatter(const Image& grid, int full_w, int full_h) const {
    Image out(full_w, full_h, grid.channels, 0.0f);
    std::vector<double> acc(static_cast<std::size_t>(full_w) * full_h * grid.channels, 0.0);
    for (std::size_t i = 0; i < taps_.size(); ++i) {
      const Taps& t = taps_[i];
      for (int c = 0; c < grid.channels; ++c) {
        const double g = grid.pixel(i)[c];
        for (int k = 0; k < 4; ++k) {
          const std::size_t idx =
              (static_cast<std::size_t>(window_.y + t.y[k]) * full_w + window_.x + t.x[k]) *
                  grid.channels +
              c;
          acc[idx] += t.w[k] * g;
        }
      }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(acc[i]);
    return out;
  }

 private:
  struct Taps {
    std::array<int, 4> x{};
    std::array<int, 4> y{};
    std::array<double, 4> w{};
  };
  PixelRect window_;
  int out_w_;
  int out_h_;
  std::vector<Taps> taps_;
};

// Nearest-neighbour mask resample of a window (used for the provider mask).
inline Mask resample_mask(const Mask& m, const PixelRect& window, int out_w, int out_h) {
  Mask out(out_w, out_h);
  for (int oy = 0; oy < out_h; ++oy) {
    const int sy = std::min(window.h - 1, static_cast<int>((oy + 0.5) * window.h / out_h));
    for (int ox = 0; ox < out_w; ++ox) {
      const int sx = std::min(window.w - 1, static_cast<int>((ox + 0.5) * window.w / out_w));
      out.at(ox, oy) = m.at(window.x + sx, window.y + sy);
    }
  }
  return out;
}

// Box-filter downsample by an integer factor (previews, thumbnails).
inline Image downsample(const Image& img, int factor) {
  if (factor <= 1) return img;
  const int w = std::max(1, img.width / factor), h = std::max(1, img.height / factor);
  Image out(w, h, img.channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        int n = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) {
            const int sx = x * factor + dx, sy = y * factor + dy;
            if (sx < img.width && sy < img.height) {
              acc += img.at(sx, sy, c);
              ++n;
            }
          }
        out.at(x, y, c) = static_cast<float>(acc / n);
      }
    }
  }
  return out;
}

}  // namespace gonerf
