#pragma once

#include <array>

#include "gonerf/image.hpp"

namespace gonerf {

// Real spherical harmonics basis of a unit direction, 4 bands (16 values).
inline std::array<float, 16> sh_encode_deg4(const Vec3& dir) {
  const double x = dir.x(), y = dir.y(), z = dir.z();
  const double xx = x * x, yy = y * y, zz = z * z;
  const double xy = x * y, yz = y * z, xz = x * z;
  std::array<float, 16> o{};
  o[0] = 0.28209479177387814f;
  o[1] = static_cast<float>(-0.48860251190291987 * y);
  o[2] = static_cast<float>(0.48860251190291987 * z);
  o[3] = static_cast<float>(-0.48860251190291987 * x);
  o[4] = static_cast<float>(1.0925484305920792 * xy);
  o[5] = static_cast<float>(-1.0925484305920792 * yz);
  o[6] = static_cast<float>(0.94617469575755997 * zz - 0.31539156525251999);
  o[7] = static_cast<float>(-1.0925484305920792 * xz);
  o[8] = static_cast<float>(0.54627421529603959 * (xx - yy));
  o[9] = static_cast<float>(0.59004358992664352 * y * (-3.0 * xx + yy));
  o[10] = static_cast<float>(2.8906114426405538 * xy * z);
  o[11] = static_cast<float>(0.45704579946446572 * y * (1.0 - 5.0 * zz));
  o[12] = static_cast<float>(0.3731763325901154 * z * (5.0 * zz - 3.0));
  o[13] = static_cast<float>(0.45704579946446572 * x * (1.0 - 5.0 * zz));
  o[14] = static_cast<float>(1.4453057213202769 * z * (xx - yy));
  o[15] = static_cast<float>(0.59004358992664352 * x * (-xx + 3.0 * yy));
  return o;
}

}  // namespace gonerf
