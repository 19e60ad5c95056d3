#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "gonerf/errors.hpp"
#include "gonerf/image.hpp"

namespace gonerf::png {

inline std::uint8_t to_u8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// Encodes a 1- or 3-channel float image in [0,1] as an 8-bit PNG.
inline std::vector<std::uint8_t> encode8(const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw InvalidInput("png::encode8: expected 1 or 3 channels, got " + std::to_string(img.channels));
  std::vector<std::uint8_t> bytes(img.data.size());
  std::transform(img.data.begin(), img.data.end(), bytes.begin(), to_u8);

  png_image pimg{};
  pimg.version = PNG_IMAGE_VERSION;
  pimg.width = static_cast<png_uint_32>(img.width);
  pimg.height = static_cast<png_uint_32>(img.height);
  pimg.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pimg, nullptr, &size, 0, bytes.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + pimg.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&pimg, out.data(), &size, 0, bytes.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + pimg.message);
  out.resize(size);
  return out;
}

// 16-bit encode of values mapped through (v + offset) / scale into [0,1].
inline std::vector<std::uint8_t> encode16(const Image& img, double offset, double scale) {
  if (img.channels != 1 && img.channels != 3)
    throw InvalidInput("png::encode16: expected 1 or 3 channels");
  std::vector<std::uint16_t> words(img.data.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    const double u = std::clamp((img.data[i] + offset) / scale, 0.0, 1.0);
    words[i] = static_cast<std::uint16_t>(std::lround(u * 65535.0));
  }
  png_image pimg{};
  pimg.version = PNG_IMAGE_VERSION;
  pimg.width = static_cast<png_uint_32>(img.width);
  pimg.height = static_cast<png_uint_32>(img.height);
  pimg.format = img.channels == 3 ? PNG_FORMAT_LINEAR_RGB : PNG_FORMAT_LINEAR_Y;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pimg, nullptr, &size, 0, words.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + pimg.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&pimg, out.data(), &size, 0, words.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + pimg.message);
  out.resize(size);
  return out;
}

// Decodes an 8-bit PNG into a float image with `channels` (1 or 3) channels.
inline Image decode8(const std::vector<std::uint8_t>& bytes, int channels = 3) {
  png_image pimg{};
  pimg.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pimg, bytes.data(), bytes.size()))
    throw IoError(std::string("png decode failed: ") + pimg.message);
  pimg.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(pimg));
  if (!png_image_finish_read(&pimg, nullptr, buf.data(), 0, nullptr))
    throw IoError(std::string("png decode failed: ") + pimg.message);
  Image out(static_cast<int>(pimg.width), static_cast<int>(pimg.height), channels);
  for (std::size_t i = 0; i < buf.size(); ++i) out.data[i] = buf[i] / 255.0f;
  return out;
}

// Inverse of encode16.
inline Image decode16(const std::vector<std::uint8_t>& bytes, int channels, double offset,
                      double scale) {
  png_image pimg{};
  pimg.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pimg, bytes.data(), bytes.size()))
    throw IoError(std::string("png decode failed: ") + pimg.message);
  pimg.format = channels == 3 ? PNG_FORMAT_LINEAR_RGB : PNG_FORMAT_LINEAR_Y;
  std::vector<std::uint16_t> buf(PNG_IMAGE_SIZE(pimg) / 2);
  if (!png_image_finish_read(&pimg, nullptr, buf.data(), 0, nullptr))
    throw IoError(std::string("png decode failed: ") + pimg.message);
  Image out(static_cast<int>(pimg.width), static_cast<int>(pimg.height), channels);
  for (std::size_t i = 0; i < buf.size(); ++i)
    out.data[i] = static_cast<float>(buf[i] / 65535.0 * scale - offset);
  return out;
}

inline Image mask_image(const Mask& m) {
  Image out(m.width, m.height, 1);
  for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = m.data[i] ? 1.0f : 0.0f;
  return out;
}

inline Mask image_mask(const Image& img) {
  Mask out(img.width, img.height);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = img.data[i * img.channels] > 0.5f ? 1 : 0;
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes to a temporary sibling and renames, so readers never observe a
// partially written file.
inline void write_file_atomic(const std::filesystem::path& path, const void* data,
                              std::size_t size) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp + " -> " + path.string() + ": " + ec.message());
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  const auto bytes = encode8(img);
  write_file_atomic(path, bytes.data(), bytes.size());
}

inline Image read_png(const std::filesystem::path& path, int channels = 3) {
  return decode8(read_file(path), channels);
}

}  // namespace gonerf::png
