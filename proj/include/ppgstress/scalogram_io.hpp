#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppgstress/model_io.hpp"
#include "ppgstress/scalogram.hpp"

namespace ppgstress {

// Scalogram tensor file, magic "SCLG":
//   "SCLG" | u32 version=1 | u32 count | u32 height=64 | u32 width=64
//   count * 64*64 float32 little-endian pixel blocks (row-major)
//   count label bytes (0/1 class id, 255 = unlabeled)

namespace detail {
constexpr uint32_t kScalogramVersion = 1;
constexpr uint8_t kNoLabel = 255;
}  // namespace detail

inline std::vector<uint8_t> serialize_images(const std::vector<ScalogramImage>& images) {
  std::vector<uint8_t> bytes;
  detail::ByteWriter w(bytes);
  for (char ch : {'S', 'C', 'L', 'G'}) w.u8(static_cast<uint8_t>(ch));
  w.u32(detail::kScalogramVersion);
  w.u32(static_cast<uint32_t>(images.size()));
  w.u32(kImageSize);
  w.u32(kImageSize);
  for (const auto& img : images) {
    if (img.pixels.size() != static_cast<std::size_t>(kImageSize) * kImageSize)
      throw std::runtime_error("serialize_images: image is not 64x64");
    for (float v : img.pixels) w.f32(v);
  }
  for (const auto& img : images)
    w.u8(img.label ? static_cast<uint8_t>(*img.label) : detail::kNoLabel);
  return bytes;
}

inline std::vector<ScalogramImage> deserialize_images(const std::vector<uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  char magic[4];
  for (char& ch : magic) ch = static_cast<char>(r.u8());
  if (std::memcmp(magic, "SCLG", 4) != 0)
    throw std::runtime_error("bad magic: not a scalogram file");
  const uint32_t version = r.u32();
  if (version != detail::kScalogramVersion)
    throw std::runtime_error("version mismatch: file version " + std::to_string(version) +
                             ", expected " + std::to_string(detail::kScalogramVersion));
  const uint32_t count = r.u32();
  const uint32_t height = r.u32();
  const uint32_t width = r.u32();
  if (height != kImageSize || width != kImageSize)
    throw std::runtime_error("unsupported scalogram size " + std::to_string(height) + "x" +
                             std::to_string(width) + ", expected 64x64");
  std::vector<ScalogramImage> images(count);
  for (auto& img : images)
    for (auto& v : img.pixels) v = r.f32();
  for (auto& img : images) {
    const uint8_t b = r.u8();
    if (b != detail::kNoLabel) img.label = static_cast<int>(b);
  }
  return images;
}

inline void save_images(const std::vector<ScalogramImage>& images, const std::string& path) {
  detail::write_file(path, serialize_images(images));
}

inline std::vector<ScalogramImage> load_images(const std::string& path) {
  return deserialize_images(detail::read_file(path));
}

/// 8-bit binary PGM render for visual inspection. Pixels are clamped to
/// [0,1] before scaling so augmented borders stay black.
inline void write_pgm(const ScalogramImage& img, const std::string& path) {
  std::vector<uint8_t> bytes;
  const std::string header =
      "P5\n" + std::to_string(kImageSize) + " " + std::to_string(kImageSize) + "\n255\n";
  bytes.insert(bytes.end(), header.begin(), header.end());
  for (float v : img.pixels) {
    const double x = std::min(1.0, std::max(0.0, static_cast<double>(v)));
    bytes.push_back(static_cast<uint8_t>(std::lround(x * 255.0)));
  }
  detail::write_file(path, bytes);
}

}  // namespace ppgstress
