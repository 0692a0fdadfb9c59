#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "stylespace/tensor/rng.hpp"
#include "stylespace/tensor/tensor.hpp"

namespace stylespace {

/// 8-bit sRGB image, interleaved RGB rows.
struct ImageRGB {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  ImageRGB() = default;
  ImageRGB(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3, 0) {}

  std::uint8_t* at(std::size_t x, std::size_t y) { return pixels.data() + (y * width + x) * 3; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const {
    return pixels.data() + (y * width + x) * 3;
  }
  bool operator==(const ImageRGB&) const = default;
};

/// Planar L, a, b channels in network range: L/50 - 1, a/110, b/110.
struct ImageLab {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> channels;  // [3][height][width]

  ImageLab() = default;
  ImageLab(std::size_t w, std::size_t h) : width(w), height(h), channels(3 * w * h, 0.0f) {}

  float& at(std::size_t c, std::size_t x, std::size_t y) {
    return channels[(c * height + y) * width + x];
  }
  float at(std::size_t c, std::size_t x, std::size_t y) const {
    return channels[(c * height + y) * width + x];
  }
};

struct Lab {
  double l = 0;
  double a = 0;
  double b = 0;
};

/// CIE L*a*b* (D65) of an sRGB triple given in [0, 255].
Lab srgb_to_lab(double r, double g, double b);
/// Inverse of srgb_to_lab without clamping or rounding; result in [0, 255]
/// for in-gamut colours.
std::array<double, 3> lab_to_srgb(const Lab& lab);

Lab normalize_lab(const Lab& lab);
Lab denormalize_lab(const Lab& normalized);

ImageLab rgb_to_lab(const ImageRGB& img);
/// Clamps to the sRGB gamut and rounds to 8 bits.
ImageRGB lab_to_rgb(const ImageLab& img);

/// Repeated 2x2 average pooling down to `size` x `size`. The source must be
/// square and a power-of-two multiple of the target.
ImageRGB downscale_to(const ImageRGB& img, std::size_t size);
ImageLab downscale_to(const ImageLab& img, std::size_t size);

/// One member of the discriminator consortium: patches of `patch_size` px cut
/// from the image after scaling it by `scale`.
struct PatchSpec {
  double scale = 1.0;
  std::size_t patch_size = 0;
  std::size_t count = 1;

  std::size_t scaled_size(std::size_t resolution) const;
  void validate(std::size_t resolution) const;
};

/// Three-member pyramid: patch size is a quarter of the resolution, taken from
/// the quarter-scale image (x1), the half-scale image (x4) and the original (x16).
std::array<PatchSpec, 3> default_consortium_specs(std::size_t resolution);

struct PatchOrigin {
  std::size_t y = 0;
  std::size_t x = 0;
};

/// Uniform top-left corners for patches fully inside an extent x extent image.
std::vector<PatchOrigin> sample_patch_origins(std::size_t extent, std::size_t patch_size,
                                              std::size_t count, RngStream& rng);

struct Patch {
  PatchOrigin origin;
  ImageLab image;
};

std::vector<Patch> extract_random_patches(const ImageLab& img, const PatchSpec& spec,
                                          RngStream& rng);

/// Row-major tiling of equally sized images.
ImageRGB compose_grid(std::span<const ImageRGB> images, std::size_t rows, std::size_t cols);

std::vector<std::uint8_t> encode_png(const ImageRGB& img);
/// Decodes any PNG colour type to 8-bit RGB; alpha is dropped.
ImageRGB decode_png(std::span<const std::uint8_t> bytes);
bool looks_like_png(std::span<const std::uint8_t> bytes);

void write_png(const std::filesystem::path& path, const ImageRGB& img);
ImageRGB read_png(const std::filesystem::path& path);

template <typename T>
Tensor<T> images_to_tensor(std::span<const ImageLab> images);
template <typename T>
ImageLab tensor_to_image(const Tensor<T>& batch, std::size_t index);

}  // namespace stylespace
