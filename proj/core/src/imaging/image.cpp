#include "stylespace/imaging/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace stylespace {
namespace {

// sRGB primaries to XYZ, D65. The white point is taken as the row sums so that
// sRGB white maps to a = b = 0 exactly.
constexpr double kRgbToXyz[3][3] = {{0.4124564, 0.3575761, 0.1804375},
                                    {0.2126729, 0.7151522, 0.0721750},
                                    {0.0193339, 0.1191920, 0.9503041}};

struct XyzTables {
  double white[3];
  double inverse[3][3];
};

const XyzTables& xyz_tables() {
  static const XyzTables tables = [] {
    XyzTables t{};
    for (int r = 0; r < 3; ++r) t.white[r] = kRgbToXyz[r][0] + kRgbToXyz[r][1] + kRgbToXyz[r][2];
    const auto& m = kRgbToXyz;
    const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                       m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                       m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    t.inverse[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    t.inverse[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
    t.inverse[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
    t.inverse[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
    t.inverse[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
    t.inverse[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
    t.inverse[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
    t.inverse[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
    t.inverse[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
    return t;
  }();
  return tables;
}

constexpr double kDelta = 6.0 / 29.0;

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double v) {
  return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) {
  return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3 * kDelta * kDelta) + 4.0 / 29.0;
}

double lab_finv(double f) {
  return f > kDelta ? f * f * f : 3 * kDelta * kDelta * (f - 4.0 / 29.0);
}

bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::size_t pooling_factor(std::size_t width, std::size_t height, std::size_t size) {
  if (width != height) throw ShapeError("downscale_to: source must be square");
  if (size == 0 || width % size != 0 || !is_power_of_two(width / size)) {
    throw ShapeError("downscale_to: " + std::to_string(width) + " -> " + std::to_string(size) +
                     " is not a power-of-two reduction");
  }
  return width / size;
}

}  // namespace

Lab srgb_to_lab(double r, double g, double b) {
  const XyzTables& t = xyz_tables();
  const double lin[3] = {srgb_to_linear(r / 255.0), srgb_to_linear(g / 255.0),
                         srgb_to_linear(b / 255.0)};
  double xyz[3];
  for (int i = 0; i < 3; ++i) {
    xyz[i] = (kRgbToXyz[i][0] * lin[0] + kRgbToXyz[i][1] * lin[1] + kRgbToXyz[i][2] * lin[2]) /
             t.white[i];
  }
  const double fx = lab_f(xyz[0]), fy = lab_f(xyz[1]), fz = lab_f(xyz[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

std::array<double, 3> lab_to_srgb(const Lab& lab) {
  const XyzTables& t = xyz_tables();
  const double fy = (lab.l + 16.0) / 116.0;
  const double fx = fy + lab.a / 500.0;
  const double fz = fy - lab.b / 200.0;
  const double xyz[3] = {lab_finv(fx) * t.white[0], lab_finv(fy) * t.white[1],
                         lab_finv(fz) * t.white[2]};
  std::array<double, 3> rgb{};
  for (int i = 0; i < 3; ++i) {
    const double lin =
        t.inverse[i][0] * xyz[0] + t.inverse[i][1] * xyz[1] + t.inverse[i][2] * xyz[2];
    rgb[i] = 255.0 * linear_to_srgb(lin);
  }
  return rgb;
}

Lab normalize_lab(const Lab& lab) { return {lab.l / 50.0 - 1.0, lab.a / 110.0, lab.b / 110.0}; }

Lab denormalize_lab(const Lab& n) { return {(n.l + 1.0) * 50.0, n.a * 110.0, n.b * 110.0}; }

ImageLab rgb_to_lab(const ImageRGB& img) {
  ImageLab out(img.width, img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::uint8_t* p = img.at(x, y);
      const Lab n = normalize_lab(srgb_to_lab(p[0], p[1], p[2]));
      out.at(0, x, y) = static_cast<float>(n.l);
      out.at(1, x, y) = static_cast<float>(n.a);
      out.at(2, x, y) = static_cast<float>(n.b);
    }
  }
  return out;
}

ImageRGB lab_to_rgb(const ImageLab& img) {
  ImageRGB out(img.width, img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const auto rgb = lab_to_srgb(denormalize_lab({img.at(0, x, y), img.at(1, x, y), img.at(2, x, y)}));
      std::uint8_t* p = out.at(x, y);
      for (int c = 0; c < 3; ++c) {
        const double v = std::isfinite(rgb[c]) ? rgb[c] : 0.0;
        p[c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

ImageRGB downscale_to(const ImageRGB& img, std::size_t size) {
  const std::size_t f = pooling_factor(img.width, img.height, size);
  if (f == 1) return img;
  // Averaging the f x f block once equals repeated exact 2x2 averaging.
  ImageRGB out(size, size);
  const double inv = 1.0 / static_cast<double>(f * f);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (std::size_t dy = 0; dy < f; ++dy) {
          for (std::size_t dx = 0; dx < f; ++dx) acc += img.at(x * f + dx, y * f + dy)[c];
        }
        out.at(x, y)[c] = static_cast<std::uint8_t>(std::lround(acc * inv));
      }
    }
  }
  return out;
}

ImageLab downscale_to(const ImageLab& img, std::size_t size) {
  pooling_factor(img.width, img.height, size);
  ImageLab cur = img;
  while (cur.width > size) {
    ImageLab next(cur.width / 2, cur.height / 2);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < next.height; ++y) {
        for (std::size_t x = 0; x < next.width; ++x) {
          next.at(c, x, y) = 0.25f * (cur.at(c, 2 * x, 2 * y) + cur.at(c, 2 * x + 1, 2 * y) +
                                      cur.at(c, 2 * x, 2 * y + 1) + cur.at(c, 2 * x + 1, 2 * y + 1));
        }
      }
    }
    cur = std::move(next);
  }
  return cur;
}

std::size_t PatchSpec::scaled_size(std::size_t resolution) const {
  return static_cast<std::size_t>(std::lround(static_cast<double>(resolution) * scale));
}

void PatchSpec::validate(std::size_t resolution) const {
  if (count < 1) throw ConfigError("patch spec: count must be >= 1");
  if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("patch spec: scale must be in (0, 1]");
  const std::size_t scaled = scaled_size(resolution);
  if (patch_size == 0 || patch_size > scaled) {
    throw ShapeError("patch spec: patch size " + std::to_string(patch_size) +
                     " does not fit scaled image of " + std::to_string(scaled) + " px");
  }
}

std::array<PatchSpec, 3> default_consortium_specs(std::size_t resolution) {
  const std::size_t p = resolution / 4;
  return {PatchSpec{0.25, p, 1}, PatchSpec{0.5, p, 4}, PatchSpec{1.0, p, 16}};
}

std::vector<PatchOrigin> sample_patch_origins(std::size_t extent, std::size_t patch_size,
                                              std::size_t count, RngStream& rng) {
  if (patch_size == 0 || patch_size > extent) {
    throw ShapeError("patch of " + std::to_string(patch_size) + " px does not fit " +
                     std::to_string(extent) + " px image");
  }
  std::vector<PatchOrigin> out(count);
  const std::size_t span = extent - patch_size + 1;
  for (auto& o : out) {
    o.y = rng.index(span);
    o.x = rng.index(span);
  }
  return out;
}

std::vector<Patch> extract_random_patches(const ImageLab& img, const PatchSpec& spec,
                                          RngStream& rng) {
  if (img.width != img.height) throw ShapeError("extract_random_patches: image must be square");
  spec.validate(img.width);
  const ImageLab scaled = downscale_to(img, spec.scaled_size(img.width));
  std::vector<Patch> out;
  for (const PatchOrigin& o : sample_patch_origins(scaled.width, spec.patch_size, spec.count, rng)) {
    Patch p{o, ImageLab(spec.patch_size, spec.patch_size)};
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < spec.patch_size; ++y) {
        for (std::size_t x = 0; x < spec.patch_size; ++x) {
          p.image.at(c, x, y) = scaled.at(c, o.x + x, o.y + y);
        }
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

ImageRGB compose_grid(std::span<const ImageRGB> images, std::size_t rows, std::size_t cols) {
  if (images.size() != rows * cols) {
    throw ShapeError("compose_grid: " + std::to_string(images.size()) + " images for a " +
                     std::to_string(rows) + "x" + std::to_string(cols) + " grid");
  }
  if (images.empty()) return {};
  const std::size_t w = images[0].width, h = images[0].height;
  for (const auto& im : images) {
    if (im.width != w || im.height != h) throw ShapeError("compose_grid: image sizes differ");
  }
  ImageRGB out(w * cols, h * rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const ImageRGB& src = images[r * cols + c];
      for (std::size_t y = 0; y < h; ++y) {
        std::copy_n(src.at(0, y), w * 3, out.at(c * w, r * h + y));
      }
    }
  }
  return out;
}

bool looks_like_png(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

std::vector<std::uint8_t> encode_png(const ImageRGB& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("png encode: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("png encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

ImageRGB decode_png(std::span<const std::uint8_t> bytes) {
  if (!looks_like_png(bytes)) throw FormatError("not a PNG file");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw FormatError(std::string("png decode: ") + image.message);
  }
  image.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgba.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError(std::string("png decode: ") + image.message);
  }
  ImageRGB out(image.width, image.height);
  for (std::size_t i = 0; i < out.width * out.height; ++i) {
    std::copy_n(rgba.data() + 4 * i, 3, out.pixels.data() + 3 * i);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const ImageRGB& img) {
  const auto bytes = encode_png(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ImageRGB read_png(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot read " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                        std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template <typename T>
Tensor<T> images_to_tensor(std::span<const ImageLab> images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const std::size_t w = images[0].width, h = images[0].height;
  Tensor<T> out(Shape{images.size(), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].width != w || images[n].height != h) {
      throw ShapeError("images_to_tensor: mixed image sizes");
    }
    std::copy(images[n].channels.begin(), images[n].channels.end(), out.raw() + n * 3 * h * w);
  }
  return out;
}

template <typename T>
ImageLab tensor_to_image(const Tensor<T>& batch, std::size_t index) {
  if (batch.rank() != 4 || batch.dim(1) != 3 || index >= batch.dim(0)) {
    throw ShapeError("tensor_to_image: expected [N,3,H,W] batch, got " + shape_string(batch.shape()));
  }
  ImageLab out(batch.dim(3), batch.dim(2));
  const T* src = batch.raw() + index * out.channels.size();
  for (std::size_t i = 0; i < out.channels.size(); ++i) out.channels[i] = static_cast<float>(src[i]);
  return out;
}

template Tensor<float> images_to_tensor<float>(std::span<const ImageLab>);
template Tensor<double> images_to_tensor<double>(std::span<const ImageLab>);
template ImageLab tensor_to_image<float>(const Tensor<float>&, std::size_t);
template ImageLab tensor_to_image<double>(const Tensor<double>&, std::size_t);

}  // namespace stylespace
