#include "stylespace/dataset/corpus.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace stylespace {
namespace {

constexpr double kPi = std::numbers::pi;

struct Rgb {
  double r = 0, g = 0, b = 0;
};

Rgb hsv(double hue_deg, double sat, double val) {
  double h = std::fmod(hue_deg, 360.0);
  if (h < 0) h += 360.0;
  const double c = val * sat;
  const double x = c * (1 - std::abs(std::fmod(h / 60.0, 2.0) - 1));
  const double m = val - c;
  Rgb p;
  switch (static_cast<int>(h / 60.0)) {
    case 0: p = {c, x, 0}; break;
    case 1: p = {x, c, 0}; break;
    case 2: p = {0, c, x}; break;
    case 3: p = {0, x, c}; break;
    case 4: p = {x, 0, c}; break;
    default: p = {c, 0, x}; break;
  }
  return {p.r + m, p.g + m, p.b + m};
}

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

Rgb scaled(const Rgb& a, double f) { return {a.r * f, a.g * f, a.b * f}; }

struct Palette {
  Rgb background, skin, hair, eyes, line;
};

Palette make_palette(double hue_rotation) {
  // Saturation ramps in over the first 0.6 rad so a zero rotation is grey.
  const double sat = std::min(1.0, hue_rotation / 0.6);
  const double rot = hue_rotation * 180.0 / kPi;
  return {hsv(200 + rot, 0.40 * sat, 0.85), hsv(25 + rot, 0.35 * sat, 0.96),
          hsv(280 + rot, 0.70 * sat, 0.55), hsv(140 + rot, 0.85 * sat, 0.65),
          hsv(0 + rot, 0.30 * sat, 0.12)};
}

struct HairShape {
  double phase;
  double fringe_count;
  double length;
  double volume;
};

HairShape hair_shape(std::uint32_t seed) {
  RngStream rng(seed, stream_id("hair"));
  return {rng.uniform(0, 2 * kPi), static_cast<double>(2 + rng.index(3)), rng.uniform(0.0, 0.22),
          rng.uniform(1.15, 1.32)};
}

// Normalized elliptical radius; 1 on the boundary.
double ellipse_r(double u, double v, double cx, double cy, double a, double b) {
  const double du = (u - cx) / a, dv = (v - cy) / b;
  return std::sqrt(du * du + dv * dv);
}

Rgb shade(double u, double v, const StyleFactors& s, const ContentFactors& c, const Palette& pal,
          const HairShape& hair, double line_half_width) {
  const double cx = 0.5 + c.pose_offset, cy = 0.58;
  const double a = c.face_width / 2, b = a * 1.15;
  const double f = s.texture_frequency;
  const double hl = s.highlight_intensity;
  const Rgb white{1, 1, 1};

  const double r_face = ellipse_r(u, v, cx, cy, a, b);
  const double r_back = ellipse_r(u, v, cx, cy - 0.06, a * hair.volume, b * 1.08);
  const bool in_face = r_face < 1.0;
  const bool in_back = r_back < 1.0 && v < cy + b * 0.2 + hair.length;

  Rgb col = scaled(pal.background, 1.0 + 0.18 * std::sin(2 * kPi * f * (u + 0.5 * v)));
  const Rgb hair_col = scaled(pal.hair, 1.0 + 0.25 * std::sin(2 * kPi * f * (0.3 * u + v)));
  const bool hair_band = std::abs(v - (cy - b * 0.78)) < 0.03;
  if (in_back && !in_face) col = hair_band ? mix(hair_col, white, 0.6 * hl) : hair_col;
  if (in_face) {
    col = pal.skin;
    const double fringe =
        cy - b * 0.35 + 0.06 * std::sin(2 * kPi * hair.fringe_count * (u - cx) / (2 * a) + hair.phase);
    if (v < fringe) {
      col = hair_band ? mix(hair_col, white, 0.6 * hl) : hair_col;
    } else {
      const double scale = c.face_width / 0.52;
      const double erx = 0.055 * scale, ery = 0.07 * scale, ey = cy + 0.03;
      for (const double sign : {-1.0, 1.0}) {
        const double ex = cx + sign * c.eye_spacing / 2;
        const double r_eye = ellipse_r(u, v, ex, ey, erx, ery);
        if (r_eye < 1.0) {
          col = pal.eyes;
          if (ellipse_r(u, v, ex - 0.3 * erx, ey - 0.35 * ery, 0.35 * erx, 0.35 * erx) < 1.0) {
            col = mix(col, white, hl);
          }
        }
        if (std::abs(r_eye - 1.0) * std::min(erx, ery) < line_half_width) col = pal.line;
      }
      if (std::abs(v - (cy + b * 0.55)) < line_half_width && std::abs(u - cx) < 0.06 * scale) {
        col = pal.line;
      }
    }
  }
  if (std::abs(r_face - 1.0) * std::min(a, b) < line_half_width) col = pal.line;
  if (!in_face && std::abs(r_back - 1.0) * std::min(a * hair.volume, b) < line_half_width &&
      v < cy + b * 0.2 + hair.length) {
    col = pal.line;
  }
  const double k = s.value_contrast;
  auto contrast = [k](double x) { return std::clamp(0.5 + k * (x - 0.5), 0.0, 1.0); };
  return {contrast(col.r), contrast(col.g), contrast(col.b)};
}

template <std::size_t N>
void check_range(const std::array<FactorRange, N>& ranges, const std::array<double, N>& v) {
  for (std::size_t i = 0; i < N; ++i) {
    if (v[i] < ranges[i].lo - 1e-12 || v[i] > ranges[i].hi + 1e-12) {
      throw ConfigError(std::string("factor ") + ranges[i].name + " out of range");
    }
  }
}

}  // namespace

const std::array<FactorRange, 5>& StyleFactors::ranges() {
  static const std::array<FactorRange, 5> r = {FactorRange{"hue_rotation", 0.0, kPi},
                                               FactorRange{"line_thickness", 0.5, 2.5},
                                               FactorRange{"value_contrast", 0.5, 1.5},
                                               FactorRange{"texture_frequency", 2.0, 8.0},
                                               FactorRange{"highlight_intensity", 0.0, 1.0}};
  return r;
}

std::array<double, 5> StyleFactors::values() const {
  return {hue_rotation, line_thickness, value_contrast, texture_frequency, highlight_intensity};
}

StyleFactors StyleFactors::from_values(const std::array<double, 5>& v) {
  return {v[0], v[1], v[2], v[3], v[4]};
}

const std::array<FactorRange, 3>& ContentFactors::ranges() {
  static const std::array<FactorRange, 3> r = {FactorRange{"eye_spacing", 0.16, 0.30},
                                               FactorRange{"face_width", 0.42, 0.62},
                                               FactorRange{"pose_offset", -0.08, 0.08}};
  return r;
}

ImageRGB render_face(const StyleFactors& style, const ContentFactors& content,
                     std::size_t resolution) {
  check_range(StyleFactors::ranges(), style.values());
  check_range(ContentFactors::ranges(),
              std::array<double, 3>{content.eye_spacing, content.face_width, content.pose_offset});
  const Palette pal = make_palette(style.hue_rotation);
  const HairShape hair = hair_shape(content.hair_seed);
  const double res = static_cast<double>(resolution);
  const double half_line = 0.5 * style.line_thickness / res;
  ImageRGB img(resolution, resolution);
  constexpr double kSub[2] = {0.25, 0.75};
  for (std::size_t y = 0; y < resolution; ++y) {
    for (std::size_t x = 0; x < resolution; ++x) {
      Rgb acc;
      for (const double sy : kSub) {
        for (const double sx : kSub) {
          const Rgb c = shade((x + sx) / res, (y + sy) / res, style, content, pal, hair, half_line);
          acc = {acc.r + c.r, acc.g + c.g, acc.b + c.b};
        }
      }
      std::uint8_t* p = img.at(x, y);
      p[0] = static_cast<std::uint8_t>(std::lround(acc.r / 4 * 255));
      p[1] = static_cast<std::uint8_t>(std::lround(acc.g / 4 * 255));
      p[2] = static_cast<std::uint8_t>(std::lround(acc.b / 4 * 255));
    }
  }
  return img;
}

std::vector<std::size_t> ArtistCorpus::artist_sizes() const {
  std::vector<std::size_t> sizes(artists.size(), 0);
  for (const auto& im : images) ++sizes.at(im.artist);
  return sizes;
}

std::vector<std::size_t> ArtistCorpus::indices_of(std::size_t artist) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].artist == artist) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> ArtistCorpus::labels() const {
  std::vector<std::size_t> out;
  out.reserve(images.size());
  for (const auto& im : images) out.push_back(im.artist);
  return out;
}

void ArtistCorpus::validate() const {
  for (const auto& im : images) {
    if (im.artist >= artists.size()) throw FormatError("image " + im.id + " has unknown artist");
    if (im.pixels.width != resolution || im.pixels.height != resolution) {
      throw FormatError("image " + im.id + " is " + std::to_string(im.pixels.width) + "x" +
                        std::to_string(im.pixels.height) + ", corpus resolution is " +
                        std::to_string(resolution));
    }
  }
}

ArtistCorpus ArtistCorpus::subset(const std::vector<std::size_t>& indices) const {
  ArtistCorpus out;
  out.artists = artists;
  out.resolution = resolution;
  out.images.reserve(indices.size());
  for (const std::size_t i : indices) out.images.push_back(images.at(i));
  return out;
}

ArtistCorpus generate_synthetic_corpus(const SyntheticCorpusConfig& config, RngStream& rng) {
  if (config.num_artists < 2) throw ConfigError("synthetic corpus needs at least 2 artists");
  if (config.resolution != 32 && config.resolution != 64 && config.resolution != 128) {
    throw ConfigError("synthetic resolution must be 32, 64 or 128");
  }
  if (config.style_jitter < 0 || config.style_jitter > 0.5) {
    throw ConfigError("style jitter must be in [0, 0.5]");
  }
  const auto& sr = StyleFactors::ranges();
  const auto& cr = ContentFactors::ranges();
  ArtistCorpus corpus;
  corpus.resolution = config.resolution;
  for (std::size_t a = 0; a < config.num_artists; ++a) {
    char name[32];
    std::snprintf(name, sizeof(name), "artist_%03zu", a);
    corpus.artists.emplace_back(name);
    std::array<double, 5> base{};
    for (std::size_t k = 0; k < 5; ++k) base[k] = rng.uniform(sr[k].lo, sr[k].hi);
    for (std::size_t i = 0; i < config.images_per_artist; ++i) {
      std::array<double, 5> jittered{};
      for (std::size_t k = 0; k < 5; ++k) {
        const double bound = config.style_jitter * sr[k].width();
        jittered[k] = std::clamp(base[k] + rng.uniform(-bound, bound), sr[k].lo, sr[k].hi);
      }
      ContentFactors content;
      content.eye_spacing = rng.uniform(cr[0].lo, cr[0].hi);
      content.face_width = rng.uniform(cr[1].lo, cr[1].hi);
      content.pose_offset = rng.uniform(cr[2].lo, cr[2].hi);
      content.hair_seed = rng.next_u32();
      const StyleFactors style = StyleFactors::from_values(jittered);
      char id[64];
      std::snprintf(id, sizeof(id), "%s/img_%04zu", name, i);
      corpus.images.push_back(
          CorpusImage{id, a, render_face(style, content, config.resolution), style, content});
    }
  }
  return corpus;
}

void export_corpus(const ArtistCorpus& corpus, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::ofstream csv(root / "factors.csv");
  if (!csv) throw FormatError("cannot write " + (root / "factors.csv").string());
  csv << "artist,image,factor_name,value\n";
  csv.precision(17);
  for (const auto& im : corpus.images) {
    const fs::path rel = fs::path(im.id).replace_extension(".png");
    fs::create_directories((root / rel).parent_path());
    write_png(root / rel, im.pixels);
    const std::string artist = corpus.artists[im.artist];
    const std::string image = rel.filename().string();
    if (im.style) {
      const auto v = im.style->values();
      for (std::size_t k = 0; k < 5; ++k) {
        csv << artist << ',' << image << ',' << StyleFactors::ranges()[k].name << ',' << v[k] << '\n';
      }
    }
    if (im.content) {
      csv << artist << ',' << image << ",eye_spacing," << im.content->eye_spacing << '\n';
      csv << artist << ',' << image << ",face_width," << im.content->face_width << '\n';
      csv << artist << ',' << image << ",hair_seed," << im.content->hair_seed << '\n';
      csv << artist << ',' << image << ",pose_offset," << im.content->pose_offset << '\n';
    }
  }
}

ArtistCorpus ingest_directory(const std::filesystem::path& root, const IngestOptions& options) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw FormatError("not a directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  ArtistCorpus corpus;
  fs::path first_image;
  for (const auto& dir : dirs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (!e.is_regular_file()) continue;
      std::string ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
      if (ext != ".png") {
        spdlog::info("ingest: ignoring non-PNG file {}", e.path().string());
        continue;
      }
      files.push_back(e.path());
    }
    if (files.empty()) {
      spdlog::warn("ingest: skipping empty artist directory {}", dir.string());
      continue;
    }
    std::sort(files.begin(), files.end());
    const std::size_t artist = corpus.artists.size();
    corpus.artists.push_back(dir.filename().string());
    for (const auto& file : files) {
      ImageRGB img = read_png(file);
      if (corpus.images.empty()) {
        if (img.width != img.height) {
          throw FormatError(file.string() + ": images must be square, got " +
                            std::to_string(img.width) + "x" + std::to_string(img.height));
        }
        corpus.resolution = img.width;
        first_image = file;
      } else if (img.width != corpus.resolution || img.height != corpus.resolution) {
        throw FormatError(file.string() + ": resolution " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) + " differs from " +
                          std::to_string(corpus.resolution) + "x" +
                          std::to_string(corpus.resolution) + " of " + first_image.string());
      }
      corpus.images.push_back(CorpusImage{
          corpus.artists.back() + "/" + file.stem().string(), artist, std::move(img), {}, {}});
    }
  }
  return options.min_works > 1 ? filter_min_works(corpus, options.min_works) : corpus;
}

ArtistCorpus filter_min_works(const ArtistCorpus& corpus, std::size_t min_works) {
  const auto sizes = corpus.artist_sizes();
  std::vector<std::size_t> remap(corpus.artists.size(), SIZE_MAX);
  ArtistCorpus out;
  out.resolution = corpus.resolution;
  for (std::size_t a = 0; a < corpus.artists.size(); ++a) {
    if (sizes[a] >= min_works) {
      remap[a] = out.artists.size();
      out.artists.push_back(corpus.artists[a]);
    } else {
      spdlog::info("dropping artist {} with {} works (< {})", corpus.artists[a], sizes[a], min_works);
    }
  }
  for (const auto& im : corpus.images) {
    if (remap[im.artist] == SIZE_MAX) continue;
    CorpusImage copy = im;
    copy.artist = remap[im.artist];
    out.images.push_back(std::move(copy));
  }
  return out;
}

void SplitSpec::validate() const {
  if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("test fraction must be in (0,1)");
  if (min_test < 1 || min_works < 1) throw ConfigError("split minima must be >= 1");
}

std::size_t test_count(std::size_t n, const SplitSpec& spec) {
  const auto frac = static_cast<std::size_t>(std::ceil(spec.test_fraction * static_cast<double>(n) - 1e-9));
  return std::max(frac, spec.min_test);
}

std::pair<ArtistCorpus, ArtistCorpus> split_train_test(const ArtistCorpus& corpus,
                                                       const SplitSpec& spec, RngStream& rng) {
  spec.validate();
  const auto sizes = corpus.artist_sizes();
  std::string too_small;
  for (std::size_t a = 0; a < sizes.size(); ++a) {
    if (sizes[a] <= test_count(sizes[a], spec)) {
      too_small += (too_small.empty() ? "" : ", ") + corpus.artists[a] + " (" +
                   std::to_string(sizes[a]) + ")";
    }
  }
  if (!too_small.empty()) throw ConfigError("artists too small to split: " + too_small);
  std::vector<std::size_t> train, test;
  for (std::size_t a = 0; a < sizes.size(); ++a) {
    std::vector<std::size_t> idx = corpus.indices_of(a);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
    const std::size_t k = test_count(idx.size(), spec);
    std::vector<std::size_t> t(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    std::vector<std::size_t> r(idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
    std::sort(t.begin(), t.end());
    std::sort(r.begin(), r.end());
    test.insert(test.end(), t.begin(), t.end());
    train.insert(train.end(), r.begin(), r.end());
  }
  return {corpus.subset(train), corpus.subset(test)};
}

BatchIterator::BatchIterator(const ArtistCorpus& corpus, std::size_t batch_size, std::uint64_t seed)
    : labels_(corpus.labels()), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (labels_.empty()) throw ConfigError("batch iterator over empty corpus");
  per_epoch_ = (labels_.size() + batch_size - 1) / batch_size;
}

Batch BatchIterator::at(std::uint64_t step) const {
  const std::uint64_t epoch = step / per_epoch_;
  const std::size_t slot = static_cast<std::size_t>(step % per_epoch_);
  std::vector<std::size_t> perm(labels_.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  RngStream rng(seed_, stream_id("epoch", epoch));
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  const std::size_t begin = slot * batch_size_;
  const std::size_t end = std::min(begin + batch_size_, perm.size());
  Batch b;
  for (std::size_t i = begin; i < end; ++i) {
    b.indices.push_back(perm[i]);
    b.artists.push_back(labels_[perm[i]]);
  }
  return b;
}

template <typename T>
Tensor<T> corpus_tensor(const ArtistCorpus& corpus) {
  std::vector<ImageLab> labs;
  labs.reserve(corpus.size());
  for (const auto& im : corpus.images) labs.push_back(rgb_to_lab(im.pixels));
  return images_to_tensor<T>(labs);
}

template <typename T>
Tensor<T> gather_images(const Tensor<T>& bank, const std::vector<std::size_t>& indices) {
  Shape s = bank.shape();
  const std::size_t per = bank.size() / s[0];
  s[0] = indices.size();
  Tensor<T> out(s);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= bank.dim(0)) throw ShapeError("gather_images: index out of range");
    std::copy_n(bank.raw() + indices[k] * per, per, out.raw() + k * per);
  }
  return out;
}

template Tensor<float> corpus_tensor<float>(const ArtistCorpus&);
template Tensor<double> corpus_tensor<double>(const ArtistCorpus&);
template Tensor<float> gather_images<float>(const Tensor<float>&, const std::vector<std::size_t>&);
template Tensor<double> gather_images<double>(const Tensor<double>&, const std::vector<std::size_t>&);

}  // namespace stylespace
