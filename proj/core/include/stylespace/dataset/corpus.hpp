#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stylespace/imaging/image.hpp"
#include "stylespace/tensor/rng.hpp"

namespace stylespace {

struct FactorRange {
  const char* name;
  double lo;
  double hi;
  double width() const { return hi - lo; }
};

/// Per-artist rendering style of the synthetic generator.
struct StyleFactors {
  double hue_rotation = 0;         // radians in [0, pi]; 0 renders a grey palette
  double line_thickness = 1;       // outline width in output pixels
  double value_contrast = 1;       // gain around mid grey
  double texture_frequency = 4;    // stripe cycles per image on hair and background
  double highlight_intensity = 0;  // blend toward white on eye and hair highlights

  static const std::array<FactorRange, 5>& ranges();
  std::array<double, 5> values() const;
  static StyleFactors from_values(const std::array<double, 5>& v);
};

/// Per-image depicted content.
struct ContentFactors {
  double eye_spacing = 0.22;  // distance between eye centres, fraction of width
  double face_width = 0.52;   // fraction of width
  std::uint32_t hair_seed = 0;
  double pose_offset = 0;  // horizontal shift of the face, fraction of width

  static const std::array<FactorRange, 3>& ranges();  // excludes hair_seed
};

struct CorpusImage {
  std::string id;
  std::size_t artist = 0;
  ImageRGB pixels;
  std::optional<StyleFactors> style;
  std::optional<ContentFactors> content;
};

/// Images grouped by artist; every image has exactly one artist and all share
/// one square resolution.
struct ArtistCorpus {
  std::vector<std::string> artists;
  std::vector<CorpusImage> images;
  std::size_t resolution = 0;

  std::size_t num_artists() const noexcept { return artists.size(); }
  std::size_t size() const noexcept { return images.size(); }
  std::vector<std::size_t> artist_sizes() const;
  std::vector<std::size_t> indices_of(std::size_t artist) const;
  std::vector<std::size_t> labels() const;
  void validate() const;
  /// Keeps only the listed images (artist table unchanged).
  ArtistCorpus subset(const std::vector<std::size_t>& indices) const;
};

/// Deterministic renderer: identical factors give identical pixels.
ImageRGB render_face(const StyleFactors& style, const ContentFactors& content,
                     std::size_t resolution);

struct SyntheticCorpusConfig {
  std::size_t num_artists = 20;
  std::size_t images_per_artist = 100;
  std::size_t resolution = 32;
  double style_jitter = 0.05;  // per-image jitter bound, fraction of each factor's range
};

ArtistCorpus generate_synthetic_corpus(const SyntheticCorpusConfig& config, RngStream& rng);

/// Writes root/<artist>/<image>.png plus factors.csv (artist,image,factor_name,value).
void export_corpus(const ArtistCorpus& corpus, const std::filesystem::path& root);

struct IngestOptions {
  std::size_t min_works = 1;
};

/// Reads root/<artist>/*.png. Non-PNG files are ignored and empty artist
/// directories skipped (both logged); mixed resolutions are an error.
ArtistCorpus ingest_directory(const std::filesystem::path& root, const IngestOptions& options = {});

/// Drops artists with fewer than `min_works` images and renumbers the rest.
ArtistCorpus filter_min_works(const ArtistCorpus& corpus, std::size_t min_works);

struct SplitSpec {
  double test_fraction = 0.1;
  std::size_t min_test = 10;
  std::size_t min_works = 50;

  void validate() const;
};

/// Per-artist test count: max(ceil(fraction * n), min_test).
std::size_t test_count(std::size_t n, const SplitSpec& spec);

/// Uniform random per-artist split. Both halves keep the full artist table.
std::pair<ArtistCorpus, ArtistCorpus> split_train_test(const ArtistCorpus& corpus,
                                                       const SplitSpec& spec, RngStream& rng);

struct Batch {
  std::vector<std::size_t> indices;
  std::vector<std::size_t> artists;
};

/// Shuffled minibatches; epoch e uses its own random stream so the batch at any
/// step is a pure function of (seed, step). The last batch of an epoch may be short.
class BatchIterator {
 public:
  BatchIterator(const ArtistCorpus& corpus, std::size_t batch_size, std::uint64_t seed);

  std::size_t batches_per_epoch() const noexcept { return per_epoch_; }
  Batch at(std::uint64_t step) const;
  Batch next() { return at(step_++); }
  std::uint64_t position() const noexcept { return step_; }
  void seek(std::uint64_t step) noexcept { step_ = step; }

 private:
  std::vector<std::size_t> labels_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t per_epoch_;
  std::uint64_t step_ = 0;
};

/// Whole corpus as a Lab tensor [N,3,R,R].
template <typename T>
Tensor<T> corpus_tensor(const ArtistCorpus& corpus);

template <typename T>
Tensor<T> gather_images(const Tensor<T>& bank, const std::vector<std::size_t>& indices);

}  // namespace stylespace
