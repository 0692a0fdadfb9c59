#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "stylespace/trainer/pipeline.hpp"

namespace stylespace {

/// The metric-learning network trained as a plain artist classifier.
struct ClassifierBaseline {
  ArtistClassifier<Real> model;
  History history;

  /// Pre-head features [N, D], comparable with style codes.
  Tensor<Real> features(const Tensor<Real>& images) const;
  /// Argmax accuracy of the classification head.
  double accuracy(const ArtistCorpus& corpus) const;
};

/// Same architecture, optimizer, batch size and step count as the style stage.
ClassifierBaseline train_classifier_baseline(const ArtistCorpus& train, const TrainConfig& config);

/// Weights of the corners (top-left, top-right, bottom-left, bottom-right) at
/// grid cell (r, c) of an n x n grid.
std::array<double, 4> bilinear_weights(std::size_t r, std::size_t c, std::size_t n);

/// Corner codes [4, d] -> row-major grid codes [n * n, d].
Tensor<Real> interpolate_codes(const Tensor<Real>& corners, std::size_t n);

struct ImageGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<ImageRGB> images;  // row-major

  ImageRGB compose() const { return compose_grid(images, rows, cols); }
};

/// Lab tensor [N, 3, R, R] -> 8-bit sRGB images.
std::vector<ImageRGB> tensor_to_rgb(const Tensor<Real>& images);

/// Style corners [4, d_style] blended over an n x n grid with fixed content
/// [1, d_content] and noise [1, d_noise].
ImageGrid interpolate_styles(const Generator<Real>& g, const Tensor<Real>& corners,
                             const Tensor<Real>& content, const Tensor<Real>& noise, std::size_t n);

struct SweepSpec {
  std::size_t dim = 0;
  std::vector<double> values{-5.0, 0.0, 5.0};
  std::size_t base_codes = 4;

  void validate(std::size_t d_style) const;
};

struct SweepCodes {
  Tensor<Real> style, content, noise;  // one row per grid cell
};

/// Base codes drawn from `rng`; row b of the grid holds base code b with the
/// chosen style dimension replaced by each sweep value.
SweepCodes sweep_codes(const CodeLayout& layout, const SweepSpec& spec, RngStream& rng);
ImageGrid dimension_sweep(const Generator<Real>& g, const SweepSpec& spec, RngStream& rng);

struct RankedImages {
  std::vector<std::size_t> lowest;   // ascending by value
  std::vector<std::size_t> highest;  // descending by value
  std::vector<double> values;        // per image
};

/// Orders images by one code dimension (ties broken by id) and returns the
/// bottom and top `fraction` of them.
RankedImages rank_images_by_dimension(const Tensor<Real>& codes, const std::vector<std::string>& ids,
                                      std::size_t dim, double fraction);

/// G(norm(S(x)), Enc_mean(x), w) per image; `noise` is [N, d_noise] or empty for zeros.
Tensor<Real> reconstruct(const Pipeline& pipeline, const Tensor<Real>& images,
                         const Tensor<Real>& noise = {});
/// G(norm(S(style)), Enc_mean(content), w), pairing rows of the two batches.
Tensor<Real> style_transfer(const Pipeline& pipeline, const Tensor<Real>& content_images,
                            const Tensor<Real>& style_images, const Tensor<Real>& noise = {});

}  // namespace stylespace
