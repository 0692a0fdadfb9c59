#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stylespace/dataset/corpus.hpp"
#include "stylespace/losses/losses.hpp"
#include "stylespace/models/networks.hpp"
#include "stylespace/trainer/checkpoint.hpp"
#include "stylespace/trainer/config.hpp"

namespace stylespace {

/// Training runs in single precision.
using Real = float;

/// The networks produced so far by a three-stage run.
struct Pipeline {
  TrainConfig config;
  std::optional<StyleEncoder<Real>> style;
  std::optional<MetricHead<Real>> head;
  std::optional<StyleNormalizer<Real>> normalizer;  // its dim() is the kept style length
  std::optional<ContentVAE<Real>> vae;
  std::size_t d_content = 0;  // kept content length; 0 until pruned
  std::optional<Generator<Real>> generator;
  std::optional<DiscriminatorConsortium<Real>> consortium;

  std::size_t d_style() const { return normalizer ? normalizer->dim() : 0; }
  CodeLayout layout() const { return {d_style(), d_content, config.d_noise}; }

  /// Normalized kept style codes [N, d_style] for images [N, 3, R, R].
  Tensor<Real> style_codes(const Tensor<Real>& images) const;
  /// Mean content codes restricted to the kept dims [N, d_content].
  Tensor<Real> content_codes(const Tensor<Real>& images) const;
};

/// Writes every present network plus its architecture and the config.
void write_pipeline(Checkpoint& ckpt, const Pipeline& pipeline);
/// Rebuilds the networks recorded in a checkpoint.
Pipeline read_pipeline(const Checkpoint& ckpt);

/// Applies `fn` to consecutive row blocks of `bank` and concatenates the results.
Tensor<Real> map_batches(const Tensor<Real>& bank, std::size_t batch,
                         const std::function<Tensor<Real>(const Tensor<Real>&)>& fn);

struct DataSplits {
  ArtistCorpus train;
  ArtistCorpus validation;  // carved from the training half
  ArtistCorpus test;
};

/// Synthesizes or ingests the corpus named by the config and splits it.
DataSplits prepare_data(const TrainConfig& config);

struct HistoryEntry {
  std::uint64_t step = 0;
  std::string metric;
  double value = 0;
};

class History {
 public:
  void record(std::uint64_t step, const std::string& metric, double value);
  const std::vector<HistoryEntry>& entries() const { return entries_; }
  std::vector<double> values(const std::string& metric) const;
  /// CSV with header step,metric,value.
  void write_csv(const std::filesystem::path& path) const;
  void save(Checkpoint& ckpt) const;
  void load(const Checkpoint& ckpt);

 private:
  std::vector<HistoryEntry> entries_;
};

struct PruneReport {
  std::string metric;  // "accuracy" (higher is better) or "reconstruction" (lower is better)
  std::vector<std::size_t> candidates;
  std::vector<double> values;
  std::size_t chosen = 0;
};

/// 1, 2, 4, ... below D, then D itself.
std::vector<std::size_t> default_prune_candidates(std::size_t D);

/// Smallest candidate whose value is >= rho * best (higher is better) or
/// <= best / rho (lower is better).
PruneReport choose_dimensions(const std::string& metric, const std::vector<std::size_t>& candidates,
                              const std::vector<double>& values, double rho, bool higher_is_better);

/// Nearest-centroid accuracy of `codes` per candidate prefix.
PruneReport prune_style_dimensions(const Tensor<Real>& codes, const Tensor<Real>& centroids,
                                   const std::vector<std::size_t>& labels,
                                   const std::vector<std::size_t>& candidates, double rho);

/// Per-image squared error of decoding the mean content code cut to d dims.
std::vector<double> content_reconstruction_errors(const ContentVAE<Real>& vae, const Tensor<Real>& images,
                                                  const Tensor<Real>& styles, std::size_t d);
/// Mean of content_reconstruction_errors.
double content_reconstruction_error(const ContentVAE<Real>& vae, const Tensor<Real>& images,
                                    const Tensor<Real>& styles, std::size_t d);

PruneReport prune_content_dimensions(const ContentVAE<Real>& vae, const Tensor<Real>& images,
                                     const Tensor<Real>& styles,
                                     const std::vector<std::size_t>& candidates, double rho);

/// Picks d_style on `eval` (or uses config.style_kept) and fits the normalizer
/// on the training codes.
PruneReport apply_style_pruning(Pipeline& pipeline, const ArtistCorpus& train,
                                const ArtistCorpus& eval);
/// Picks d_content on `eval` (or uses config.content_kept).
PruneReport apply_content_pruning(Pipeline& pipeline, const ArtistCorpus& eval);

void write_prune_csv(const std::filesystem::path& path, const PruneReport& report);

/// Mean over n fresh codes of ||norm(S(G(u, v, w))) - u||^2.
double style_recovery_loss(const Pipeline& pipeline, std::size_t n, std::uint64_t seed);

}  // namespace stylespace
