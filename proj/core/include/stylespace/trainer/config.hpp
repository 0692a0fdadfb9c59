#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "stylespace/dataset/corpus.hpp"
#include "stylespace/losses/losses.hpp"
#include "stylespace/models/networks.hpp"
#include "stylespace/tensor/optim.hpp"

namespace stylespace {

struct StageOptions {
  OptimizerConfig optimizer;
  std::size_t batch = 32;
  std::size_t steps = 1000;
  double dropout_t = 0.995;
};

enum class MetricLossKind { kCentroid, kPairs };

/// Everything a three-stage run needs. Serializes to UTF-8 key=value text.
struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t resolution = 32;

  ArchSpec style_arch;  // resolution is taken from `resolution`
  StageOptions style;
  MetricLossKind style_loss = MetricLossKind::kCentroid;
  std::size_t style_kept = 0;  // 0 = choose by pruning

  ArchSpec vae_arch;
  StageOptions vae;
  std::size_t content_kept = 0;

  ArchSpec gen_arch;   // code_dim is derived from the code layout
  ArchSpec disc_arch;  // resolution is the consortium patch size
  StageOptions gan;
  std::size_t d_noise = 40;
  GanWeights weights;
  std::size_t d_steps = 1;  // discriminator updates per generator update

  double prune_rho = 0.97;
  std::vector<std::size_t> prune_candidates;  // empty = powers of two up to D

  std::size_t log_every = 10;
  std::size_t eval_every = 50;  // 0 disables evaluation and early stopping
  std::size_t checkpoint_every = 0;
  std::size_t patience = 10;

  SyntheticCorpusConfig synth;
  std::string data_dir;  // empty = synthetic corpus
  std::size_t min_works = 1;
  SplitSpec split;

  static TrainConfig full();
  static TrainConfig desk();

  /// Throws ConfigError naming the first offending key.
  void validate() const;

  ArchSpec style_spec() const;
  ArchSpec vae_spec() const;
  ArchSpec generator_spec(const CodeLayout& layout) const;
  ArchSpec discriminator_spec() const;
};

std::string to_string(MetricLossKind kind);

/// Canonical text: one key=value per line in a fixed key order.
std::string to_text(const TrainConfig& config);

/// Applies key=value lines (blank lines and '#' comments allowed) on top of
/// `base`. Unknown keys and malformed values throw ConfigError.
TrainConfig parse_train_config(std::string_view text, const TrainConfig& base = TrainConfig::desk());
TrainConfig load_train_config(const std::filesystem::path& path,
                              const TrainConfig& base = TrainConfig::desk());

/// Shortest decimal text that parses back to exactly `value`.
std::string exact_double(double value);

/// Splits "a=b" lines into pairs; the first '=' separates key and value.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

}  // namespace stylespace
