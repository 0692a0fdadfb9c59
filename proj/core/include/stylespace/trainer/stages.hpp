#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stylespace/trainer/pipeline.hpp"

namespace stylespace {

using StepMetrics = std::vector<std::pair<std::string, double>>;

/// Shared loop of the three stages: interval-averaged logging, periodic
/// evaluation with early stopping, periodic checkpoints and abort on
/// non-finite values. Step k draws its batch and randomness from (seed, k)
/// only, so a restored trainer continues bit-identically.
class StageTrainer {
 public:
  explicit StageTrainer(Pipeline& pipeline) : pipeline_(pipeline) {}
  virtual ~StageTrainer() = default;
  StageTrainer(const StageTrainer&) = delete;
  StageTrainer& operator=(const StageTrainer&) = delete;

  virtual std::string stage() const = 0;
  std::uint64_t step() const { return step_; }
  std::uint64_t max_steps() const;
  const History& history() const { return history_; }
  bool stopped_early() const { return stopped_; }

  /// Checkpoints land in this directory; diagnostics too. Empty disables files.
  void set_output_dir(std::filesystem::path dir) { out_dir_ = std::move(dir); }

  /// One update; returns the metrics of this step.
  StepMetrics advance();
  /// Advances until `until` (default: the configured step count) or early stop.
  void run(std::uint64_t until = 0);

  /// Pipeline networks plus optimizer state, counters and history.
  Checkpoint checkpoint() const;
  /// Restores counters, optimizer state and history; the pipeline itself must
  /// already hold the checkpoint's networks (see read_pipeline).
  void restore(const Checkpoint& ckpt);

 protected:
  virtual StepMetrics train_step(std::uint64_t step) = 0;
  /// Higher is better; nullopt when the stage has nothing to evaluate.
  virtual std::optional<double> evaluate() { return std::nullopt; }
  virtual const StageOptions& options() const = 0;
  virtual void save_optimizers(Checkpoint& ckpt) const = 0;
  virtual void load_optimizers(const Checkpoint& ckpt) = 0;

  Pipeline& pipeline_;

 private:
  void finish_step(const StepMetrics& metrics);
  void write_file(const std::string& name) const;

  std::uint64_t step_ = 0;
  History history_;
  std::map<std::string, double> interval_sum_;
  std::uint64_t interval_count_ = 0;
  std::optional<double> best_eval_;
  std::uint64_t evals_since_best_ = 0;
  bool stopped_ = false;
  std::filesystem::path out_dir_;
};

/// Metric learning of S and the presumed styles.
class StyleTrainer : public StageTrainer {
 public:
  /// Builds S and the metric head if the pipeline lacks them. `validation`
  /// drives early stopping and may be null.
  StyleTrainer(Pipeline& pipeline, const ArtistCorpus& train, const ArtistCorpus* validation);
  std::string stage() const override { return "style"; }

  /// Nearest-presumed-style accuracy over all D dims.
  double accuracy(const ArtistCorpus& corpus) const;

 protected:
  StepMetrics train_step(std::uint64_t step) override;
  std::optional<double> evaluate() override;
  const StageOptions& options() const override { return pipeline_.config.style; }
  void save_optimizers(Checkpoint& ckpt) const override;
  void load_optimizers(const Checkpoint& ckpt) override;

 private:
  Tensor<Real> bank_;
  std::vector<std::size_t> sizes_;
  BatchIterator batches_;
  const ArtistCorpus* validation_;
  Optimizer<Real> opt_encoder_, opt_head_;
};

/// VAE training against the frozen, pruned style encoder.
class VaeTrainer : public StageTrainer {
 public:
  VaeTrainer(Pipeline& pipeline, const ArtistCorpus& train, const ArtistCorpus* validation);
  std::string stage() const override { return "vae"; }

  /// Mean per-image squared error decoding mean codes with all content dims.
  double reconstruction(const ArtistCorpus& corpus) const;

 protected:
  StepMetrics train_step(std::uint64_t step) override;
  std::optional<double> evaluate() override;
  const StageOptions& options() const override { return pipeline_.config.vae; }
  void save_optimizers(Checkpoint& ckpt) const override;
  void load_optimizers(const Checkpoint& ckpt) override;

 private:
  Tensor<Real> bank_;
  Tensor<Real> styles_;
  BatchIterator batches_;
  const ArtistCorpus* validation_;
  Optimizer<Real> opt_;
};

/// Alternating discriminator / generator updates with frozen S, Enc and normalizer.
class GanTrainer : public StageTrainer {
 public:
  GanTrainer(Pipeline& pipeline, const ArtistCorpus& train);
  std::string stage() const override { return "gan"; }

 protected:
  StepMetrics train_step(std::uint64_t step) override;
  const StageOptions& options() const override { return pipeline_.config.gan; }
  void save_optimizers(Checkpoint& ckpt) const override;
  void load_optimizers(const Checkpoint& ckpt) override;

 private:
  Tensor<Real> bank_;
  BatchIterator batches_;
  Optimizer<Real> opt_generator_;
  std::array<Optimizer<Real>, 3> opt_members_;
};

}  // namespace stylespace
