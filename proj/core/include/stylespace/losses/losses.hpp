#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "stylespace/models/networks.hpp"
#include "stylespace/tensor/ops.hpp"
#include "stylespace/tensor/rng.hpp"

namespace stylespace {

inline double loss_same(double dist) { return dist * dist; }
double loss_diff(double dist);

/// Truncated geometric weight (1-t) t^(d-1) / (1-t^D) of prefix length d in [1, D].
double nested_weight(std::size_t d, double t, std::size_t D);
std::vector<double> nested_weights(double t, std::size_t D);
/// Draws a prefix length in [1, D] with probability nested_weight(d, t, D).
std::size_t sample_prefix_length(double t, std::size_t D, RngStream& rng);

enum class PairKind { kSame, kDiff };

/// sum_d w_d * L_kind(h_d * ||x^[d] - y^[d]||) with h = exp(log_scale), for
/// x, y of shape [D]. Computed exactly from cumulative squared distances.
template <typename T>
Var<T> nested_pair_loss(const Var<T>& x, const Var<T>& y, const Var<T>& log_scale, double t,
                        PairKind kind);

/// Presumed artist styles s_i [A, D] and per-dimension log scales [D].
template <typename T>
struct MetricHead {
  ParameterStore<T> params;
  std::size_t styles = 0;
  std::size_t log_scale = 0;

  std::size_t num_artists() const { return params[styles].value.dim(0); }
  std::size_t dim() const { return params[styles].value.dim(1); }
};

/// Styles from N(0, I), log scales zero.
template <typename T>
MetricHead<T> build_metric_head(std::size_t num_artists, std::size_t dim, RngStream& rng);

/// Minibatch estimator of the centroid objective with nested losses. `codes`
/// [B, D] are uniform draws from a corpus whose per-artist sizes are
/// `corpus_sizes`; each sample is importance-weighted so the expectation equals
/// the full-corpus value.
template <typename T>
Var<T> centroid_metric_loss(const Var<T>& codes, const std::vector<std::size_t>& artists,
                            const Var<T>& styles, const Var<T>& log_scale, double t,
                            const std::vector<std::size_t>& corpus_sizes);

/// Pairwise objective over all same-artist and cross-artist ordered pairs in
/// the batch, importance-weighted like centroid_metric_loss. With the whole
/// corpus as the batch it equals the full-corpus value exactly.
template <typename T>
Var<T> naive_pair_metric_loss(const Var<T>& codes, const std::vector<std::size_t>& artists,
                              const Var<T>& log_scale, double t,
                              const std::vector<std::size_t>& corpus_sizes);

template <typename T>
struct VaeLoss {
  Var<T> reconstruction;  // mean over the batch of per-image squared error
  Var<T> kl;              // mean over the batch of per-image KL to N(0, I)
};

/// VAE objective for explicit noise `eps` [B, Dc] and per-image prefix lengths.
template <typename T>
VaeLoss<T> vae_loss_given(Binder<T>& b, const ContentVAE<T>& vae, const Var<T>& images,
                          const Var<T>& style, const Tensor<T>& eps,
                          const std::vector<std::size_t>& prefix);

/// Stochastic single-sample estimator: draws eps and one prefix length per image.
template <typename T>
VaeLoss<T> vae_loss(Binder<T>& b, const ContentVAE<T>& vae, const Var<T>& images,
                    const Var<T>& style, double t, RngStream& rng);

/// Exact prefix-weighted reconstruction sum_d w_d ||Dec(style, z^[d]) - x||^2,
/// averaged over the batch, for fixed `eps`. Costs D decoder passes.
template <typename T>
double vae_reconstruction_exact(const ContentVAE<T>& vae, const Tensor<T>& images,
                                const Tensor<T>& style, const Tensor<T>& eps, double t);

/// Zeroes entries at or beyond each row's prefix length.
template <typename T>
Tensor<T> prefix_mask(std::size_t rows, std::size_t cols, const std::vector<std::size_t>& prefix);

inline constexpr double kProbabilityEpsilon = 1e-7;

/// Mean of -log p after clamping p into [eps, 1 - eps].
template <typename T>
Var<T> neg_log(const Var<T>& p);
/// Mean of -log(1 - p) after clamping.
template <typename T>
Var<T> neg_log_complement(const Var<T>& p);

/// -log D(real) - log(1 - D(fake)), averaged over each member's outputs and
/// then over the three members.
template <typename T>
Var<T> gan_d_loss(const std::array<Var<T>, 3>& real_probs, const std::array<Var<T>, 3>& fake_probs);

struct GanWeights {
  double style = 0.5;
  double content = 0.05;
};

/// Per-dimension standardization of the kept style dimensions.
template <typename T>
struct StyleNormalizer {
  Tensor<T> mean;  // [d]
  Tensor<T> std;   // [d]

  std::size_t dim() const { return mean.size(); }
  /// Standardizes the first dim() columns of codes [N, >= dim()].
  Tensor<T> apply(const Tensor<T>& codes) const;
  Tensor<T> inverse(const Tensor<T>& normalized) const;
  Var<T> apply(const Var<T>& codes) const;
};

/// Population mean and standard deviation of the first `kept` columns.
template <typename T>
StyleNormalizer<T> fit_style_normalizer(const Tensor<T>& codes, std::size_t kept);

template <typename T>
struct GanGeneratorLoss {
  Var<T> total;
  Var<T> gan;
  Var<T> style;
  Var<T> content;
  Var<T> images;
};

/// Frozen networks the generator objective reads through.
template <typename T>
struct GanCritics {
  const StyleEncoder<T>* style_encoder = nullptr;
  const ContentVAE<T>* content_vae = nullptr;
  const StyleNormalizer<T>* normalizer = nullptr;
  const DiscriminatorConsortium<T>* consortium = nullptr;
};

/// L_GAN + w.style * ||norm(S(G))^[ds] - u||^2 + w.content * ||Enc(G)^[dc] - v||^2,
/// each term averaged over the batch. Only `gen_binder` may be tracked.
template <typename T>
GanGeneratorLoss<T> gan_g_loss(Binder<T>& gen_binder, const Generator<T>& g,
                               const GanCritics<T>& critics, const Var<T>& u, const Var<T>& v,
                               const Var<T>& w, const GanWeights& weights, RngStream& rng);

/// Squared-error style and content losses of generated images (no adversarial term).
template <typename T>
std::pair<Var<T>, Var<T>> code_recovery_losses(const Var<T>& images, const GanCritics<T>& critics,
                                               const Var<T>& u, const Var<T>& v);

/// Mean softmax cross-entropy of logits [N, K] against labels.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::size_t>& labels);

}  // namespace stylespace
