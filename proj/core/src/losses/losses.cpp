#include "stylespace/losses/losses.hpp"

#include <cmath>
#include <numeric>

#include "stylespace/error.hpp"

namespace stylespace {
namespace {

template <typename T>
Tensor<T> weights_tensor(double t, std::size_t D) {
  const auto w = nested_weights(t, D);
  Tensor<T> out(Shape{D});
  for (std::size_t d = 0; d < D; ++d) out[d] = static_cast<T>(w[d]);
  return out;
}

// h_d^2 * squared distance, then L_same or L_diff, weighted by w_d.
template <typename T>
Var<T> apply_nested(const Var<T>& sq, const Var<T>& log_scale, PairKind kind) {
  const Var<T> scaled = sq * exp(scale(log_scale, T(2)));
  return kind == PairKind::kSame ? scaled : exp(neg(scaled));
}

void check_artists(const std::vector<std::size_t>& artists, std::size_t batch,
                   const std::vector<std::size_t>& sizes) {
  if (artists.size() != batch) throw ShapeError("metric loss: one artist label per code required");
  for (const auto a : artists) {
    if (a >= sizes.size()) throw ConfigError("metric loss: unknown artist " + std::to_string(a));
    if (sizes[a] == 0) throw ConfigError("metric loss: artist " + std::to_string(a) + " has no images");
  }
}

struct SizeSums {
  double total = 0;
  double same = 0;  // sum |X_i|^2
  double diff = 0;  // sum_{i != j} |X_i| |X_j|
};

SizeSums size_sums(const std::vector<std::size_t>& sizes) {
  SizeSums s;
  for (const auto n : sizes) {
    s.total += static_cast<double>(n);
    s.same += static_cast<double>(n) * static_cast<double>(n);
  }
  s.diff = s.total * s.total - s.same;
  return s;
}

template <typename T>
Var<T> zero_like(const Var<T>& x) {
  return sum(scale(x, T(0)));
}

}  // namespace

double loss_diff(double dist) { return std::exp(-dist * dist); }

double nested_weight(std::size_t d, double t, std::size_t D) {
  if (D == 0 || d < 1 || d > D) {
    throw ConfigError("nested_weight: d=" + std::to_string(d) + " outside [1," + std::to_string(D) + "]");
  }
  if (!(t > 0 && t < 1)) throw ConfigError("nested dropout t must be in (0,1)");
  return (1 - t) * std::pow(t, static_cast<double>(d - 1)) / (1 - std::pow(t, static_cast<double>(D)));
}

std::vector<double> nested_weights(double t, std::size_t D) {
  std::vector<double> w(D);
  for (std::size_t d = 1; d <= D; ++d) w[d - 1] = nested_weight(d, t, D);
  return w;
}

std::size_t sample_prefix_length(double t, std::size_t D, RngStream& rng) {
  // Inverse CDF: P(d <= k) = (1 - t^k) / (1 - t^D).
  const double u = rng.uniform();
  const double target = u * (1 - std::pow(t, static_cast<double>(D)));
  const double k = std::ceil(std::log1p(-target) / std::log(t));
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(k, 1.0)), 1, D);
}

template <typename T>
Var<T> nested_pair_loss(const Var<T>& x, const Var<T>& y, const Var<T>& log_scale, double t,
                        PairKind kind) {
  if (x.shape().size() != 1 || x.shape() != y.shape() || log_scale.shape() != x.shape()) {
    throw ShapeError("nested_pair_loss: x, y and scales must share shape [D]; got " +
                     shape_string(x.shape()) + ", " + shape_string(y.shape()) + ", " +
                     shape_string(log_scale.shape()));
  }
  const std::size_t D = x.dim(0);
  const Var<T> sq = reshape(prefix_sq_dist(reshape(x, Shape{1, D}), reshape(y, Shape{1, D})), Shape{D});
  const Var<T> w = x.tape->constant(weights_tensor<T>(t, D));
  return sum(apply_nested(sq, log_scale, kind) * w);
}

template <typename T>
MetricHead<T> build_metric_head(std::size_t num_artists, std::size_t dim, RngStream& rng) {
  if (num_artists < 1 || dim < 1) throw ConfigError("metric head needs artists and dims");
  MetricHead<T> h;
  h.styles = h.params.add("styles", sample_gaussian<T>(rng, Shape{num_artists, dim}));
  h.log_scale = h.params.add("log_scale", Tensor<T>(Shape{dim}));
  return h;
}

template <typename T>
Var<T> centroid_metric_loss(const Var<T>& codes, const std::vector<std::size_t>& artists,
                            const Var<T>& styles, const Var<T>& log_scale, double t,
                            const std::vector<std::size_t>& corpus_sizes) {
  const std::size_t B = codes.dim(0), D = codes.dim(1), A = styles.dim(0);
  if (corpus_sizes.size() != A) throw ShapeError("centroid loss: one corpus size per artist required");
  check_artists(artists, B, corpus_sizes);
  const SizeSums sums = size_sums(corpus_sizes);
  const auto w = nested_weights(t, D);
  const double inclusion = sums.total / static_cast<double>(B);

  Tensor<T> same_w(Shape{B, A, D}), diff_w(Shape{B, A, D});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t a = 0; a < A; ++a) {
      const double n = static_cast<double>(corpus_sizes[a]);
      const bool own = a == artists[b];
      const double coeff = own ? n * inclusion / sums.same
                               : (sums.diff > 0 ? n * inclusion / sums.diff : 0.0);
      Tensor<T>& target = own ? same_w : diff_w;
      for (std::size_t d = 0; d < D; ++d) target[(b * A + a) * D + d] = static_cast<T>(coeff * w[d]);
    }
  }
  Tape<T>& tape = *codes.tape;
  const Var<T> sq = prefix_sq_dist(codes, styles);
  const Var<T> same = sum(apply_nested(sq, log_scale, PairKind::kSame) * tape.constant(std::move(same_w)));
  if (sums.diff <= 0) return same;
  return same + sum(apply_nested(sq, log_scale, PairKind::kDiff) * tape.constant(std::move(diff_w)));
}

template <typename T>
Var<T> naive_pair_metric_loss(const Var<T>& codes, const std::vector<std::size_t>& artists,
                              const Var<T>& log_scale, double t,
                              const std::vector<std::size_t>& corpus_sizes) {
  const std::size_t B = codes.dim(0), D = codes.dim(1);
  if (B < 2) throw ShapeError("pair loss needs a batch of at least 2");
  check_artists(artists, B, corpus_sizes);
  const SizeSums sums = size_sums(corpus_sizes);
  const auto w = nested_weights(t, D);
  const double bd = static_cast<double>(B);
  const double pair_inclusion = sums.total * (sums.total - 1) / (bd * (bd - 1));

  Tensor<T> same_w(Shape{B, B, D}), diff_w(Shape{B, B, D});
  bool any_same = false, any_diff = false;
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      if (i == j) continue;
      const bool same = artists[i] == artists[j];
      const double coeff = pair_inclusion / (same ? sums.same : sums.diff);
      (same ? any_same : any_diff) = true;
      Tensor<T>& target = same ? same_w : diff_w;
      for (std::size_t d = 0; d < D; ++d) target[(i * B + j) * D + d] = static_cast<T>(coeff * w[d]);
    }
  }
  Tape<T>& tape = *codes.tape;
  const Var<T> sq = prefix_sq_dist(codes, codes);
  Var<T> total = zero_like(codes);
  if (any_same) {
    total = total + sum(apply_nested(sq, log_scale, PairKind::kSame) * tape.constant(std::move(same_w)));
  }
  if (any_diff) {
    total = total + sum(apply_nested(sq, log_scale, PairKind::kDiff) * tape.constant(std::move(diff_w)));
  }
  return total;
}

template <typename T>
Tensor<T> prefix_mask(std::size_t rows, std::size_t cols, const std::vector<std::size_t>& prefix) {
  if (prefix.size() != rows) throw ShapeError("prefix_mask: one prefix length per row required");
  Tensor<T> mask(Shape{rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    if (prefix[r] > cols) throw ShapeError("prefix_mask: prefix exceeds code length");
    for (std::size_t c = 0; c < prefix[r]; ++c) mask[r * cols + c] = T(1);
  }
  return mask;
}

template <typename T>
VaeLoss<T> vae_loss_given(Binder<T>& b, const ContentVAE<T>& vae, const Var<T>& images,
                          const Var<T>& style, const Tensor<T>& eps,
                          const std::vector<std::size_t>& prefix) {
  Tape<T>& tape = b.tape();
  const std::size_t B = images.dim(0), Dc = vae.content_dim();
  if (eps.shape() != Shape{B, Dc}) throw ShapeError("vae_loss: eps must be [B, content_dim]");
  auto [mu, logvar] = vae.encode(b, images);
  const Var<T> z = mu + exp(scale(logvar, T(0.5))) * tape.constant(eps);
  const Var<T> masked = z * tape.constant(prefix_mask<T>(B, Dc, prefix));
  const Var<T> recon = vae.decode(b, style, masked);
  const T inv_b = T(1) / static_cast<T>(B);
  VaeLoss<T> out;
  out.reconstruction = scale(sum(square(recon - images)), inv_b);
  const Var<T> kl_terms = square(mu) + exp(logvar) - add_scalar(logvar, T(1));
  out.kl = scale(sum(kl_terms), T(0.5) * inv_b);
  return out;
}

template <typename T>
VaeLoss<T> vae_loss(Binder<T>& b, const ContentVAE<T>& vae, const Var<T>& images,
                    const Var<T>& style, double t, RngStream& rng) {
  const std::size_t B = images.dim(0), Dc = vae.content_dim();
  const Tensor<T> eps = sample_gaussian<T>(rng, Shape{B, Dc});
  std::vector<std::size_t> prefix(B);
  for (auto& p : prefix) p = sample_prefix_length(t, Dc, rng);
  return vae_loss_given(b, vae, images, style, eps, prefix);
}

template <typename T>
double vae_reconstruction_exact(const ContentVAE<T>& vae, const Tensor<T>& images,
                                const Tensor<T>& style, const Tensor<T>& eps, double t) {
  const std::size_t B = images.dim(0), Dc = vae.content_dim();
  const auto w = nested_weights(t, Dc);
  double total = 0;
  for (std::size_t d = 1; d <= Dc; ++d) {
    Tape<T> tape;
    Binder<T> b(tape, vae.params);
    const auto loss = vae_loss_given(b, vae, tape.constant(images), tape.constant(style), eps,
                                     std::vector<std::size_t>(B, d));
    total += w[d - 1] * static_cast<double>(loss.reconstruction.value().item());
  }
  return total;
}

template <typename T>
Var<T> neg_log(const Var<T>& p) {
  const T eps = static_cast<T>(kProbabilityEpsilon);
  return neg(mean(log(clamp(p, eps, T(1) - eps))));
}

template <typename T>
Var<T> neg_log_complement(const Var<T>& p) {
  const T eps = static_cast<T>(kProbabilityEpsilon);
  return neg(mean(log(add_scalar(neg(clamp(p, eps, T(1) - eps)), T(1)))));
}

template <typename T>
Var<T> gan_d_loss(const std::array<Var<T>, 3>& real_probs, const std::array<Var<T>, 3>& fake_probs) {
  Var<T> total = neg_log(real_probs[0]) + neg_log_complement(fake_probs[0]);
  for (std::size_t m = 1; m < 3; ++m) {
    total = total + neg_log(real_probs[m]) + neg_log_complement(fake_probs[m]);
  }
  return scale(total, T(1) / T(3));
}

template <typename T>
Tensor<T> StyleNormalizer<T>::apply(const Tensor<T>& codes) const {
  const std::size_t n = codes.dim(0), D = codes.dim(1), d = dim();
  if (codes.rank() != 2 || D < d) throw ShapeError("normalizer: codes shorter than kept dims");
  Tensor<T> out(Shape{n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) out[i * d + k] = (codes[i * D + k] - mean[k]) / std[k];
  }
  return out;
}

template <typename T>
Tensor<T> StyleNormalizer<T>::inverse(const Tensor<T>& normalized) const {
  const std::size_t n = normalized.dim(0), d = dim();
  if (normalized.rank() != 2 || normalized.dim(1) != d) throw ShapeError("normalizer: bad shape");
  Tensor<T> out(Shape{n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) out[i * d + k] = normalized[i * d + k] * std[k] + mean[k];
  }
  return out;
}

template <typename T>
Var<T> StyleNormalizer<T>::apply(const Var<T>& codes) const {
  if (codes.shape().size() != 2 || codes.dim(1) < dim()) {
    throw ShapeError("normalizer: codes shorter than kept dims");
  }
  Tape<T>& tape = *codes.tape;
  return (slice_prefix(codes, dim()) - tape.constant(mean)) / tape.constant(std);
}

template <typename T>
StyleNormalizer<T> fit_style_normalizer(const Tensor<T>& codes, std::size_t kept) {
  if (codes.rank() != 2 || codes.dim(0) == 0) throw ConfigError("normalizer: empty code set");
  const std::size_t n = codes.dim(0), D = codes.dim(1);
  if (kept == 0 || kept > D) throw ConfigError("normalizer: kept dims out of range");
  StyleNormalizer<T> norm;
  norm.mean = Tensor<T>(Shape{kept});
  norm.std = Tensor<T>(Shape{kept});
  for (std::size_t k = 0; k < kept; ++k) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += codes[i * D + k];
    const double m = s / static_cast<double>(n);
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) ss += (codes[i * D + k] - m) * (codes[i * D + k] - m);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    if (!(sd > 0) || !std::isfinite(sd)) {
      throw NumericError("normalizer: style dimension " + std::to_string(k) +
                         " has zero variance (degenerate encoder)");
    }
    norm.mean[k] = static_cast<T>(m);
    norm.std[k] = static_cast<T>(sd);
  }
  return norm;
}

template <typename T>
std::pair<Var<T>, Var<T>> code_recovery_losses(const Var<T>& images, const GanCritics<T>& critics,
                                               const Var<T>& u, const Var<T>& v) {
  if (!critics.style_encoder || !critics.content_vae || !critics.normalizer) {
    throw ConfigError("generator loss: style encoder, content VAE and normalizer required");
  }
  if (critics.normalizer->dim() != u.dim(1)) {
    throw ShapeError("generator loss: normalizer has " + std::to_string(critics.normalizer->dim()) +
                     " dims, style code has " + std::to_string(u.dim(1)));
  }
  Tape<T>& tape = *images.tape;
  const T inv_b = T(1) / static_cast<T>(images.dim(0));
  Binder<T> sb(tape, critics.style_encoder->params);
  const Var<T> s_hat = critics.normalizer->apply(critics.style_encoder->forward(sb, images));
  const Var<T> style = scale(sum(square(s_hat - u)), inv_b);
  Binder<T> eb(tape, critics.content_vae->params);
  const Var<T> c_hat = slice_prefix(critics.content_vae->encode(eb, images).first, v.dim(1));
  const Var<T> content = scale(sum(square(c_hat - v)), inv_b);
  return {style, content};
}

template <typename T>
GanGeneratorLoss<T> gan_g_loss(Binder<T>& gen_binder, const Generator<T>& g,
                               const GanCritics<T>& critics, const Var<T>& u, const Var<T>& v,
                               const Var<T>& w, const GanWeights& weights, RngStream& rng) {
  if (!critics.consortium) throw ConfigError("generator loss: consortium required");
  Tape<T>& tape = gen_binder.tape();
  GanGeneratorLoss<T> out;
  out.images = g.generate(gen_binder, u, v, w);
  const auto& c = *critics.consortium;
  std::array<Binder<T>, 3> binders{Binder<T>(tape, c.members[0].params),
                                   Binder<T>(tape, c.members[1].params),
                                   Binder<T>(tape, c.members[2].params)};
  const auto probs = c.forward(binders, out.images, rng);
  out.gan = scale(neg_log(probs[0]) + neg_log(probs[1]) + neg_log(probs[2]), T(1) / T(3));
  std::tie(out.style, out.content) = code_recovery_losses(out.images, critics, u, v);
  out.total = out.gan + scale(out.style, static_cast<T>(weights.style)) +
              scale(out.content, static_cast<T>(weights.content));
  return out;
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::size_t>& labels) {
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  if (labels.size() != N) throw ShapeError("cross_entropy: one label per row required");
  const auto& x = logits.value();
  Tensor<T> shift(Shape{N, 1}), onehot(Shape{N, K});
  for (std::size_t i = 0; i < N; ++i) {
    if (labels[i] >= K) throw ConfigError("cross_entropy: label out of range");
    T m = x[i * K];
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, x[i * K + k]);
    shift[i] = m;
    onehot[i * K + labels[i]] = T(1);
  }
  Tape<T>& tape = *logits.tape;
  const Var<T> m = tape.constant(shift);
  // log-sum-exp with a constant shift; exact for any shift.
  const Var<T> lse = log(sum_axis(exp(logits - m), 1)) + reshape(m, Shape{N});
  const Var<T> picked = sum_axis(logits * tape.constant(onehot), 1);
  return mean(lse - picked);
}

#define STYLESPACE_INSTANTIATE(T)                                                                \
  template Var<T> nested_pair_loss(const Var<T>&, const Var<T>&, const Var<T>&, double, PairKind); \
  template struct MetricHead<T>;                                                                 \
  template MetricHead<T> build_metric_head<T>(std::size_t, std::size_t, RngStream&);             \
  template Var<T> centroid_metric_loss(const Var<T>&, const std::vector<std::size_t>&,           \
                                       const Var<T>&, const Var<T>&, double,                     \
                                       const std::vector<std::size_t>&);                         \
  template Var<T> naive_pair_metric_loss(const Var<T>&, const std::vector<std::size_t>&,         \
                                         const Var<T>&, double, const std::vector<std::size_t>&);\
  template Tensor<T> prefix_mask<T>(std::size_t, std::size_t, const std::vector<std::size_t>&);  \
  template VaeLoss<T> vae_loss_given(Binder<T>&, const ContentVAE<T>&, const Var<T>&,            \
                                     const Var<T>&, const Tensor<T>&,                            \
                                     const std::vector<std::size_t>&);                           \
  template VaeLoss<T> vae_loss(Binder<T>&, const ContentVAE<T>&, const Var<T>&, const Var<T>&,   \
                               double, RngStream&);                                              \
  template double vae_reconstruction_exact(const ContentVAE<T>&, const Tensor<T>&,               \
                                           const Tensor<T>&, const Tensor<T>&, double);          \
  template Var<T> neg_log(const Var<T>&);                                                        \
  template Var<T> neg_log_complement(const Var<T>&);                                             \
  template Var<T> gan_d_loss(const std::array<Var<T>, 3>&, const std::array<Var<T>, 3>&);        \
  template struct StyleNormalizer<T>;                                                            \
  template StyleNormalizer<T> fit_style_normalizer(const Tensor<T>&, std::size_t);               \
  template std::pair<Var<T>, Var<T>> code_recovery_losses(const Var<T>&, const GanCritics<T>&,   \
                                                          const Var<T>&, const Var<T>&);         \
  template GanGeneratorLoss<T> gan_g_loss(Binder<T>&, const Generator<T>&, const GanCritics<T>&, \
                                          const Var<T>&, const Var<T>&, const Var<T>&,           \
                                          const GanWeights&, RngStream&);                        \
  template Var<T> cross_entropy(const Var<T>&, const std::vector<std::size_t>&);

STYLESPACE_INSTANTIATE(float)
STYLESPACE_INSTANTIATE(double)

}  // namespace stylespace
