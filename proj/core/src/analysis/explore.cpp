#include "stylespace/analysis/explore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "stylespace/error.hpp"

namespace stylespace {
namespace {

Tensor<Real> zero_or(const Tensor<Real>& noise, std::size_t n, std::size_t d) {
  if (noise.empty()) return Tensor<Real>(Shape{n, d});
  if (noise.rank() != 2 || noise.dim(0) != n || noise.dim(1) != d) {
    throw ShapeError("noise must be [" + std::to_string(n) + ", " + std::to_string(d) + "]");
  }
  return noise;
}

Tensor<Real> generate_batched(const Generator<Real>& g, const Tensor<Real>& u, const Tensor<Real>& v,
                              const Tensor<Real>& w) {
  constexpr std::size_t kBatch = 32;
  const std::size_t n = u.dim(0);
  Tensor<Real> out;
  std::size_t offset = 0;
  for (std::size_t start = 0; start < n; start += kBatch) {
    const std::size_t m = std::min(n, start + kBatch) - start;
    auto rows = [&](const Tensor<Real>& t) {
      Tensor<Real> r(Shape{m, t.dim(1)});
      std::copy_n(t.raw() + start * t.dim(1), m * t.dim(1), r.raw());
      return r;
    };
    const Tensor<Real> part = g.generate(rows(u), rows(v), rows(w));
    if (out.empty()) {
      Shape s = part.shape();
      s[0] = n;
      out = Tensor<Real>(s);
    }
    std::copy_n(part.raw(), part.size(), out.raw() + offset);
    offset += part.size();
  }
  return out;
}

}  // namespace

Tensor<Real> ClassifierBaseline::features(const Tensor<Real>& images) const {
  return map_batches(images, 64, [&](const Tensor<Real>& x) { return model.features.encode(x); });
}

double ClassifierBaseline::accuracy(const ArtistCorpus& corpus) const {
  const Tensor<Real> logits = map_batches(corpus_tensor<Real>(corpus), 64, [&](const Tensor<Real>& x) {
    Tape<Real> tape;
    Binder<Real> fb(tape, std::as_const(model.features.params));
    Binder<Real> hb(tape, std::as_const(model.head_params));
    return model.forward(fb, hb, tape.constant(x)).value();
  });
  const auto labels = corpus.labels();
  const std::size_t K = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Real* row = logits.raw() + i * K;
    hits += static_cast<std::size_t>(std::max_element(row, row + K) - row) == labels[i];
  }
  return labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(labels.size());
}

ClassifierBaseline train_classifier_baseline(const ArtistCorpus& train, const TrainConfig& config) {
  config.validate();
  RngStream init(config.seed, stream_id("init-classifier"));
  ClassifierBaseline out{build_classifier<Real>(config.style_spec(), train.num_artists(), init), {}};
  auto& model = out.model;
  const Tensor<Real> bank = corpus_tensor<Real>(train);
  const BatchIterator batches(train, config.style.batch, config.seed);
  Optimizer<Real> opt_features(config.style.optimizer), opt_head(config.style.optimizer);
  double interval = 0;
  for (std::uint64_t step = 0; step < config.style.steps; ++step) {
    const Batch batch = batches.at(step);
    Tape<Real> tape;
    Binder<Real> fb(tape, model.features.params);
    Binder<Real> hb(tape, model.head_params);
    const Var<Real> loss =
        cross_entropy(model.forward(fb, hb, tape.constant(gather_images(bank, batch.indices))), batch.artists);
    tape.backward(loss);
    opt_features.step(parameter_list(model.features.params));
    opt_head.step(parameter_list(model.head_params));
    model.features.params.zero_grad();
    model.head_params.zero_grad();
    interval += loss.value().item();
    if ((step + 1) % config.log_every == 0) {
      out.history.record(step + 1, "loss", interval / static_cast<double>(config.log_every));
      spdlog::info("classifier step {}: loss={}", step + 1, interval / static_cast<double>(config.log_every));
      interval = 0;
    }
  }
  return out;
}

std::array<double, 4> bilinear_weights(std::size_t r, std::size_t c, std::size_t n) {
  if (n < 2) throw ConfigError("interpolation grid needs n >= 2");
  if (r >= n || c >= n) throw ConfigError("interpolation cell outside the grid");
  const double span = static_cast<double>(n - 1);
  const double wr[2] = {static_cast<double>(n - 1 - r) / span, static_cast<double>(r) / span};
  const double wc[2] = {static_cast<double>(n - 1 - c) / span, static_cast<double>(c) / span};
  return {wr[0] * wc[0], wr[0] * wc[1], wr[1] * wc[0], wr[1] * wc[1]};
}

Tensor<Real> interpolate_codes(const Tensor<Real>& corners, std::size_t n) {
  if (corners.rank() != 2 || corners.dim(0) != 4) throw ShapeError("interpolation needs corners [4, d]");
  const std::size_t d = corners.dim(1);
  Tensor<Real> out(Shape{n * n, d});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const auto w = bilinear_weights(r, c, n);
      for (std::size_t k = 0; k < d; ++k) {
        double v = 0;
        for (std::size_t q = 0; q < 4; ++q) v += w[q] * corners[q * d + k];
        out[(r * n + c) * d + k] = static_cast<Real>(v);
      }
    }
  }
  return out;
}

std::vector<ImageRGB> tensor_to_rgb(const Tensor<Real>& images) {
  std::vector<ImageRGB> out;
  for (std::size_t i = 0; i < images.dim(0); ++i) out.push_back(lab_to_rgb(tensor_to_image(images, i)));
  return out;
}

ImageGrid interpolate_styles(const Generator<Real>& g, const Tensor<Real>& corners,
                             const Tensor<Real>& content, const Tensor<Real>& noise, std::size_t n) {
  const CodeLayout& layout = g.layout;
  if (corners.rank() != 2 || corners.dim(1) != layout.d_style) {
    throw ShapeError("interpolation corners must have d_style columns");
  }
  const Tensor<Real> u = interpolate_codes(corners, n);
  auto repeat = [&](const Tensor<Real>& row, std::size_t d) {
    const Tensor<Real> one = zero_or(row, 1, d);
    Tensor<Real> out(Shape{n * n, d});
    for (std::size_t i = 0; i < n * n; ++i) std::copy_n(one.raw(), d, out.raw() + i * d);
    return out;
  };
  const Tensor<Real> images =
      generate_batched(g, u, repeat(content, layout.d_content), repeat(noise, layout.d_noise));
  return {n, n, tensor_to_rgb(images)};
}

void SweepSpec::validate(std::size_t d_style) const {
  if (dim >= d_style) {
    throw ConfigError("sweep dimension " + std::to_string(dim) + " outside [0, " + std::to_string(d_style) + ")");
  }
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (base_codes == 0) throw ConfigError("sweep needs at least one base code");
}

SweepCodes sweep_codes(const CodeLayout& layout, const SweepSpec& spec, RngStream& rng) {
  spec.validate(layout.d_style);
  const std::size_t B = spec.base_codes, V = spec.values.size(), n = B * V;
  const Tensor<Real> u = sample_gaussian<Real>(rng, {B, layout.d_style});
  const Tensor<Real> v = sample_gaussian<Real>(rng, {B, layout.d_content});
  const Tensor<Real> w = sample_gaussian<Real>(rng, {B, layout.d_noise});
  SweepCodes out{Tensor<Real>(Shape{n, layout.d_style}), Tensor<Real>(Shape{n, layout.d_content}),
                 Tensor<Real>(Shape{n, layout.d_noise})};
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < V; ++j) {
      const std::size_t row = b * V + j;
      std::copy_n(u.raw() + b * layout.d_style, layout.d_style, out.style.raw() + row * layout.d_style);
      std::copy_n(v.raw() + b * layout.d_content, layout.d_content, out.content.raw() + row * layout.d_content);
      std::copy_n(w.raw() + b * layout.d_noise, layout.d_noise, out.noise.raw() + row * layout.d_noise);
      out.style[row * layout.d_style + spec.dim] = static_cast<Real>(spec.values[j]);
    }
  }
  return out;
}

ImageGrid dimension_sweep(const Generator<Real>& g, const SweepSpec& spec, RngStream& rng) {
  const SweepCodes codes = sweep_codes(g.layout, spec, rng);
  return {spec.base_codes, spec.values.size(),
          tensor_to_rgb(generate_batched(g, codes.style, codes.content, codes.noise))};
}

RankedImages rank_images_by_dimension(const Tensor<Real>& codes, const std::vector<std::string>& ids,
                                      std::size_t dim, double fraction) {
  if (!(fraction > 0 && fraction <= 0.5)) throw ConfigError("rank fraction must lie in (0, 0.5]");
  if (codes.rank() != 2 || dim >= codes.dim(1)) throw ConfigError("rank dimension out of range");
  const std::size_t n = codes.dim(0);
  if (ids.size() != n) throw ShapeError("rank: one id per code required");
  RankedImages out;
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = codes[i * codes.dim(1) + dim];
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (out.values[a] != out.values[b]) return out.values[a] < out.values[b];
    return ids[a] < ids[b];
  });
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  out.lowest.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  out.highest.assign(order.rbegin(), order.rbegin() + static_cast<std::ptrdiff_t>(k));
  return out;
}

Tensor<Real> reconstruct(const Pipeline& pipeline, const Tensor<Real>& images, const Tensor<Real>& noise) {
  return style_transfer(pipeline, images, images, noise);
}

Tensor<Real> style_transfer(const Pipeline& pipeline, const Tensor<Real>& content_images,
                            const Tensor<Real>& style_images, const Tensor<Real>& noise) {
  if (!pipeline.generator) throw ConfigError("pipeline: generator not trained");
  if (content_images.dim(0) != style_images.dim(0)) {
    throw ShapeError("style transfer pairs content and style images one to one");
  }
  const std::size_t n = content_images.dim(0);
  return generate_batched(*pipeline.generator, pipeline.style_codes(style_images),
                          pipeline.content_codes(content_images),
                          zero_or(noise, n, pipeline.generator->layout.d_noise));
}

}  // namespace stylespace
