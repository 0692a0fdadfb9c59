#include "stylespace/trainer/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <utility>

#include <spdlog/spdlog.h>

#include "stylespace/analysis/metrics.hpp"
#include "stylespace/error.hpp"

namespace stylespace {
namespace {

constexpr std::size_t kInferenceBatch = 64;

}  // namespace

Tensor<Real> map_batches(const Tensor<Real>& bank, std::size_t batch,
                         const std::function<Tensor<Real>(const Tensor<Real>&)>& fn) {
  const std::size_t n = bank.dim(0);
  std::vector<Tensor<Real>> parts;
  for (std::size_t start = 0; start < n; start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + batch); ++i) idx.push_back(i);
    parts.push_back(fn(gather_images(bank, idx)));
  }
  if (parts.empty()) throw ShapeError("map_batches: empty input");
  Shape shape = parts.front().shape();
  shape[0] = n;
  Tensor<Real> out(shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy_n(p.raw(), p.size(), out.raw() + offset);
    offset += p.size();
  }
  return out;
}

Tensor<Real> Pipeline::style_codes(const Tensor<Real>& images) const {
  if (!style || !normalizer) throw ConfigError("pipeline: style encoder not trained and pruned");
  return map_batches(images, kInferenceBatch,
                     [&](const Tensor<Real>& x) { return normalizer->apply(style->encode(x)); });
}

Tensor<Real> Pipeline::content_codes(const Tensor<Real>& images) const {
  if (!vae || d_content == 0) throw ConfigError("pipeline: content encoder not trained and pruned");
  return map_batches(images, kInferenceBatch, [&](const Tensor<Real>& x) {
    const Tensor<Real> mean = vae->encode_mean(x);
    const std::size_t n = mean.dim(0), D = mean.dim(1);
    Tensor<Real> out(Shape{n, d_content});
    for (std::size_t i = 0; i < n; ++i) std::copy_n(mean.raw() + i * D, d_content, out.raw() + i * d_content);
    return out;
  });
}

void write_pipeline(Checkpoint& ckpt, const Pipeline& p) {
  for (const auto& [k, v] : parse_key_values(to_text(p.config))) ckpt.meta["config." + k] = v;
  if (p.style) {
    ckpt.meta["arch.style"] = to_string(p.style->spec);
    put_parameters(ckpt, "S/", p.style->params);
  }
  if (p.head) {
    ckpt.meta["metric.artists"] = std::to_string(p.head->num_artists());
    put_parameters(ckpt, "head/", p.head->params);
  }
  if (p.normalizer) {
    ckpt.meta["d_style"] = std::to_string(p.d_style());
    ckpt.put("norm/mean", p.normalizer->mean);
    ckpt.put("norm/std", p.normalizer->std);
  }
  if (p.vae) {
    ckpt.meta["arch.vae"] = to_string(p.vae->spec);
    ckpt.meta["vae.style_dim"] = std::to_string(p.vae->style_dim);
    ckpt.meta["d_content"] = std::to_string(p.d_content);
    put_parameters(ckpt, "vae/", p.vae->params);
  }
  if (p.generator) {
    ckpt.meta["arch.generator"] = to_string(p.generator->spec);
    ckpt.meta["d_noise"] = std::to_string(p.generator->layout.d_noise);
    put_parameters(ckpt, "G/", p.generator->params);
  }
  if (p.consortium) {
    ckpt.meta["arch.discriminator"] = to_string(p.consortium->members[0].spec);
    for (std::size_t m = 0; m < 3; ++m) {
      put_parameters(ckpt, "D" + std::to_string(m) + "/", p.consortium->members[m].params);
    }
  }
}

Pipeline read_pipeline(const Checkpoint& ckpt) {
  Pipeline p;
  std::string text;
  for (const auto& [k, v] : ckpt.meta) {
    if (k.rfind("config.", 0) == 0) text += k.substr(7) + "=" + v + "\n";
  }
  p.config = parse_train_config(text, TrainConfig::desk());
  RngStream rng(0, 0);
  if (ckpt.meta.count("arch.style")) {
    p.style = build_style_encoder<Real>(parse_arch_spec(ckpt.meta_at("arch.style")), rng);
    get_parameters(ckpt, "S/", p.style->params);
  }
  if (ckpt.meta.count("metric.artists")) {
    if (!p.style) throw FormatError("checkpoint has metric styles without a style encoder");
    p.head = build_metric_head<Real>(ckpt.meta_u64("metric.artists"), p.style->dim(), rng);
    get_parameters(ckpt, "head/", p.head->params);
  }
  if (ckpt.meta.count("d_style")) {
    StyleNormalizer<Real> norm;
    norm.mean = ckpt.tensor<Real>("norm/mean");
    norm.std = ckpt.tensor<Real>("norm/std");
    if (norm.mean.size() != ckpt.meta_u64("d_style") || norm.std.size() != norm.mean.size()) {
      throw FormatError("checkpoint normalizer does not match d_style");
    }
    p.normalizer = std::move(norm);
  }
  if (ckpt.meta.count("arch.vae")) {
    p.vae = build_content_vae<Real>(parse_arch_spec(ckpt.meta_at("arch.vae")),
                                    ckpt.meta_u64("vae.style_dim"), rng);
    get_parameters(ckpt, "vae/", p.vae->params);
    p.d_content = ckpt.meta_u64("d_content");
  }
  if (ckpt.meta.count("arch.generator")) {
    const CodeLayout layout{p.d_style(), p.d_content, ckpt.meta_u64("d_noise")};
    p.generator = build_generator<Real>(parse_arch_spec(ckpt.meta_at("arch.generator")), layout, rng);
    get_parameters(ckpt, "G/", p.generator->params);
  }
  if (ckpt.meta.count("arch.discriminator")) {
    const auto member = parse_arch_spec(ckpt.meta_at("arch.discriminator"));
    p.consortium = build_consortium<Real>(member, p.config.resolution, rng);
    for (std::size_t m = 0; m < 3; ++m) {
      get_parameters(ckpt, "D" + std::to_string(m) + "/", p.consortium->members[m].params);
    }
  }
  return p;
}

DataSplits prepare_data(const TrainConfig& config) {
  config.validate();
  ArtistCorpus corpus;
  if (config.data_dir.empty()) {
    SyntheticCorpusConfig synth = config.synth;
    synth.resolution = config.resolution;
    RngStream rng(config.seed, stream_id("corpus"));
    corpus = generate_synthetic_corpus(synth, rng);
  } else {
    corpus = ingest_directory(config.data_dir, IngestOptions{config.min_works});
    if (corpus.resolution != config.resolution) {
      throw ConfigError("data.dir holds " + std::to_string(corpus.resolution) +
                        " px images but resolution is " + std::to_string(config.resolution));
    }
  }
  RngStream split_rng(config.seed, stream_id("split"));
  auto [train_all, test] = split_train_test(corpus, config.split, split_rng);
  SplitSpec inner = config.split;
  inner.min_works = std::min(inner.min_works, inner.min_test + 1);
  RngStream val_rng(config.seed, stream_id("validation-split"));
  auto [train, validation] = split_train_test(train_all, inner, val_rng);
  spdlog::info("data: {} artists, {} train / {} validation / {} test images", corpus.num_artists(),
               train.size(), validation.size(), test.size());
  return {std::move(train), std::move(validation), std::move(test)};
}

void History::record(std::uint64_t step, const std::string& metric, double value) {
  entries_.push_back({step, metric, value});
}

std::vector<double> History::values(const std::string& metric) const {
  std::vector<double> out;
  for (const auto& e : entries_) {
    if (e.metric == metric) out.push_back(e.value);
  }
  return out;
}

void History::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "step,metric,value\n";
  for (const auto& e : entries_) out << e.step << ',' << e.metric << ',' << exact_double(e.value) << '\n';
}

void History::save(Checkpoint& ckpt) const {
  std::string names;
  Tensor<double> steps(Shape{entries_.size()}), values(Shape{entries_.size()});
  std::vector<std::string> order;
  Tensor<double> metric_index(Shape{entries_.size()});
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto it = std::find(order.begin(), order.end(), entries_[i].metric);
    if (it == order.end()) it = order.insert(order.end(), entries_[i].metric);
    steps[i] = static_cast<double>(entries_[i].step);
    values[i] = entries_[i].value;
    metric_index[i] = static_cast<double>(it - order.begin());
  }
  for (std::size_t i = 0; i < order.size(); ++i) names += (i ? "," : "") + order[i];
  ckpt.meta["history.metrics"] = names;
  ckpt.put("history/step", steps);
  ckpt.put("history/metric", metric_index);
  ckpt.put("history/value", values);
}

void History::load(const Checkpoint& ckpt) {
  entries_.clear();
  if (!ckpt.has("history/step")) return;
  std::vector<std::string> order;
  std::string names = ckpt.meta_at("history.metrics");
  for (std::size_t pos = 0; !names.empty();) {
    const auto comma = names.find(',', pos);
    order.push_back(names.substr(pos, comma - pos));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  const auto& steps = ckpt.tensor<double>("history/step");
  const auto& metric = ckpt.tensor<double>("history/metric");
  const auto& values = ckpt.tensor<double>("history/value");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto m = static_cast<std::size_t>(metric[i]);
    if (m >= order.size()) throw FormatError("checkpoint history names an unknown metric");
    entries_.push_back({static_cast<std::uint64_t>(steps[i]), order[m], values[i]});
  }
}

std::vector<std::size_t> default_prune_candidates(std::size_t D) {
  std::vector<std::size_t> out;
  for (std::size_t d = 1; d < D; d *= 2) out.push_back(d);
  out.push_back(D);
  return out;
}

PruneReport choose_dimensions(const std::string& metric, const std::vector<std::size_t>& candidates,
                              const std::vector<double>& values, double rho, bool higher_is_better) {
  if (candidates.empty()) throw ConfigError("prune: no candidate dimension counts");
  if (values.size() != candidates.size()) throw ShapeError("prune: one value per candidate required");
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (candidates[i] <= candidates[i - 1]) throw ConfigError("prune: candidates must ascend");
  }
  if (!(rho > 0 && rho <= 1)) throw ConfigError("prune: rho must lie in (0, 1]");
  const double best = higher_is_better ? *std::max_element(values.begin(), values.end())
                                       : *std::min_element(values.begin(), values.end());
  PruneReport report{metric, candidates, values, candidates.back()};
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const bool good = higher_is_better ? values[i] >= rho * best : values[i] <= best / rho;
    if (good) {
      report.chosen = candidates[i];
      break;
    }
  }
  return report;
}

PruneReport prune_style_dimensions(const Tensor<Real>& codes, const Tensor<Real>& centroids,
                                   const std::vector<std::size_t>& labels,
                                   const std::vector<std::size_t>& candidates, double rho) {
  if (candidates.empty()) throw ConfigError("prune: no candidate dimension counts");
  if (candidates.back() > codes.dim(1)) throw ConfigError("prune: candidate exceeds code length");
  std::vector<double> acc;
  for (const auto d : candidates) acc.push_back(classification_accuracy(codes, centroids, labels, d));
  return choose_dimensions("accuracy", candidates, acc, rho, true);
}

std::vector<double> content_reconstruction_errors(const ContentVAE<Real>& vae, const Tensor<Real>& images,
                                                  const Tensor<Real>& styles, std::size_t d) {
  const std::size_t n = images.dim(0), Dc = vae.content_dim();
  if (d > Dc) throw ConfigError("prune: candidate exceeds content length");
  const Tensor<Real> mean = map_batches(images, kInferenceBatch,
                                        [&](const Tensor<Real>& x) { return vae.encode_mean(x); });
  std::vector<double> errors(n, 0.0);
  for (std::size_t start = 0; start < n; start += kInferenceBatch) {
    const std::size_t m = std::min(n, start + kInferenceBatch) - start;
    Tensor<Real> content(Shape{m, Dc}), style(Shape{m, styles.dim(1)});
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(mean.raw() + (start + i) * Dc, d, content.raw() + i * Dc);
      std::copy_n(styles.raw() + (start + i) * styles.dim(1), styles.dim(1), style.raw() + i * styles.dim(1));
    }
    Tape<Real> tape;
    Binder<Real> b(tape, std::as_const(vae.params));
    const Tensor<Real>& out = vae.decode(b, tape.constant(style), tape.constant(content)).value();
    const std::size_t per = out.size() / m;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < per; ++k) {
        const double diff = static_cast<double>(out[i * per + k]) - images[(start + i) * per + k];
        errors[start + i] += diff * diff;
      }
    }
  }
  return errors;
}

double content_reconstruction_error(const ContentVAE<Real>& vae, const Tensor<Real>& images,
                                    const Tensor<Real>& styles, std::size_t d) {
  const auto errors = content_reconstruction_errors(vae, images, styles, d);
  return std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
}

PruneReport prune_content_dimensions(const ContentVAE<Real>& vae, const Tensor<Real>& images,
                                     const Tensor<Real>& styles,
                                     const std::vector<std::size_t>& candidates, double rho) {
  if (candidates.empty()) throw ConfigError("prune: no candidate dimension counts");
  std::vector<double> err;
  for (const auto d : candidates) err.push_back(content_reconstruction_error(vae, images, styles, d));
  return choose_dimensions("reconstruction", candidates, err, rho, false);
}

PruneReport apply_style_pruning(Pipeline& p, const ArtistCorpus& train, const ArtistCorpus& eval) {
  if (!p.style || !p.head) throw ConfigError("prune: style stage has not run");
  const std::size_t D = p.style->dim();
  const auto candidates = p.config.style_kept ? std::vector<std::size_t>{p.config.style_kept}
                          : p.config.prune_candidates.empty() ? default_prune_candidates(D)
                                                              : p.config.prune_candidates;
  const auto encode = [&](const Tensor<Real>& x) { return p.style->encode(x); };
  const Tensor<Real> eval_codes = map_batches(corpus_tensor<Real>(eval), kInferenceBatch, encode);
  const Tensor<Real>& styles = p.head->params[p.head->styles].value;
  PruneReport report = prune_style_dimensions(eval_codes, styles, eval.labels(), candidates, p.config.prune_rho);
  const Tensor<Real> train_codes = map_batches(corpus_tensor<Real>(train), kInferenceBatch, encode);
  p.normalizer = fit_style_normalizer(train_codes, report.chosen);
  spdlog::info("prune: kept {} of {} style dimensions", report.chosen, D);
  return report;
}

PruneReport apply_content_pruning(Pipeline& p, const ArtistCorpus& eval) {
  if (!p.vae) throw ConfigError("prune: VAE stage has not run");
  const std::size_t D = p.vae->content_dim();
  const auto candidates = p.config.content_kept ? std::vector<std::size_t>{p.config.content_kept}
                          : p.config.prune_candidates.empty() ? default_prune_candidates(D)
                                                              : p.config.prune_candidates;
  const Tensor<Real> images = corpus_tensor<Real>(eval);
  PruneReport report =
      prune_content_dimensions(*p.vae, images, p.style_codes(images), candidates, p.config.prune_rho);
  p.d_content = report.chosen;
  spdlog::info("prune: kept {} of {} content dimensions", report.chosen, D);
  return report;
}

void write_prune_csv(const std::filesystem::path& path, const PruneReport& report) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "dims," << report.metric << ",chosen\n";
  for (std::size_t i = 0; i < report.candidates.size(); ++i) {
    out << report.candidates[i] << ',' << exact_double(report.values[i]) << ','
        << (report.candidates[i] == report.chosen ? 1 : 0) << '\n';
  }
}

double style_recovery_loss(const Pipeline& p, std::size_t n, std::uint64_t seed) {
  if (!p.generator) throw ConfigError("pipeline: generator not trained");
  const CodeLayout layout = p.generator->layout;
  RngStream rng(seed, stream_id("style-probe"));
  const Tensor<Real> u = sample_gaussian<Real>(rng, {n, layout.d_style});
  const Tensor<Real> v = sample_gaussian<Real>(rng, {n, layout.d_content});
  const Tensor<Real> w = sample_gaussian<Real>(rng, {n, layout.d_noise});
  double total = 0;
  for (std::size_t start = 0; start < n; start += kInferenceBatch) {
    const std::size_t m = std::min(n, start + kInferenceBatch) - start;
    auto rows = [&](const Tensor<Real>& t) {
      const std::size_t d = t.dim(1);
      Tensor<Real> out(Shape{m, d});
      std::copy_n(t.raw() + start * d, m * d, out.raw());
      return out;
    };
    const Tensor<Real> ub = rows(u);
    const Tensor<Real> s = p.style_codes(p.generator->generate(ub, rows(v), rows(w)));
    for (std::size_t k = 0; k < s.size(); ++k) {
      const double diff = static_cast<double>(s[k]) - ub[k];
      total += diff * diff;
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace stylespace
