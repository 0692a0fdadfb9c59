#include "stylespace/trainer/stages.hpp"

#include <cmath>
#include <utility>

#include <spdlog/spdlog.h>

#include "stylespace/analysis/metrics.hpp"
#include "stylespace/error.hpp"

namespace stylespace {
namespace {

void save_optimizer(Checkpoint& ckpt, const std::string& owner, const Optimizer<Real>& opt) {
  ckpt.meta["opt." + owner + ".steps"] = std::to_string(opt.steps());
  put_tensor_map(ckpt, "opt/" + owner + "/", opt.state());
}

void load_optimizer(const Checkpoint& ckpt, const std::string& owner, Optimizer<Real>& opt) {
  opt.restore(get_tensor_map<Real>(ckpt, "opt/" + owner + "/"), ckpt.meta_u64("opt." + owner + ".steps"));
}

RngStream init_rng(const TrainConfig& config, const char* what) {
  return RngStream(config.seed, stream_id(what));
}

void zero_all(ParameterStore<Real>& store) { store.zero_grad(); }

}  // namespace

std::uint64_t StageTrainer::max_steps() const { return options().steps; }

StepMetrics StageTrainer::advance() {
  StepMetrics metrics;
  try {
    metrics = train_step(step_);
    for (const auto& [name, value] : metrics) {
      if (!std::isfinite(value)) throw NumericError(stage() + ": " + name + " is not finite");
    }
  } catch (const NumericError& e) {
    spdlog::error("{} stage aborted at step {}: {}", stage(), step_, e.what());
    write_file(stage() + "-diagnostic.ssg");
    throw;
  }
  ++step_;
  finish_step(metrics);
  return metrics;
}

void StageTrainer::finish_step(const StepMetrics& metrics) {
  const auto& config = pipeline_.config;
  for (const auto& [name, value] : metrics) interval_sum_[name] += value;
  ++interval_count_;
  if (step_ % config.log_every == 0) {
    std::string line;
    for (const auto& [name, value] : metrics) {
      const double mean = interval_sum_[name] / static_cast<double>(interval_count_);
      history_.record(step_, name, mean);
      line += " " + name + "=" + std::to_string(mean);
    }
    spdlog::info("{} step {}:{}", stage(), step_, line);
    interval_sum_.clear();
    interval_count_ = 0;
  }
  if (config.eval_every > 0 && step_ % config.eval_every == 0) {
    if (const auto score = evaluate()) {
      history_.record(step_, "eval", *score);
      if (!best_eval_ || *score > *best_eval_) {
        best_eval_ = *score;
        evals_since_best_ = 0;
      } else if (++evals_since_best_ >= config.patience) {
        stopped_ = true;
        spdlog::info("{} stage: no improvement in {} evaluations, stopping at step {}", stage(),
                     config.patience, step_);
      }
    }
  }
  if (config.checkpoint_every > 0 && step_ % config.checkpoint_every == 0) write_file(stage() + ".ssg");
}

void StageTrainer::run(std::uint64_t until) {
  const std::uint64_t target = until ? until : max_steps();
  while (step_ < target && !stopped_) advance();
  write_file(stage() + ".ssg");
  if (!out_dir_.empty()) history_.write_csv(out_dir_ / (stage() + "-history.csv"));
}

void StageTrainer::write_file(const std::string& name) const {
  if (out_dir_.empty()) return;
  save_checkpoint(out_dir_ / name, checkpoint());
}

Checkpoint StageTrainer::checkpoint() const {
  Checkpoint ckpt;
  write_pipeline(ckpt, pipeline_);
  ckpt.meta["stage"] = stage();
  ckpt.meta["step"] = std::to_string(step_);
  ckpt.meta["seed"] = std::to_string(pipeline_.config.seed);
  ckpt.meta["interval.count"] = std::to_string(interval_count_);
  for (const auto& [name, sum] : interval_sum_) ckpt.meta["interval." + name] = exact_double(sum);
  if (best_eval_) ckpt.meta["eval.best"] = exact_double(*best_eval_);
  ckpt.meta["eval.since_best"] = std::to_string(evals_since_best_);
  ckpt.meta["stopped"] = stopped_ ? "1" : "0";
  save_optimizers(ckpt);
  history_.save(ckpt);
  return ckpt;
}

void StageTrainer::restore(const Checkpoint& ckpt) {
  if (ckpt.meta_at("stage") != stage()) {
    throw FormatError("checkpoint belongs to stage '" + ckpt.meta_at("stage") + "', not '" + stage() + "'");
  }
  step_ = ckpt.meta_u64("step");
  interval_count_ = ckpt.meta_u64("interval.count");
  interval_sum_.clear();
  for (const auto& [k, v] : ckpt.meta) {
    if (k.rfind("interval.", 0) == 0 && k != "interval.count") interval_sum_[k.substr(9)] = ckpt.meta_double(k);
  }
  best_eval_.reset();
  if (ckpt.meta.count("eval.best")) best_eval_ = ckpt.meta_double("eval.best");
  evals_since_best_ = ckpt.meta_u64("eval.since_best");
  stopped_ = ckpt.meta_at("stopped") == "1";
  load_optimizers(ckpt);
  history_.load(ckpt);
}

// ---------------------------------------------------------------------------

StyleTrainer::StyleTrainer(Pipeline& pipeline, const ArtistCorpus& train, const ArtistCorpus* validation)
    : StageTrainer(pipeline),
      bank_(corpus_tensor<Real>(train)),
      sizes_(train.artist_sizes()),
      batches_(train, pipeline.config.style.batch, pipeline.config.seed),
      validation_(validation),
      opt_encoder_(pipeline.config.style.optimizer),
      opt_head_(pipeline.config.style.optimizer) {
  auto& config = pipeline_.config;
  config.validate();
  if (train.resolution != config.resolution) throw ConfigError("style: corpus resolution differs from config");
  if (!pipeline_.style) {
    auto rng = init_rng(config, "init-style");
    pipeline_.style = build_style_encoder<Real>(config.style_spec(), rng);
  }
  if (!pipeline_.head) {
    auto rng = init_rng(config, "init-metric-head");
    pipeline_.head = build_metric_head<Real>(train.num_artists(), pipeline_.style->dim(), rng);
  }
  if (pipeline_.head->num_artists() != train.num_artists()) {
    throw ConfigError("style: metric head has a different artist count than the corpus");
  }
}

StepMetrics StyleTrainer::train_step(std::uint64_t step) {
  auto& s = *pipeline_.style;
  auto& head = *pipeline_.head;
  const double t = pipeline_.config.style.dropout_t;
  const Batch batch = batches_.at(step);
  Tape<Real> tape;
  Binder<Real> sb(tape, s.params);
  Binder<Real> hb(tape, head.params);
  const Var<Real> codes = s.forward(sb, tape.constant(gather_images(bank_, batch.indices)));
  const bool centroid = pipeline_.config.style_loss == MetricLossKind::kCentroid;
  const Var<Real> loss =
      centroid ? centroid_metric_loss(codes, batch.artists, hb(head.styles), hb(head.log_scale), t, sizes_)
               : naive_pair_metric_loss(codes, batch.artists, hb(head.log_scale), t, sizes_);
  tape.backward(loss);
  opt_encoder_.step(parameter_list(s.params));
  if (centroid) opt_head_.step(parameter_list(head.params));
  else opt_head_.step({&head.params[head.log_scale]});
  zero_all(s.params);
  zero_all(head.params);
  return {{"loss", static_cast<double>(loss.value().item())}};
}

double StyleTrainer::accuracy(const ArtistCorpus& corpus) const {
  const Tensor<Real> codes = map_batches(corpus_tensor<Real>(corpus), 64, [&](const Tensor<Real>& x) {
    return pipeline_.style->encode(x);
  });
  const auto& head = *pipeline_.head;
  return classification_accuracy(codes, head.params[head.styles].value, corpus.labels(), head.dim());
}

std::optional<double> StyleTrainer::evaluate() {
  if (!validation_ || validation_->size() == 0) return std::nullopt;
  return accuracy(*validation_);
}

void StyleTrainer::save_optimizers(Checkpoint& ckpt) const {
  save_optimizer(ckpt, "S", opt_encoder_);
  save_optimizer(ckpt, "head", opt_head_);
}

void StyleTrainer::load_optimizers(const Checkpoint& ckpt) {
  load_optimizer(ckpt, "S", opt_encoder_);
  load_optimizer(ckpt, "head", opt_head_);
}

// ---------------------------------------------------------------------------

VaeTrainer::VaeTrainer(Pipeline& pipeline, const ArtistCorpus& train, const ArtistCorpus* validation)
    : StageTrainer(pipeline),
      bank_(corpus_tensor<Real>(train)),
      batches_(train, pipeline.config.vae.batch, pipeline.config.seed),
      validation_(validation),
      opt_(pipeline.config.vae.optimizer) {
  auto& config = pipeline_.config;
  config.validate();
  if (!pipeline_.style || !pipeline_.normalizer) {
    throw ConfigError("vae: the style stage must be trained and pruned first");
  }
  styles_ = pipeline_.style_codes(bank_);
  if (!pipeline_.vae) {
    auto rng = init_rng(config, "init-vae");
    pipeline_.vae = build_content_vae<Real>(config.vae_spec(), pipeline_.d_style(), rng);
  }
  if (pipeline_.vae->style_dim != pipeline_.d_style()) {
    throw ConfigError("vae: decoder style input differs from the kept style dims");
  }
}

StepMetrics VaeTrainer::train_step(std::uint64_t step) {
  auto& vae = *pipeline_.vae;
  const Batch batch = batches_.at(step);
  RngStream rng(pipeline_.config.seed, stream_id("vae-step", step));
  Tape<Real> tape;
  Binder<Real> vb(tape, vae.params);
  const auto parts = vae_loss(vb, vae, tape.constant(gather_images(bank_, batch.indices)),
                              tape.constant(gather_images(styles_, batch.indices)),
                              pipeline_.config.vae.dropout_t, rng);
  const Var<Real> total = parts.reconstruction + parts.kl;
  tape.backward(total);
  opt_.step(parameter_list(vae.params));
  zero_all(vae.params);
  return {{"loss", total.value().item()},
          {"reconstruction", parts.reconstruction.value().item()},
          {"kl", parts.kl.value().item()}};
}

double VaeTrainer::reconstruction(const ArtistCorpus& corpus) const {
  const Tensor<Real> images = corpus_tensor<Real>(corpus);
  return content_reconstruction_error(*pipeline_.vae, images, pipeline_.style_codes(images),
                                      pipeline_.vae->content_dim());
}

std::optional<double> VaeTrainer::evaluate() {
  if (!validation_ || validation_->size() == 0) return std::nullopt;
  return -reconstruction(*validation_);
}

void VaeTrainer::save_optimizers(Checkpoint& ckpt) const { save_optimizer(ckpt, "vae", opt_); }
void VaeTrainer::load_optimizers(const Checkpoint& ckpt) { load_optimizer(ckpt, "vae", opt_); }

// ---------------------------------------------------------------------------

GanTrainer::GanTrainer(Pipeline& pipeline, const ArtistCorpus& train)
    : StageTrainer(pipeline),
      bank_(corpus_tensor<Real>(train)),
      batches_(train, pipeline.config.gan.batch, pipeline.config.seed),
      opt_generator_(pipeline.config.gan.optimizer),
      opt_members_{Optimizer<Real>(pipeline.config.gan.optimizer), Optimizer<Real>(pipeline.config.gan.optimizer),
                   Optimizer<Real>(pipeline.config.gan.optimizer)} {
  auto& config = pipeline_.config;
  config.validate();
  if (!pipeline_.style || !pipeline_.normalizer || !pipeline_.vae || pipeline_.d_content == 0) {
    throw ConfigError("gan: the style and VAE stages must be trained and pruned first");
  }
  if (!pipeline_.generator) {
    auto rng = init_rng(config, "init-generator");
    pipeline_.generator = build_generator<Real>(config.generator_spec(pipeline_.layout()), pipeline_.layout(), rng);
  }
  if (!(pipeline_.generator->layout == pipeline_.layout())) {
    throw ConfigError("gan: generator code layout differs from the pipeline's kept dims");
  }
  if (!pipeline_.consortium) {
    auto rng = init_rng(config, "init-discriminators");
    pipeline_.consortium = build_consortium<Real>(config.discriminator_spec(), config.resolution, rng);
  }
}

StepMetrics GanTrainer::train_step(std::uint64_t step) {
  auto& g = *pipeline_.generator;
  auto& cons = *pipeline_.consortium;
  const auto& config = pipeline_.config;
  const CodeLayout layout = g.layout;
  RngStream rng(config.seed, stream_id("gan-step", step));
  auto codes = [&](std::size_t n) {
    Tensor<Real> u = sample_gaussian<Real>(rng, {n, layout.d_style});
    Tensor<Real> v = sample_gaussian<Real>(rng, {n, layout.d_content});
    Tensor<Real> w = sample_gaussian<Real>(rng, {n, layout.d_noise});
    return std::array<Tensor<Real>, 3>{std::move(u), std::move(v), std::move(w)};
  };

  double d_loss = 0;
  for (std::size_t k = 0; k < config.d_steps; ++k) {
    const Batch batch = batches_.at(step * config.d_steps + k);
    const auto [u, v, w] = codes(batch.indices.size());
    const Tensor<Real> fake = g.generate(u, v, w);
    Tape<Real> tape;
    std::array<Binder<Real>, 3> binders{Binder<Real>(tape, cons.members[0].params),
                                        Binder<Real>(tape, cons.members[1].params),
                                        Binder<Real>(tape, cons.members[2].params)};
    const auto real_probs = cons.forward(binders, tape.constant(gather_images(bank_, batch.indices)), rng);
    const auto fake_probs = cons.forward(binders, tape.constant(fake), rng);
    const Var<Real> loss = gan_d_loss(real_probs, fake_probs);
    tape.backward(loss);
    for (std::size_t m = 0; m < 3; ++m) {
      opt_members_[m].step(parameter_list(cons.members[m].params));
      zero_all(cons.members[m].params);
    }
    d_loss += loss.value().item();
  }

  const auto [u, v, w] = codes(config.gan.batch);
  Tape<Real> tape;
  Binder<Real> gb(tape, g.params);
  const GanCritics<Real> critics{&*pipeline_.style, &*pipeline_.vae, &*pipeline_.normalizer, &cons};
  const auto out = gan_g_loss(gb, g, critics, tape.constant(u), tape.constant(v), tape.constant(w),
                              config.weights, rng);
  tape.backward(out.total);
  opt_generator_.step(parameter_list(g.params));
  zero_all(g.params);
  return {{"d_loss", d_loss / static_cast<double>(config.d_steps)},
          {"g_loss", out.total.value().item()},
          {"gan", out.gan.value().item()},
          {"style", out.style.value().item()},
          {"content", out.content.value().item()}};
}

void GanTrainer::save_optimizers(Checkpoint& ckpt) const {
  save_optimizer(ckpt, "G", opt_generator_);
  for (std::size_t m = 0; m < 3; ++m) save_optimizer(ckpt, "D" + std::to_string(m), opt_members_[m]);
}

void GanTrainer::load_optimizers(const Checkpoint& ckpt) {
  load_optimizer(ckpt, "G", opt_generator_);
  for (std::size_t m = 0; m < 3; ++m) load_optimizer(ckpt, "D" + std::to_string(m), opt_members_[m]);
}

}  // namespace stylespace
