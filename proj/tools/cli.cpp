#include "cli.hpp"

#include <cmath>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "stylespace/analysis/explore.hpp"
#include "stylespace/analysis/metrics.hpp"
#include "stylespace/error.hpp"
#include "stylespace/service/service.hpp"
#include "stylespace/trainer/stages.hpp"

namespace stylespace {
namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string checkpoint;
};

void add_common(CLI::App* cmd, Common& c, bool needs_checkpoint) {
  cmd->add_option("--config", c.config, "key=value configuration file");
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  auto* opt = cmd->add_option("--checkpoint", c.checkpoint, "input checkpoint");
  if (needs_checkpoint) opt->required();
}

TrainConfig resolve_config(const Common& c, const TrainConfig& base) {
  TrainConfig config = c.config.empty() ? base : load_train_config(c.config, base);
  if (c.seed) config.seed = *c.seed;
  config.validate();
  return config;
}

fs::path out_dir(const Common& c) {
  fs::create_directories(c.out);
  return c.out;
}

/// Pipeline from --checkpoint with --config and --seed applied on top of its config.
Pipeline load_pipeline(const Common& c, Checkpoint* raw = nullptr) {
  Checkpoint ckpt = load_checkpoint(c.checkpoint);
  Pipeline p = read_pipeline(ckpt);
  p.config = resolve_config(c, p.config);
  if (raw) *raw = std::move(ckpt);
  return p;
}

void save_pipeline(const Pipeline& p, const fs::path& path) {
  Checkpoint ckpt;
  write_pipeline(ckpt, p);
  save_checkpoint(path, ckpt);
  spdlog::info("wrote {}", path.string());
}

/// Resumes `trainer` when the checkpoint was written by the same stage.
void maybe_restore(StageTrainer& trainer, const Checkpoint* ckpt) {
  if (ckpt && ckpt->meta.count("stage") && ckpt->meta_at("stage") == trainer.stage()) {
    trainer.restore(*ckpt);
    spdlog::info("resuming {} at step {}", trainer.stage(), trainer.step());
  }
}

Tensor<Real> load_images(const std::vector<std::string>& paths, std::size_t resolution) {
  std::vector<ImageLab> labs;
  for (const auto& path : paths) {
    const ImageRGB img = read_png(path);
    if (img.width != resolution || img.height != resolution) {
      throw ConfigError(path + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                        ", model expects " + std::to_string(resolution));
    }
    labs.push_back(rgb_to_lab(img));
  }
  return images_to_tensor<Real>(std::span<const ImageLab>(labs));
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || item.find_first_not_of(" \t", used) != std::string::npos || !std::isfinite(v)) {
      throw ConfigError("bad value '" + item + "' in list '" + text + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty value list");
  return out;
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

Tensor<Real> row_of(const Tensor<Real>& t, std::size_t i) {
  Tensor<Real> r(Shape{1, t.dim(1)});
  std::copy_n(t.raw() + i * t.dim(1), t.dim(1), r.raw());
  return r;
}

// ---------------------------------------------------------------------------

void cmd_synth_data(const Common& c) {
  const TrainConfig config = resolve_config(c, TrainConfig::desk());
  SyntheticCorpusConfig synth = config.synth;
  synth.resolution = config.resolution;
  RngStream rng(config.seed, stream_id("corpus"));
  const ArtistCorpus corpus = generate_synthetic_corpus(synth, rng);
  export_corpus(corpus, out_dir(c));
  spdlog::info("wrote {} images by {} artists to {}", corpus.size(), corpus.num_artists(), c.out);
}

void cmd_train_style(const Common& c) {
  Checkpoint ckpt;
  Pipeline p;
  const bool resume = !c.checkpoint.empty();
  if (resume) {
    p = load_pipeline(c, &ckpt);
  } else {
    p.config = resolve_config(c, TrainConfig::desk());
  }
  const DataSplits data = prepare_data(p.config);
  StyleTrainer trainer(p, data.train, &data.validation);
  trainer.set_output_dir(out_dir(c));
  maybe_restore(trainer, resume ? &ckpt : nullptr);
  trainer.run();
  spdlog::info("style stage done at step {}: test accuracy {:.4f}", trainer.step(), trainer.accuracy(data.test));
}

void cmd_prune(const Common& c, std::string which) {
  Pipeline p = load_pipeline(c);
  const DataSplits data = prepare_data(p.config);
  if (which == "auto") which = p.vae && p.normalizer ? "content" : "style";
  const fs::path dir = out_dir(c);
  PruneReport report;
  if (which == "style") {
    if (!p.style || !p.head) throw ConfigError("prune style: checkpoint lacks a trained style encoder");
    report = apply_style_pruning(p, data.train, data.validation);
  } else if (which == "content") {
    if (!p.vae || !p.normalizer) throw ConfigError("prune content: checkpoint lacks a trained VAE");
    report = apply_content_pruning(p, data.validation);
  } else {
    throw ConfigError("prune --stage must be style, content or auto");
  }
  write_prune_csv(dir / ("prune-" + which + ".csv"), report);
  spdlog::info("kept {} {} dimensions", report.chosen, which);
  save_pipeline(p, dir / (which + "-pruned.ssg"));
}

void cmd_train_vae(const Common& c) {
  Checkpoint ckpt;
  Pipeline p = load_pipeline(c, &ckpt);
  const DataSplits data = prepare_data(p.config);
  VaeTrainer trainer(p, data.train, &data.validation);
  trainer.set_output_dir(out_dir(c));
  maybe_restore(trainer, &ckpt);
  trainer.run();
  spdlog::info("vae stage done at step {}: test reconstruction {:.4f}", trainer.step(),
               trainer.reconstruction(data.test));
}

void cmd_train_gan(const Common& c) {
  Checkpoint ckpt;
  Pipeline p = load_pipeline(c, &ckpt);
  const DataSplits data = prepare_data(p.config);
  GanTrainer trainer(p, data.train);
  trainer.set_output_dir(out_dir(c));
  maybe_restore(trainer, &ckpt);
  trainer.run();
  spdlog::info("gan stage done at step {}: style recovery {:.4f}", trainer.step(),
               style_recovery_loss(p, 256, p.config.seed));
}

void cmd_eval(const Common& c, bool baseline) {
  const Pipeline p = load_pipeline(c);
  if (!p.style || !p.head) throw ConfigError("eval: checkpoint lacks a trained style encoder");
  const DataSplits data = prepare_data(p.config);
  const fs::path dir = out_dir(c);
  const auto labels = data.test.labels();
  const auto dims = default_prune_candidates(p.style->dim());
  auto encode = [&](const ArtistCorpus& corpus) {
    return map_batches(corpus_tensor<Real>(corpus), 64, [&](const Tensor<Real>& x) { return p.style->encode(x); });
  };
  const Tensor<Real> codes = encode(data.test);
  auto accuracy = accuracy_vs_dims(codes, p.head->params[p.head->styles].value, labels, dims, "metric");
  std::vector<EvalResult> ratios;
  for (const auto d : dims) ratios.push_back({"metric", d, 0, variance_ratio(codes, labels, d)});
  if (baseline) {
    const ClassifierBaseline cls = train_classifier_baseline(data.train, p.config);
    const Tensor<Real> train_feats = cls.features(corpus_tensor<Real>(data.train));
    const Tensor<Real> feats = cls.features(corpus_tensor<Real>(data.test));
    const auto centroids = class_means(train_feats, data.train.labels(), data.train.num_artists());
    for (auto& r : accuracy_vs_dims(feats, centroids, labels, dims, "classifier")) accuracy.push_back(r);
    for (const auto d : dims) ratios.push_back({"classifier", d, 0, variance_ratio(feats, labels, d)});
    spdlog::info("classifier argmax accuracy {:.4f}", cls.accuracy(data.test));
  }
  write_eval_csv(dir / "accuracy.csv", accuracy, false);
  write_eval_csv(dir / "ratio.csv", ratios, true);
  for (const auto& r : accuracy) spdlog::info("{} d={} accuracy {:.4f}", r.method, r.dims, r.accuracy);
  for (const auto& r : ratios) spdlog::info("{} d={} ratio {:.4f}", r.method, r.dims, r.ratio);
}

struct SweepArgs {
  std::size_t dim = 0;
  std::string values = "-5,0,5";
  std::size_t bases = 4;
};

void cmd_sweep(const Common& c, const SweepArgs& a) {
  const ModelSession session(load_pipeline(c));
  SweepSpec spec{a.dim, parse_values(a.values), a.bases};
  RngStream rng(session.pipeline().config.seed, stream_id("sweep", a.dim));
  const ImageGrid grid = dimension_sweep(*session.pipeline().generator, spec, rng);
  const fs::path path = out_dir(c) / ("sweep-dim" + std::to_string(a.dim) + ".png");
  write_png(path, grid.compose());
  spdlog::info("wrote {}", path.string());
}

void cmd_interp(const Common& c, std::size_t n, const std::vector<std::string>& images) {
  const ModelSession session(load_pipeline(c));
  const CodeLayout l = session.layout();
  RngStream rng(session.pipeline().config.seed, stream_id("interp"));
  Tensor<Real> corners, content;
  if (images.empty()) {
    corners = sample_gaussian<Real>(rng, {4, l.d_style});
    content = sample_gaussian<Real>(rng, {1, l.d_content});
  } else {
    if (images.size() != 4) throw ConfigError("interp takes exactly four corner images");
    const Tensor<Real> x = load_images(images, session.resolution());
    corners = session.pipeline().style_codes(x);
    content = row_of(session.pipeline().content_codes(x), 0);
  }
  const ImageGrid grid = interpolate_styles(*session.pipeline().generator, corners, content, {}, n);
  const fs::path path = out_dir(c) / "interp.png";
  write_png(path, grid.compose());
  spdlog::info("wrote {}", path.string());
}

void cmd_reconstruct(const Common& c, const std::vector<std::string>& inputs) {
  const ModelSession session(load_pipeline(c));
  const Tensor<Real> x = load_images(inputs, session.resolution());
  const auto out = tensor_to_rgb(reconstruct(session.pipeline(), x));
  const fs::path dir = out_dir(c);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    write_png(dir / (stem_of(inputs[i]) + "-recon.png"), out[i]);
  }
  spdlog::info("wrote {} reconstructions to {}", inputs.size(), dir.string());
}

void cmd_transfer(const Common& c, const std::string& content, const std::string& style) {
  const ModelSession session(load_pipeline(c));
  const Tensor<Real> v = load_images({content}, session.resolution());
  const Tensor<Real> u = load_images({style}, session.resolution());
  const auto out = tensor_to_rgb(style_transfer(session.pipeline(), v, u));
  const fs::path path = out_dir(c) / "transfer.png";
  write_png(path, out[0]);
  spdlog::info("wrote {}", path.string());
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"stylespace: style-space learning, generation and exploration"};
  app.require_subcommand(1);
  Common c;
  std::string prune_stage = "auto";
  bool no_baseline = false;
  SweepArgs sweep;
  std::size_t interp_n = 5;
  std::vector<std::string> images;
  std::string content_image, style_image, bind = "127.0.0.1:8787";

  auto* synth = app.add_subcommand("synth-data", "write a synthetic corpus as <out>/<artist>/*.png");
  add_common(synth, c, false);
  auto* train_style = app.add_subcommand("train-style", "metric-learn the style encoder");
  add_common(train_style, c, false);
  auto* prune = app.add_subcommand("prune", "choose the kept style or content dimensions");
  add_common(prune, c, true);
  prune->add_option("--stage", prune_stage, "style, content or auto")->capture_default_str();
  auto* train_vae = app.add_subcommand("train-vae", "train the content VAE");
  add_common(train_vae, c, true);
  auto* train_gan = app.add_subcommand("train-gan", "train the generator");
  add_common(train_gan, c, true);
  auto* eval = app.add_subcommand("eval", "write accuracy.csv and ratio.csv for the test split");
  add_common(eval, c, true);
  eval->add_flag("--no-baseline", no_baseline, "skip the classifier baseline");
  auto* sweep_cmd = app.add_subcommand("sweep", "vary one style dimension");
  add_common(sweep_cmd, c, true);
  sweep_cmd->add_option("--dim", sweep.dim, "style dimension")->required();
  sweep_cmd->add_option("--values", sweep.values, "comma separated values")->capture_default_str();
  sweep_cmd->add_option("--bases", sweep.bases, "base codes (grid rows)")->capture_default_str();
  auto* interp = app.add_subcommand("interp", "bilinear style interpolation grid");
  add_common(interp, c, true);
  interp->add_option("--n", interp_n, "grid side")->capture_default_str();
  interp->add_option("images", images, "four corner images (TL TR BL BR); random codes if omitted");
  auto* recon = app.add_subcommand("reconstruct", "regenerate images from their own codes");
  add_common(recon, c, true);
  recon->add_option("images", images, "input PNGs")->required();
  auto* transfer = app.add_subcommand("transfer", "content of one image in the style of another");
  add_common(transfer, c, true);
  transfer->add_option("--content", content_image, "content PNG")->required();
  transfer->add_option("--style", style_image, "style PNG")->required();
  auto* serve_cmd = app.add_subcommand("serve", "HTTP generation and encoding service");
  add_common(serve_cmd, c, true);
  serve_cmd->add_option("--bind", bind, "host:port")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*synth) cmd_synth_data(c);
    else if (*train_style) cmd_train_style(c);
    else if (*prune) cmd_prune(c, prune_stage);
    else if (*train_vae) cmd_train_vae(c);
    else if (*train_gan) cmd_train_gan(c);
    else if (*eval) cmd_eval(c, !no_baseline);
    else if (*sweep_cmd) cmd_sweep(c, sweep);
    else if (*interp) cmd_interp(c, interp_n, images);
    else if (*recon) cmd_reconstruct(c, images);
    else if (*transfer) cmd_transfer(c, content_image, style_image);
    else if (*serve_cmd) serve(c.checkpoint, parse_bind_address(bind));
  } catch (const NumericError& e) {
    spdlog::error("numeric abort: {}", e.what());
    return 3;
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}

}  // namespace stylespace
