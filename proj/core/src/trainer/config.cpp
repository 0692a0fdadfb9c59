#include "stylespace/trainer/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "stylespace/error.hpp"

namespace stylespace {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_u64(key, trim(item)));
  return out;
}

std::string join(const std::vector<std::size_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

Field size_field(std::string key, std::size_t TrainConfig::*member) {
  return {key, [member](const TrainConfig& c) { return std::to_string(c.*member); },
          [member, key](TrainConfig& c, const std::string& v) { c.*member = to_u64(key, v); }};
}

template <typename Get>
Field size_ref(std::string key, Get ref) {
  return {key, [ref](const TrainConfig& c) { return std::to_string(ref(const_cast<TrainConfig&>(c))); },
          [ref, key](TrainConfig& c, const std::string& v) { ref(c) = to_u64(key, v); }};
}

template <typename Get>
Field double_ref(std::string key, Get ref) {
  return {key, [ref](const TrainConfig& c) { return exact_double(ref(const_cast<TrainConfig&>(c))); },
          [ref, key](TrainConfig& c, const std::string& v) { ref(c) = to_double(key, v); }};
}

template <typename Get>
Field list_ref(std::string key, Get ref) {
  return {key, [ref](const TrainConfig& c) { return join(ref(const_cast<TrainConfig&>(c))); },
          [ref, key](TrainConfig& c, const std::string& v) { ref(c) = to_list(key, v); }};
}

void add_arch(std::vector<Field>& f, const std::string& p, ArchSpec TrainConfig::*arch, bool dim,
              bool fc) {
  f.push_back(size_ref(p + ".levels", [arch](TrainConfig& c) -> std::size_t& { return (c.*arch).levels; }));
  f.push_back(list_ref(p + ".features", [arch](TrainConfig& c) -> auto& { return (c.*arch).features; }));
  f.push_back(list_ref(p + ".blocks", [arch](TrainConfig& c) -> auto& { return (c.*arch).blocks; }));
  if (dim) f.push_back(size_ref(p + ".dim", [arch](TrainConfig& c) -> std::size_t& { return (c.*arch).code_dim; }));
  if (fc) f.push_back(size_ref(p + ".fc", [arch](TrainConfig& c) -> std::size_t& { return (c.*arch).fc_features; }));
}

void add_stage(std::vector<Field>& f, const std::string& p, StageOptions TrainConfig::*stage) {
  f.push_back({p + ".optimizer", [stage](const TrainConfig& c) { return to_string((c.*stage).optimizer.kind); },
               [stage](TrainConfig& c, const std::string& v) { (c.*stage).optimizer.kind = parse_optimizer(v); }});
  f.push_back(double_ref(p + ".lr", [stage](TrainConfig& c) -> double& { return (c.*stage).optimizer.learning_rate; }));
  f.push_back(size_ref(p + ".batch", [stage](TrainConfig& c) -> std::size_t& { return (c.*stage).batch; }));
  f.push_back(size_ref(p + ".steps", [stage](TrainConfig& c) -> std::size_t& { return (c.*stage).steps; }));
  f.push_back(double_ref(p + ".dropout_t", [stage](TrainConfig& c) -> double& { return (c.*stage).dropout_t; }));
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
                 [](TrainConfig& c, const std::string& v) { c.seed = to_u64("seed", v); }});
    f.push_back(size_field("resolution", &TrainConfig::resolution));

    add_arch(f, "style", &TrainConfig::style_arch, true, false);
    add_stage(f, "style", &TrainConfig::style);
    f.push_back({"style.loss", [](const TrainConfig& c) { return to_string(c.style_loss); },
                 [](TrainConfig& c, const std::string& v) {
                   if (v == "centroid") c.style_loss = MetricLossKind::kCentroid;
                   else if (v == "pairs") c.style_loss = MetricLossKind::kPairs;
                   else throw ConfigError("style.loss: expected centroid or pairs, got '" + v + "'");
                 }});
    f.push_back(size_field("style.kept", &TrainConfig::style_kept));

    add_arch(f, "vae", &TrainConfig::vae_arch, true, true);
    add_stage(f, "vae", &TrainConfig::vae);
    f.push_back(size_field("vae.kept", &TrainConfig::content_kept));

    add_arch(f, "gan", &TrainConfig::gen_arch, false, false);
    add_stage(f, "gan", &TrainConfig::gan);
    f.push_back(size_field("gan.d_noise", &TrainConfig::d_noise));
    f.push_back(double_ref("gan.lambda_style", [](TrainConfig& c) -> double& { return c.weights.style; }));
    f.push_back(double_ref("gan.lambda_content", [](TrainConfig& c) -> double& { return c.weights.content; }));
    f.push_back(size_field("gan.d_steps", &TrainConfig::d_steps));
    add_arch(f, "disc", &TrainConfig::disc_arch, false, false);

    f.push_back(double_ref("prune.rho", [](TrainConfig& c) -> double& { return c.prune_rho; }));
    f.push_back(list_ref("prune.candidates", [](TrainConfig& c) -> auto& { return c.prune_candidates; }));

    f.push_back(size_field("log_every", &TrainConfig::log_every));
    f.push_back(size_field("eval_every", &TrainConfig::eval_every));
    f.push_back(size_field("checkpoint_every", &TrainConfig::checkpoint_every));
    f.push_back(size_field("patience", &TrainConfig::patience));

    f.push_back(size_ref("data.artists", [](TrainConfig& c) -> std::size_t& { return c.synth.num_artists; }));
    f.push_back(size_ref("data.images_per_artist",
                         [](TrainConfig& c) -> std::size_t& { return c.synth.images_per_artist; }));
    f.push_back(double_ref("data.jitter", [](TrainConfig& c) -> double& { return c.synth.style_jitter; }));
    f.push_back({"data.dir", [](const TrainConfig& c) { return c.data_dir; },
                 [](TrainConfig& c, const std::string& v) { c.data_dir = v; }});
    f.push_back(size_field("data.min_works", &TrainConfig::min_works));
    f.push_back(double_ref("split.fraction", [](TrainConfig& c) -> double& { return c.split.test_fraction; }));
    f.push_back(size_ref("split.min_test", [](TrainConfig& c) -> std::size_t& { return c.split.min_test; }));
    f.push_back(size_ref("split.min_works", [](TrainConfig& c) -> std::size_t& { return c.split.min_works; }));
    return f;
  }();
  return table;
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

void validate_stage(const StageOptions& s, const std::string& p) {
  require(s.optimizer.learning_rate > 0, p + ".lr", "must be positive");
  require(s.batch > 0, p + ".batch", "must be positive");
  require(s.steps > 0, p + ".steps", "must be positive");
  require(s.dropout_t > 0 && s.dropout_t < 1, p + ".dropout_t", "must lie in (0, 1)");
}

void validate_arch(const ArchSpec& a, const std::string& p) {
  try {
    a.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(p + ": " + e.what());
  }
}

}  // namespace

std::string exact_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

std::string to_string(MetricLossKind kind) {
  return kind == MetricLossKind::kCentroid ? "centroid" : "pairs";
}

TrainConfig TrainConfig::full() {
  TrainConfig c;
  c.resolution = 256;
  c.style_arch = ArchSpec::full_style();
  c.style = {{OptimizerKind::kAdam, 1e-4}, 32, 100000, 0.995};
  c.vae_arch = ArchSpec::full_content();
  c.vae = {{OptimizerKind::kRmsProp, 5e-5}, 16, 100000, 0.995};
  c.gen_arch = ArchSpec::full_generator();
  c.disc_arch = ArchSpec::full_discriminator();
  c.gan = {{OptimizerKind::kRmsProp, 2e-5}, 8, 100000, 0.995};
  c.d_noise = 352;
  c.log_every = 100;
  c.eval_every = 2000;
  c.checkpoint_every = 10000;
  c.synth.resolution = 256;
  c.split.min_works = 50;
  return c;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.resolution = 32;
  c.style_arch = {3, {16, 32, 64}, {1, 1, 1}, 32, 64, 0};
  c.style = {{OptimizerKind::kAdam, 1e-3}, 32, 3000, 0.9};
  c.vae_arch = {3, {16, 32, 64}, {1, 1, 1}, 32, 16, 128};
  c.vae = {{OptimizerKind::kRmsProp, 5e-4}, 16, 2000, 0.9};
  c.gen_arch = {3, {16, 32, 64}, {1, 1, 1}, 32, 0, 0};
  c.disc_arch = {2, {16, 32}, {1, 1}, 8, 1, 0};
  c.gan = {{OptimizerKind::kRmsProp, 2e-4}, 8, 2000, 0.9};
  c.d_noise = 40;
  c.synth = SyntheticCorpusConfig{};
  c.split.min_works = 50;
  return c;
}

ArchSpec TrainConfig::style_spec() const {
  ArchSpec a = style_arch;
  a.resolution = resolution;
  a.fc_features = 0;
  return a;
}

ArchSpec TrainConfig::vae_spec() const {
  ArchSpec a = vae_arch;
  a.resolution = resolution;
  return a;
}

ArchSpec TrainConfig::generator_spec(const CodeLayout& layout) const {
  ArchSpec a = gen_arch;
  a.resolution = resolution;
  a.code_dim = layout.total();
  a.fc_features = 0;
  return a;
}

ArchSpec TrainConfig::discriminator_spec() const {
  ArchSpec a = disc_arch;
  a.resolution = default_consortium_specs(resolution)[0].patch_size;
  a.code_dim = 1;
  a.fc_features = 0;
  return a;
}

void TrainConfig::validate() const {
  require(resolution >= 4, "resolution", "must be at least 4");
  validate_arch(style_spec(), "style");
  validate_arch(vae_spec(), "vae");
  validate_arch(generator_spec({1, 0, 0}), "gan");
  validate_arch(discriminator_spec(), "disc");
  validate_stage(style, "style");
  validate_stage(vae, "vae");
  validate_stage(gan, "gan");
  require(style_kept <= style_arch.code_dim, "style.kept", "exceeds style.dim");
  require(content_kept <= vae_arch.code_dim, "vae.kept", "exceeds vae.dim");
  require(d_steps > 0, "gan.d_steps", "must be positive");
  require(weights.style >= 0, "gan.lambda_style", "must be non-negative");
  require(weights.content >= 0, "gan.lambda_content", "must be non-negative");
  require(prune_rho > 0 && prune_rho <= 1, "prune.rho", "must lie in (0, 1]");
  for (std::size_t i = 0; i < prune_candidates.size(); ++i) {
    require(prune_candidates[i] > 0, "prune.candidates", "must be positive");
    require(i == 0 || prune_candidates[i] > prune_candidates[i - 1], "prune.candidates",
            "must be strictly ascending");
  }
  require(log_every > 0, "log_every", "must be positive");
  require(patience > 0, "patience", "must be positive");
  if (data_dir.empty()) {
    require(synth.num_artists > 1, "data.artists", "need at least two artists");
    require(synth.images_per_artist > 0, "data.images_per_artist", "must be positive");
  }
  split.validate();
}

std::string to_text(const TrainConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + "=" + f.get(config) + "\n";
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

TrainConfig parse_train_config(std::string_view text, const TrainConfig& base) {
  TrainConfig config = base;
  for (const auto& [key, value] : parse_key_values(text)) {
    bool found = false;
    for (const auto& f : fields()) {
      if (f.key == key) {
        f.set(config, value);
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("unknown config key '" + key + "'");
  }
  config.synth.resolution = config.resolution;
  return config;
}

TrainConfig load_train_config(const std::filesystem::path& path, const TrainConfig& base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str(), base);
}

}  // namespace stylespace
