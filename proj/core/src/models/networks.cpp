#include "stylespace/models/networks.hpp"

#include <cmath>
#include <sstream>

#include "stylespace/error.hpp"

namespace stylespace {
namespace {

constexpr double kSlope = 0.2;
// Gain that keeps unit variance through a leaky ReLU.
const double kActGain = std::sqrt(2.0 / (1.0 + kSlope * kSlope));
constexpr double kResidualGain = 0.3;

template <typename T>
class Builder {
 public:
  Builder(ParameterStore<T>& store, RngStream& rng) : store_(store), rng_(rng) {}

  WnConv conv(const std::string& name, std::size_t in, std::size_t out, std::size_t stride,
              double gain) {
    WnConv c;
    c.direction = store_.add(name + ".v", sample_gaussian<T>(rng_, Shape{out, in, 3, 3}));
    c.gain = store_.add(name + ".g", Tensor<T>(Shape{out}, static_cast<T>(gain)));
    c.bias = store_.add(name + ".b", Tensor<T>(Shape{out}));
    c.stride = stride;
    c.pad = 1;
    return c;
  }

  WnLinear linear(const std::string& name, std::size_t in, std::size_t out, double gain) {
    WnLinear l;
    l.direction = store_.add(name + ".v", sample_gaussian<T>(rng_, Shape{out, in}));
    l.gain = store_.add(name + ".g", Tensor<T>(Shape{out}, static_cast<T>(gain)));
    l.bias = store_.add(name + ".b", Tensor<T>(Shape{out}));
    return l;
  }

  ResBlock block(const std::string& name, std::size_t f) {
    return {conv(name + ".a", f, f, 1, kActGain), conv(name + ".b", f, f, 1, kResidualGain)};
  }

  EncoderTrunk encoder(const std::string& name, const ArchSpec& spec) {
    EncoderTrunk t;
    t.stem = conv(name + ".stem", 3, spec.features[0], 1, 1.0);
    t.blocks.resize(spec.levels);
    for (std::size_t l = 0; l < spec.levels; ++l) {
      for (std::size_t k = 0; k < spec.blocks[l]; ++k) {
        t.blocks[l].push_back(
            block(name + ".l" + std::to_string(l) + ".r" + std::to_string(k), spec.features[l]));
      }
      if (l + 1 < spec.levels) {
        t.down.push_back(conv(name + ".down" + std::to_string(l), spec.features[l],
                              spec.features[l + 1], 2, kActGain));
      }
    }
    return t;
  }

  DecoderTrunk decoder(const std::string& name, const ArchSpec& spec) {
    DecoderTrunk t;
    for (std::size_t l = spec.levels; l-- > 0;) {
      std::vector<ResBlock> level;
      for (std::size_t k = 0; k < spec.blocks[l]; ++k) {
        level.push_back(
            block(name + ".l" + std::to_string(l) + ".r" + std::to_string(k), spec.features[l]));
      }
      t.blocks.push_back(std::move(level));
      if (l > 0) {
        t.up.push_back(conv(name + ".up" + std::to_string(l), spec.features[l],
                            spec.features[l - 1], 1, kActGain));
      }
    }
    t.out = conv(name + ".out", spec.features[0], 3, 1, 1.0);
    return t;
  }

 private:
  ParameterStore<T>& store_;
  RngStream& rng_;
};

template <typename T>
Var<T> lrelu(const Var<T>& x) {
  return leaky_relu(x, static_cast<T>(kSlope));
}

template <typename T>
void check_images(const Var<T>& images, std::size_t resolution, const char* who) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != resolution || s[3] != resolution) {
    throw ShapeError(std::string(who) + ": expected [N,3," + std::to_string(resolution) + "," +
                     std::to_string(resolution) + "] images, got " + shape_string(s));
  }
}

template <typename T>
void check_code(const Var<T>& code, std::size_t length, const char* what) {
  const Shape& s = code.shape();
  if (s.size() != 2 || s[1] != length) {
    throw ShapeError(std::string(what) + " length: expected [N," + std::to_string(length) +
                     "], got " + shape_string(s));
  }
}

// Linear map to a [N, f_top, r_top, r_top] feature map.
template <typename T>
Var<T> to_feature_map(Binder<T>& b, const WnLinear& layer, const ArchSpec& spec, const Var<T>& x) {
  const std::size_t r = spec.top_resolution();
  return reshape(apply(b, layer, x), Shape{x.dim(0), spec.features.back(), r, r});
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
  return out;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

void ArchSpec::validate() const {
  if (levels < 1) throw ConfigError("arch: levels must be >= 1");
  if (features.size() != levels) throw ConfigError("arch: need one feature count per level");
  if (blocks.size() != levels) throw ConfigError("arch: need one block count per level");
  for (const auto f : features) {
    if (f == 0) throw ConfigError("arch: feature counts must be positive");
  }
  if (levels > 30 || resolution == 0 || resolution % (std::size_t{1} << (levels - 1)) != 0) {
    throw ConfigError("arch: resolution " + std::to_string(resolution) + " not divisible by 2^" +
                      std::to_string(levels - 1));
  }
  if (code_dim == 0) throw ConfigError("arch: code_dim must be positive");
}

ArchSpec ArchSpec::full_style() { return {5, {64, 128, 256, 384, 512}, {1, 1, 1, 1, 1}, 256, 512, 0}; }

ArchSpec ArchSpec::full_content() {
  return {6, {64, 128, 192, 256, 384, 512}, {1, 1, 1, 1, 1, 1}, 256, 512, 512};
}

ArchSpec ArchSpec::full_generator() {
  return {6, {64, 128, 192, 256, 384, 512}, {2, 2, 2, 2, 2, 2}, 256, 512, 0};
}

ArchSpec ArchSpec::full_discriminator() { return {4, {64, 128, 256, 512}, {1, 1, 1, 1}, 64, 1, 0}; }

std::string to_string(const ArchSpec& spec) {
  return "levels=" + std::to_string(spec.levels) + ";features=" + join(spec.features) +
         ";blocks=" + join(spec.blocks) + ";resolution=" + std::to_string(spec.resolution) +
         ";code_dim=" + std::to_string(spec.code_dim) + ";fc=" + std::to_string(spec.fc_features);
}

ArchSpec parse_arch_spec(const std::string& text) {
  ArchSpec spec;
  std::stringstream ss(text);
  std::string item;
  try {
    while (std::getline(ss, item, ';')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ConfigError("arch: malformed entry '" + item + "'");
      const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
      if (key == "levels") spec.levels = std::stoul(value);
      else if (key == "features") spec.features = parse_list(value);
      else if (key == "blocks") spec.blocks = parse_list(value);
      else if (key == "resolution") spec.resolution = std::stoul(value);
      else if (key == "code_dim") spec.code_dim = std::stoul(value);
      else if (key == "fc") spec.fc_features = std::stoul(value);
      else throw ConfigError("arch: unknown key '" + key + "'");
    }
  } catch (const std::logic_error&) {
    throw ConfigError("arch: malformed number in '" + text + "'");
  }
  spec.validate();
  return spec;
}

template <typename T>
Binder<T>::Binder(Tape<T>& tape, ParameterStore<T>& store)
    : tape_(&tape), mutable_(&store), store_(&store), cache_(store.size()) {}

template <typename T>
Binder<T>::Binder(Tape<T>& tape, const ParameterStore<T>& store)
    : tape_(&tape), store_(&store), cache_(store.size()) {}

template <typename T>
Var<T> Binder<T>::operator()(std::size_t index) {
  auto& slot = cache_.at(index);
  if (!slot) {
    slot = mutable_ ? tape_->parameter((*mutable_)[index], true)
                    : tape_->constant((*store_)[index].value);
  }
  return *slot;
}

template <typename T>
Var<T> apply(Binder<T>& b, const WnConv& layer, const Var<T>& x) {
  const Var<T> w = weight_normalize(b(layer.direction), b(layer.gain));
  return conv2d(x, w, b(layer.bias), layer.stride, layer.pad);
}

template <typename T>
Var<T> apply(Binder<T>& b, const WnLinear& layer, const Var<T>& x) {
  return linear(x, weight_normalize(b(layer.direction), b(layer.gain)), b(layer.bias));
}

template <typename T>
Var<T> apply(Binder<T>& b, const ResBlock& block, const Var<T>& x) {
  return x + apply(b, block.second, lrelu(apply(b, block.first, x)));
}

template <typename T>
Var<T> apply(Binder<T>& b, const EncoderTrunk& trunk, const Var<T>& x) {
  Var<T> h = apply(b, trunk.stem, x);
  for (std::size_t l = 0; l < trunk.blocks.size(); ++l) {
    for (const auto& block : trunk.blocks[l]) h = apply(b, block, h);
    if (l < trunk.down.size()) h = lrelu(apply(b, trunk.down[l], h));
  }
  return lrelu(h);
}

template <typename T>
Var<T> apply(Binder<T>& b, const DecoderTrunk& trunk, const Var<T>& x) {
  Var<T> h = x;
  for (std::size_t l = 0; l < trunk.blocks.size(); ++l) {
    for (const auto& block : trunk.blocks[l]) h = apply(b, block, h);
    if (l < trunk.up.size()) {
      h = lrelu(apply(b, trunk.up[l], resample(h, ResampleMode::kUpscale2xNearest)));
    }
  }
  return tanh(apply(b, trunk.out, lrelu(h)));
}

template <typename T>
Var<T> StyleEncoder<T>::forward(Binder<T>& b, const Var<T>& images) const {
  check_images(images, spec.resolution, "style encoder");
  return apply(b, head, global_avg_pool(apply(b, trunk, images)));
}

template <typename T>
Tensor<T> StyleEncoder<T>::encode(const Tensor<T>& images) const {
  Tape<T> tape;
  Binder<T> b(tape, params);
  return forward(b, tape.constant(images)).value();
}

template <typename T>
StyleEncoder<T> build_style_encoder(const ArchSpec& spec, RngStream& rng) {
  spec.validate();
  StyleEncoder<T> s;
  s.spec = spec;
  Builder<T> build(s.params, rng);
  s.trunk = build.encoder("trunk", spec);
  s.head = build.linear("head", spec.features.back(), spec.code_dim, 1.0);
  return s;
}

template <typename T>
std::pair<Var<T>, Var<T>> ContentVAE<T>::encode(Binder<T>& b, const Var<T>& images) const {
  check_images(images, spec.resolution, "content encoder");
  const Var<T> top = apply(b, enc_trunk, images);
  const Var<T> flat = reshape(top, Shape{images.dim(0), top.value().size() / images.dim(0)});
  const Var<T> h = lrelu(apply(b, enc_fc, flat));
  return {apply(b, mean_head, h), apply(b, logvar_head, h)};
}

template <typename T>
Var<T> ContentVAE<T>::decode(Binder<T>& b, const Var<T>& style, const Var<T>& content) const {
  check_code(style, style_dim, "style");
  check_code(content, spec.code_dim, "content");
  const Var<T> h = lrelu(apply(b, dec_fc, concat(std::vector<Var<T>>{style, content}, 1)));
  return apply(b, dec_trunk, to_feature_map(b, dec_project, spec, h));
}

template <typename T>
Tensor<T> ContentVAE<T>::encode_mean(const Tensor<T>& images) const {
  Tape<T> tape;
  Binder<T> b(tape, params);
  return encode(b, tape.constant(images)).first.value();
}

template <typename T>
ContentVAE<T> build_content_vae(const ArchSpec& spec, std::size_t style_dim, RngStream& rng) {
  spec.validate();
  if (spec.fc_features == 0) throw ConfigError("content VAE needs fc_features > 0");
  if (style_dim == 0) throw ConfigError("content VAE needs style_dim > 0");
  ContentVAE<T> v;
  v.spec = spec;
  v.style_dim = style_dim;
  Builder<T> build(v.params, rng);
  const std::size_t r = spec.top_resolution();
  const std::size_t flat = spec.features.back() * r * r;
  v.enc_trunk = build.encoder("enc", spec);
  v.enc_fc = build.linear("enc.fc", flat, spec.fc_features, kActGain);
  v.mean_head = build.linear("enc.mean", spec.fc_features, spec.code_dim, 1.0);
  v.logvar_head = build.linear("enc.logvar", spec.fc_features, spec.code_dim, 0.01);
  v.dec_fc = build.linear("dec.fc", style_dim + spec.code_dim, spec.fc_features, kActGain);
  v.dec_project = build.linear("dec.project", spec.fc_features, flat, 1.0);
  v.dec_trunk = build.decoder("dec", spec);
  return v;
}

template <typename T>
Tensor<T> encode_content(const ContentVAE<T>& vae, const Tensor<T>& images, EncodeMode mode,
                         RngStream* rng) {
  Tape<T> tape;
  Binder<T> b(tape, vae.params);
  auto [mean, logvar] = vae.encode(b, tape.constant(images));
  Tensor<T> out = mean.value();
  if (mode == EncodeMode::kSample) {
    if (rng == nullptr) throw ConfigError("sample mode needs an rng");
    const auto& lv = logvar.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] += static_cast<T>(std::exp(0.5 * static_cast<double>(lv[i])) * rng->normal());
    }
  }
  return out;
}

template <typename T>
Var<T> Generator<T>::forward(Binder<T>& b, const Var<T>& code) const {
  check_code(code, layout.total(), "generator code");
  return apply(b, trunk, to_feature_map(b, project, spec, code));
}

template <typename T>
Var<T> Generator<T>::generate(Binder<T>& b, const Var<T>& u, const Var<T>& v, const Var<T>& w) const {
  check_code(u, layout.d_style, "style");
  check_code(v, layout.d_content, "content");
  check_code(w, layout.d_noise, "noise");
  if (u.dim(0) != v.dim(0) || u.dim(0) != w.dim(0)) throw ShapeError("generator: batch mismatch");
  return forward(b, concat(std::vector<Var<T>>{u, v, w}, 1));
}

template <typename T>
Tensor<T> Generator<T>::generate(const Tensor<T>& u, const Tensor<T>& v, const Tensor<T>& w) const {
  Tape<T> tape;
  Binder<T> b(tape, params);
  return generate(b, tape.constant(u), tape.constant(v), tape.constant(w)).value();
}

template <typename T>
Generator<T> build_generator(const ArchSpec& spec, const CodeLayout& layout, RngStream& rng) {
  spec.validate();
  if (layout.total() != spec.code_dim) {
    throw ConfigError("generator: code layout " + std::to_string(layout.d_style) + "+" +
                      std::to_string(layout.d_content) + "+" + std::to_string(layout.d_noise) +
                      " does not sum to " + std::to_string(spec.code_dim));
  }
  if (layout.d_style == 0 || layout.d_content == 0) {
    throw ConfigError("generator: style and content segments must be non-empty");
  }
  Generator<T> g;
  g.spec = spec;
  g.layout = layout;
  Builder<T> build(g.params, rng);
  const std::size_t r = spec.top_resolution();
  g.project = build.linear("project", spec.code_dim, spec.features.back() * r * r, 1.0);
  g.trunk = build.decoder("trunk", spec);
  return g;
}

template <typename T>
Var<T> Discriminator<T>::forward(Binder<T>& b, const Var<T>& images) const {
  check_images(images, spec.resolution, "discriminator");
  const Var<T> logit = apply(b, head, global_avg_pool(apply(b, trunk, images)));
  return sigmoid(reshape(logit, Shape{images.dim(0)}));
}

template <typename T>
Discriminator<T> build_discriminator(const ArchSpec& spec, RngStream& rng) {
  spec.validate();
  Discriminator<T> d;
  d.spec = spec;
  Builder<T> build(d.params, rng);
  d.trunk = build.encoder("trunk", spec);
  d.head = build.linear("head", spec.features.back(), 1, 1.0);
  return d;
}

template <typename T>
std::array<Var<T>, 3> DiscriminatorConsortium<T>::forward(std::array<Binder<T>, 3>& binders,
                                                         const Var<T>& images,
                                                         RngStream& rng) const {
  check_images(images, resolution, "discriminator consortium");
  const std::size_t n = images.dim(0);
  std::array<Var<T>, 3> out;
  for (std::size_t m = 0; m < 3; ++m) {
    const PatchSpec& ps = patches[m];
    const std::size_t extent = ps.scaled_size(resolution);
    Var<T> scaled = images;
    for (std::size_t s = resolution; s > extent; s /= 2) {
      scaled = resample(scaled, ResampleMode::kDownscale2xAvg);
    }
    Var<T> input = scaled;
    if (ps.patch_size != extent || ps.count != 1) {
      std::vector<PatchPos> pos;
      pos.reserve(n * ps.count);
      for (std::size_t i = 0; i < n; ++i) {
        for (const auto& o : sample_patch_origins(extent, ps.patch_size, ps.count, rng)) {
          pos.push_back({i, o.y, o.x});
        }
      }
      input = crop_patches(scaled, pos, ps.patch_size);
    }
    out[m] = members[m].forward(binders[m], input);
  }
  return out;
}

template <typename T>
Tensor<T> DiscriminatorConsortium<T>::score(const Tensor<T>& images, RngStream& rng) const {
  Tape<T> tape;
  std::array<Binder<T>, 3> binders{Binder<T>(tape, members[0].params),
                                   Binder<T>(tape, members[1].params),
                                   Binder<T>(tape, members[2].params)};
  const auto probs = forward(binders, tape.constant(images), rng);
  const std::size_t n = images.dim(0);
  Tensor<T> out(Shape{n});
  for (std::size_t m = 0; m < 3; ++m) {
    const auto& p = probs[m].value();
    const std::size_t per = patches[m].count;
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0;
      for (std::size_t k = 0; k < per; ++k) acc += p[i * per + k];
      out[i] += static_cast<T>(acc / static_cast<double>(per) / 3.0);
    }
  }
  return out;
}

template <typename T>
DiscriminatorConsortium<T> build_consortium(const ArchSpec& member, std::size_t resolution,
                                            RngStream& rng) {
  DiscriminatorConsortium<T> c;
  c.resolution = resolution;
  c.patches = default_consortium_specs(resolution);
  for (const auto& p : c.patches) {
    p.validate(resolution);
    if (p.patch_size != member.resolution) {
      throw ConfigError("consortium: member resolution " + std::to_string(member.resolution) +
                        " must equal patch size " + std::to_string(p.patch_size));
    }
  }
  for (auto& m : c.members) m = build_discriminator<T>(member, rng);
  return c;
}

template <typename T>
Var<T> ArtistClassifier<T>::forward(Binder<T>& feature_binder, Binder<T>& head_binder,
                                    const Var<T>& images) const {
  return apply(head_binder, head, features.forward(feature_binder, images));
}

template <typename T>
ArtistClassifier<T> build_classifier(const ArchSpec& spec, std::size_t num_classes, RngStream& rng) {
  if (num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  ArtistClassifier<T> c;
  c.features = build_style_encoder<T>(spec, rng);
  c.num_classes = num_classes;
  Builder<T> build(c.head_params, rng);
  c.head = build.linear("classifier", spec.code_dim, num_classes, 1.0);
  return c;
}

template <typename T>
std::vector<Parameter<T>*> parameter_list(ParameterStore<T>& store) {
  std::vector<Parameter<T>*> out;
  out.reserve(store.size());
  for (auto& p : store) out.push_back(&p);
  return out;
}

#define STYLESPACE_INSTANTIATE(T)                                                               \
  template class Binder<T>;                                                                     \
  template Var<T> apply(Binder<T>&, const WnConv&, const Var<T>&);                              \
  template Var<T> apply(Binder<T>&, const WnLinear&, const Var<T>&);                            \
  template Var<T> apply(Binder<T>&, const ResBlock&, const Var<T>&);                            \
  template Var<T> apply(Binder<T>&, const EncoderTrunk&, const Var<T>&);                        \
  template Var<T> apply(Binder<T>&, const DecoderTrunk&, const Var<T>&);                        \
  template struct StyleEncoder<T>;                                                              \
  template StyleEncoder<T> build_style_encoder<T>(const ArchSpec&, RngStream&);                 \
  template struct ContentVAE<T>;                                                                \
  template ContentVAE<T> build_content_vae<T>(const ArchSpec&, std::size_t, RngStream&);        \
  template Tensor<T> encode_content(const ContentVAE<T>&, const Tensor<T>&, EncodeMode,         \
                                    RngStream*);                                                \
  template struct Generator<T>;                                                                 \
  template Generator<T> build_generator<T>(const ArchSpec&, const CodeLayout&, RngStream&);     \
  template struct Discriminator<T>;                                                             \
  template Discriminator<T> build_discriminator<T>(const ArchSpec&, RngStream&);                \
  template struct DiscriminatorConsortium<T>;                                                   \
  template DiscriminatorConsortium<T> build_consortium<T>(const ArchSpec&, std::size_t,         \
                                                          RngStream&);                          \
  template struct ArtistClassifier<T>;                                                          \
  template ArtistClassifier<T> build_classifier<T>(const ArchSpec&, std::size_t, RngStream&);   \
  template std::vector<Parameter<T>*> parameter_list(ParameterStore<T>&);

STYLESPACE_INSTANTIATE(float)
STYLESPACE_INSTANTIATE(double)

}  // namespace stylespace
