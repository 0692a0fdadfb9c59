#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stylespace/imaging/image.hpp"
#include "stylespace/tensor/ops.hpp"
#include "stylespace/tensor/rng.hpp"
#include "stylespace/tensor/tape.hpp"

namespace stylespace {

/// Shape of one convolutional network: a pyramid of `levels` resolutions,
/// halving between levels.
struct ArchSpec {
  std::size_t levels = 0;
  std::vector<std::size_t> features;
  std::vector<std::size_t> blocks;
  std::size_t resolution = 0;  // input side for encoders, output side for generators
  std::size_t code_dim = 0;    // encoder output length or generator input length
  std::size_t fc_features = 0;  // extra fully connected layer (VAE only); 0 = none

  void validate() const;
  std::size_t top_resolution() const { return resolution >> (levels - 1); }
  bool operator==(const ArchSpec&) const = default;

  static ArchSpec full_style();
  static ArchSpec full_content();
  static ArchSpec full_generator();
  static ArchSpec full_discriminator();
};

std::string to_string(const ArchSpec& spec);
/// Inverse of to_string; throws ConfigError.
ArchSpec parse_arch_spec(const std::string& text);

struct CodeLayout {
  std::size_t d_style = 0;
  std::size_t d_content = 0;
  std::size_t d_noise = 0;

  std::size_t total() const { return d_style + d_content + d_noise; }
  bool operator==(const CodeLayout&) const = default;
};

/// Binds the parameters of one network onto a tape, once per forward pass.
/// A frozen binder records constants, so gradients still reach its inputs but
/// never the parameters.
template <typename T>
class Binder {
 public:
  Binder(Tape<T>& tape, ParameterStore<T>& store);
  Binder(Tape<T>& tape, const ParameterStore<T>& store);

  Var<T> operator()(std::size_t index);
  Tape<T>& tape() { return *tape_; }
  bool tracked() const { return mutable_ != nullptr; }

 private:
  Tape<T>* tape_;
  ParameterStore<T>* mutable_ = nullptr;
  const ParameterStore<T>* store_;
  std::vector<std::optional<Var<T>>> cache_;
};

struct WnConv {
  std::size_t direction = 0, gain = 0, bias = 0;
  std::size_t stride = 1;
  std::size_t pad = 1;
};

struct WnLinear {
  std::size_t direction = 0, gain = 0, bias = 0;
};

struct ResBlock {
  WnConv first, second;
};

/// Stem conv, residual blocks per level, stride-2 conv between levels.
struct EncoderTrunk {
  WnConv stem;
  std::vector<std::vector<ResBlock>> blocks;
  std::vector<WnConv> down;
};

/// Residual blocks per level from the top, nearest upsample + conv between
/// levels, final conv to 3 channels.
struct DecoderTrunk {
  std::vector<std::vector<ResBlock>> blocks;
  std::vector<WnConv> up;
  WnConv out;
};

template <typename T>
Var<T> apply(Binder<T>& b, const WnConv& layer, const Var<T>& x);
template <typename T>
Var<T> apply(Binder<T>& b, const WnLinear& layer, const Var<T>& x);
template <typename T>
Var<T> apply(Binder<T>& b, const ResBlock& block, const Var<T>& x);
/// Returns the top-level feature map [N, f_top, r_top, r_top].
template <typename T>
Var<T> apply(Binder<T>& b, const EncoderTrunk& trunk, const Var<T>& x);
/// Consumes [N, f_top, r_top, r_top]; returns [N, 3, R, R] in (-1, 1).
template <typename T>
Var<T> apply(Binder<T>& b, const DecoderTrunk& trunk, const Var<T>& x);

/// S: images -> D-dimensional style codes.
template <typename T>
struct StyleEncoder {
  ArchSpec spec;
  ParameterStore<T> params;
  EncoderTrunk trunk;
  WnLinear head;

  std::size_t dim() const { return spec.code_dim; }
  Var<T> forward(Binder<T>& b, const Var<T>& images) const;
  /// Inference without gradients.
  Tensor<T> encode(const Tensor<T>& images) const;
};

template <typename T>
StyleEncoder<T> build_style_encoder(const ArchSpec& spec, RngStream& rng);

/// Enc/Dec pair. The decoder consumes (style code of length style_dim) ++ (content code).
template <typename T>
struct ContentVAE {
  ArchSpec spec;
  std::size_t style_dim = 0;
  ParameterStore<T> params;
  EncoderTrunk enc_trunk;
  WnLinear enc_fc, mean_head, logvar_head;
  WnLinear dec_fc, dec_project;
  DecoderTrunk dec_trunk;

  std::size_t content_dim() const { return spec.code_dim; }
  std::pair<Var<T>, Var<T>> encode(Binder<T>& b, const Var<T>& images) const;
  Var<T> decode(Binder<T>& b, const Var<T>& style, const Var<T>& content) const;
  Tensor<T> encode_mean(const Tensor<T>& images) const;
};

template <typename T>
ContentVAE<T> build_content_vae(const ArchSpec& spec, std::size_t style_dim, RngStream& rng);

enum class EncodeMode { kMean, kSample };

/// Content codes; sample mode draws mean + exp(logvar/2) * eps from `rng`.
template <typename T>
Tensor<T> encode_content(const ContentVAE<T>& vae, const Tensor<T>& images, EncodeMode mode,
                         RngStream* rng = nullptr);

/// G: (u, v, w) -> image.
template <typename T>
struct Generator {
  ArchSpec spec;
  CodeLayout layout;
  ParameterStore<T> params;
  WnLinear project;
  DecoderTrunk trunk;

  Var<T> forward(Binder<T>& b, const Var<T>& code) const;
  Var<T> generate(Binder<T>& b, const Var<T>& u, const Var<T>& v, const Var<T>& w) const;
  Tensor<T> generate(const Tensor<T>& u, const Tensor<T>& v, const Tensor<T>& w) const;
};

template <typename T>
Generator<T> build_generator(const ArchSpec& spec, const CodeLayout& layout, RngStream& rng);

/// Image or patch -> probability of being real.
template <typename T>
struct Discriminator {
  ArchSpec spec;
  ParameterStore<T> params;
  EncoderTrunk trunk;
  WnLinear head;

  /// Returns [N] probabilities.
  Var<T> forward(Binder<T>& b, const Var<T>& images) const;
};

template <typename T>
Discriminator<T> build_discriminator(const ArchSpec& spec, RngStream& rng);

/// Three identically shaped discriminators seeing the image at three scales.
template <typename T>
struct DiscriminatorConsortium {
  std::size_t resolution = 0;
  std::array<PatchSpec, 3> patches;
  std::array<Discriminator<T>, 3> members;

  /// Per-member probabilities laid out image-major: member m yields
  /// [N * patches[m].count]. Patch corners are drawn from `rng`.
  std::array<Var<T>, 3> forward(std::array<Binder<T>, 3>& binders, const Var<T>& images,
                                RngStream& rng) const;
  /// Mean probability per image over members and their patches.
  Tensor<T> score(const Tensor<T>& images, RngStream& rng) const;
};

/// `member` describes one discriminator; its resolution must equal the patch size.
template <typename T>
DiscriminatorConsortium<T> build_consortium(const ArchSpec& member, std::size_t resolution,
                                            RngStream& rng);

/// Same network as S plus a linear classification head over the D features.
template <typename T>
struct ArtistClassifier {
  StyleEncoder<T> features;
  ParameterStore<T> head_params;
  WnLinear head;
  std::size_t num_classes = 0;

  /// Returns logits [N, classes].
  Var<T> forward(Binder<T>& feature_binder, Binder<T>& head_binder, const Var<T>& images) const;
};

template <typename T>
ArtistClassifier<T> build_classifier(const ArchSpec& spec, std::size_t num_classes, RngStream& rng);

/// Pointers to every parameter of a store, in registration order.
template <typename T>
std::vector<Parameter<T>*> parameter_list(ParameterStore<T>& store);

}  // namespace stylespace
