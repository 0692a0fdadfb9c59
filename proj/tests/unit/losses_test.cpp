#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "loss_oracles.hpp"
#include "network_gradcheck.hpp"
#include "stylespace/error.hpp"
#include "stylespace/losses/losses.hpp"

using namespace stylespace;
using namespace stylespace::testing;


TEST(BasicLosses, SameAndDiff) {
  EXPECT_EQ(loss_same(2.0), 4.0);
  EXPECT_EQ(loss_diff(0.0), 1.0);
  EXPECT_NEAR(loss_diff(3.0), 1.2340980408667956e-4, 1e-16);
}

TEST(NestedWeights, Examples) {
  EXPECT_NEAR(nested_weight(1, 0.5, 2), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(nested_weight(2, 0.5, 2), 1.0 / 3.0, 1e-15);
  for (const auto& [t, D] : std::vector<std::pair<double, std::size_t>>{{0.5, 2}, {0.9, 64}, {0.995, 512}}) {
    const auto w = nested_weights(t, D);
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
  }
  EXPECT_NEAR(1 - std::pow(0.995, 512), 0.9231, 1e-4);
  EXPECT_NEAR(nested_weight(1, 0.995, 512), 5.417e-3, 1e-6);
  EXPECT_THROW(nested_weight(0, 0.5, 2), ConfigError);
  EXPECT_THROW(nested_weight(3, 0.5, 2), ConfigError);
}

TEST(NestedWeights, PrefixSamplerMatchesWeights) {
  RngStream rng(1, 1);
  const std::size_t D = 6;
  const double t = 0.7;
  std::vector<double> counts(D, 0);
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const auto d = sample_prefix_length(t, D, rng);
    ASSERT_GE(d, 1u);
    ASSERT_LE(d, D);
    counts[d - 1] += 1;
  }
  for (std::size_t d = 1; d <= D; ++d) {
    const double p = oracle_weight(d, t, D);
    EXPECT_NEAR(counts[d - 1] / n, p, 4 * std::sqrt(p * (1 - p) / n));
  }
}

TEST(NestedPairLoss, Examples) {
  Tape<double> tape;
  const auto x = tape.constant(Tensor<double>::vector({1, 2}));
  const auto zero = tape.constant(Tensor<double>::vector({0, 0}));
  EXPECT_NEAR(nested_pair_loss(x, zero, zero, 0.5, PairKind::kSame).value().item(), 7.0 / 3.0, 1e-15);
  EXPECT_EQ(nested_pair_loss(x, x, zero, 0.5, PairKind::kSame).value().item(), 0.0);
  EXPECT_NEAR(nested_pair_loss(x, x, zero, 0.5, PairKind::kDiff).value().item(), 1.0, 1e-15);
  EXPECT_THROW(nested_pair_loss(x, tape.constant(Tensor<double>::vector({1, 2, 3})), zero, 0.5,
                                PairKind::kSame),
               ShapeError);
}

TEST(NestedPairLoss, MatchesNaiveLoopAndScaling) {
  RngStream rng(2, 2);
  for (int trial = 0; trial < 20; ++trial) {
    Vec x(8), y(8), rho(8);
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : y) v = rng.uniform(-1, 1);
    for (auto& v : rho) v = rng.uniform(-0.5, 0.5);
    for (const auto kind : {PairKind::kSame, PairKind::kDiff}) {
      Tape<double> tape;
      const double got = nested_pair_loss(tape.constant(Tensor<double>(Shape{8}, x)),
                                          tape.constant(Tensor<double>(Shape{8}, y)),
                                          tape.constant(Tensor<double>(Shape{8}, rho)), 0.8, kind)
                             .value()
                             .item();
      EXPECT_NEAR(got, oracle_nested(x, y, rho, 0.8, kind), 1e-12);
    }
    // h = c everywhere scales the same-loss by c^2.
    const double c = 1.7;
    Tape<double> tape;
    const auto vx = tape.constant(Tensor<double>(Shape{8}, x));
    const auto vy = tape.constant(Tensor<double>(Shape{8}, y));
    const double base = nested_pair_loss(vx, vy, tape.constant(Tensor<double>(Shape{8})), 0.8,
                                         PairKind::kSame).value().item();
    const double scaled = nested_pair_loss(vx, vy, tape.constant(Tensor<double>(Shape{8}, std::log(c))),
                                           0.8, PairKind::kSame).value().item();
    EXPECT_NEAR(scaled, c * c * base, 1e-10);
  }
}

TEST(NestedPairLoss, Gradient) {
  RngStream rng(3, 3);
  for (const auto kind : {PairKind::kSame, PairKind::kDiff}) {
    const double err = gradcheck(
        {random_tensor(rng, {6}, -1, 1), random_tensor(rng, {6}, -1, 1), random_tensor(rng, {6}, -0.3, 0.3)},
        [&](Tape<double>&, const std::vector<Var<double>>& in) {
          return nested_pair_loss(in[0], in[1], in[2], 0.7, kind);
        });
    EXPECT_LT(err, 1e-6);
  }
}

TEST(CentroidLoss, TwoArtistExample) {
  ToyCorpus c;
  c.codes = {{0.0}, {3.0}};
  c.artists = {0, 1};
  c.sizes = {1, 1};
  c.styles = {{1.0}, {5.0}};
  c.rho = {0.0};
  const double got = centroid_value(c, {0, 1}, 0.5);
  const double same = 2.5, diff = (std::exp(-25.0) + std::exp(-4.0)) / 2;
  EXPECT_NEAR(diff, 9.158e-3, 1e-6);
  EXPECT_NEAR(got, same + diff, 1e-12);
  EXPECT_NEAR(got, 2.5092, 1e-4);
}

TEST(CentroidLoss, IdealClusteringIsNearZero) {
  ToyCorpus c;
  const std::size_t D = 4;
  for (std::size_t a = 0; a < 3; ++a) {
    c.styles.push_back(Vec(D, 10.0 * double(a)));
    c.sizes.push_back(4);
    for (int i = 0; i < 4; ++i) {
      c.codes.push_back(c.styles.back());
      c.artists.push_back(a);
    }
  }
  c.rho = Vec(D, 0.0);
  EXPECT_NEAR(centroid_value(c, all_indices(c.codes.size()), 0.9), 0.0, 1e-10);
}

TEST(CentroidLoss, MatchesBruteForce) {
  RngStream rng(4, 4);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t A = 1 + rng.index(4), D = 1 + rng.index(8);
    const auto c = random_toy(rng, A, 5, D);
    const double t = rng.uniform(0.3, 0.99);
    EXPECT_NEAR(centroid_value(c, all_indices(c.codes.size()), t), oracle_centroid(c, t), 1e-10);
  }
}

TEST(CentroidLoss, PermutationInvariant) {
  RngStream rng(5, 5);
  const auto c = random_toy(rng, 4, 5, 6);
  auto idx = all_indices(c.codes.size());
  const double base = centroid_value(c, idx, 0.8);
  for (int k = 0; k < 5; ++k) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
    EXPECT_NEAR(centroid_value(c, idx, 0.8), base, 1e-10);
  }
}

TEST(CentroidLoss, MinibatchEstimatorIsUnbiased) {
  RngStream rng(6, 6);
  ToyCorpus c;
  const std::vector<std::size_t> sizes = {3, 5, 8, 12};
  for (std::size_t a = 0; a < 4; ++a) {
    Vec s(5);
    for (auto& v : s) v = rng.uniform(-1, 1);
    c.styles.push_back(s);
    c.sizes.push_back(sizes[a]);
    for (std::size_t i = 0; i < sizes[a]; ++i) {
      Vec x(5);
      for (std::size_t k = 0; k < 5; ++k) x[k] = s[k] + rng.uniform(-0.8, 0.8);
      c.codes.push_back(x);
      c.artists.push_back(a);
    }
  }
  c.rho = Vec(5, 0.0);
  const double full = oracle_centroid(c, 0.8);
  double acc = 0;
  const int trials = 1000;
  for (int i = 0; i < trials; ++i) acc += centroid_value(c, random_subset(rng, c.codes.size(), 6), 0.8);
  EXPECT_NEAR(acc / trials, full, 0.02 * full);
}

TEST(CentroidLoss, GradientWithRespectToStyles) {
  RngStream rng(7, 7);
  const std::vector<std::size_t> artists = {0, 2, 1, 2, 0};
  const std::vector<std::size_t> sizes = {4, 3, 6};
  const double err = gradcheck(
      {random_tensor(rng, {5, 4}, -1, 1), random_tensor(rng, {3, 4}, -1, 1), random_tensor(rng, {4}, -0.3, 0.3)},
      [&](Tape<double>&, const std::vector<Var<double>>& in) {
        return centroid_metric_loss(in[0], artists, in[1], in[2], 0.8, sizes);
      });
  EXPECT_LT(err, 1e-4);
}

TEST(CentroidLoss, Errors) {
  Tape<double> tape;
  const auto codes = tape.constant(Tensor<double>(Shape{2, 3}));
  const auto styles = tape.constant(Tensor<double>(Shape{2, 3}));
  const auto rho = tape.constant(Tensor<double>(Shape{3}));
  EXPECT_THROW(centroid_metric_loss(codes, {0, 2}, styles, rho, 0.5, {1, 1}), ConfigError);
  EXPECT_THROW(centroid_metric_loss(codes, {0}, styles, rho, 0.5, {1, 1}), ShapeError);
}

TEST(PairLoss, Examples) {
  ToyCorpus one;
  one.codes = {{0.5, 1.0}, {0.5, 1.0}, {0.5, 1.0}};
  one.artists = {0, 0, 0};
  one.sizes = {3};
  one.rho = {0.0, 0.0};
  EXPECT_EQ(pairs_value(one, {0, 1, 2}, 0.5), 0.0);

  ToyCorpus two;
  two.codes = {{0.0}, {1.3}};
  two.artists = {0, 1};
  two.sizes = {1, 1};
  two.rho = {0.0};
  EXPECT_NEAR(pairs_value(two, {0, 1}, 0.5), std::exp(-1.3 * 1.3), 1e-14);
}

TEST(PairLoss, MatchesBruteForceAndIsPermutationInvariant) {
  RngStream rng(8, 8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t A = 1 + rng.index(4), D = 1 + rng.index(8);
    const auto c = random_toy(rng, A, 5, D);
    if (c.codes.size() < 2) continue;
    const double t = rng.uniform(0.3, 0.99);
    auto idx = all_indices(c.codes.size());
    const double full = pairs_value(c, idx, t);
    EXPECT_NEAR(full, oracle_pairs(c, t), 1e-10);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
    EXPECT_NEAR(pairs_value(c, idx, t), full, 1e-10);
  }
}

TEST(PairLoss, MinibatchEstimatorIsUnbiased) {
  RngStream rng(9, 9);
  ToyCorpus c;
  const std::vector<std::size_t> sizes = {3, 5, 8, 12};
  for (std::size_t a = 0; a < 4; ++a) {
    Vec s(4);
    for (auto& v : s) v = rng.uniform(-1, 1);
    c.sizes.push_back(sizes[a]);
    for (std::size_t i = 0; i < sizes[a]; ++i) {
      Vec x(4);
      for (std::size_t k = 0; k < 4; ++k) x[k] = s[k] + rng.uniform(-0.8, 0.8);
      c.codes.push_back(x);
      c.artists.push_back(a);
    }
  }
  c.rho = Vec(4, 0.0);
  const double full = oracle_pairs(c, 0.8);
  double acc = 0;
  const int trials = 1000;
  for (int i = 0; i < trials; ++i) acc += pairs_value(c, random_subset(rng, c.codes.size(), 8), 0.8);
  EXPECT_NEAR(acc / trials, full, 0.02 * full);
}

namespace {

ContentVAE<double> tiny_vae(std::uint64_t seed, std::size_t content_dim = 4) {
  RngStream rng(seed, 0);
  return build_content_vae<double>(tiny_spec(8, content_dim, 6), 2, rng);
}

// Makes the encoder ignore its input: mean and logvar become the head biases.
void constant_encoder(ContentVAE<double>& vae, double mean, double logvar) {
  vae.params[vae.mean_head.gain].value.fill(0.0);
  vae.params[vae.mean_head.bias].value.fill(mean);
  vae.params[vae.logvar_head.gain].value.fill(0.0);
  vae.params[vae.logvar_head.bias].value.fill(logvar);
}

}  // namespace

TEST(VaeLoss, PerfectDecoderAndStandardPosterior) {
  auto vae = tiny_vae(1);
  constant_encoder(vae, 0.0, 0.0);
  RngStream rng(1, 2);
  const auto style = random_tensor(rng, {2, 2});
  const auto eps = sample_gaussian<double>(rng, Shape{2, 4});
  const std::vector<std::size_t> prefix = {2, 4};
  const auto probe = random_tensor(rng, {2, 3, 8, 8}, -1, 1);
  Tensor<double> decoded;
  {
    Tape<double> tape;
    Binder<double> b(tape, std::as_const(vae.params));
    // Decoder output does not depend on the images when the encoder is constant.
    auto [mu, lv] = vae.encode(b, tape.constant(probe));
    Tensor<double> z = mu.value();
    const auto mask = prefix_mask<double>(2, 4, prefix);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = (z[i] + eps[i]) * mask[i];
    decoded = vae.decode(b, tape.constant(style), tape.constant(z)).value();
  }
  Tape<double> tape;
  Binder<double> b(tape, std::as_const(vae.params));
  const auto loss = vae_loss_given(b, vae, tape.constant(decoded), tape.constant(style), eps, prefix);
  EXPECT_NEAR(loss.reconstruction.value().item(), 0.0, 1e-20);
  EXPECT_NEAR(loss.kl.value().item(), 0.0, 1e-15);
}

TEST(VaeLoss, KlClosedForm) {
  auto vae = tiny_vae(2);
  constant_encoder(vae, 0.7, -0.4);
  RngStream rng(2, 2);
  Tape<double> tape;
  Binder<double> b(tape, std::as_const(vae.params));
  const auto loss = vae_loss_given(b, vae, tape.constant(random_tensor(rng, {3, 3, 8, 8})),
                                   tape.constant(random_tensor(rng, {3, 2})),
                                   Tensor<double>(Shape{3, 4}), {4, 4, 4});
  const double per_dim = 0.5 * (0.49 + std::exp(-0.4) - 1 + 0.4);
  EXPECT_NEAR(loss.kl.value().item(), 4 * per_dim, 1e-12);
}

TEST(VaeLoss, MonteCarloMatchesExactWeightedSum) {
  const auto vae = tiny_vae(3, 6);
  const double t = 0.7;
  RngStream rng(3, 3);
  const auto image = random_tensor(rng, {1, 3, 8, 8}, -1, 1);
  const auto style = random_tensor(rng, {1, 2});
  const auto eps = sample_gaussian<double>(rng, Shape{1, 6});
  const double exact = vae_reconstruction_exact(vae, image, style, eps, t);

  // 100 copies per call, 100 calls: 10^4 prefix draws.
  const std::size_t copies = 100;
  Tensor<double> images(Shape{copies, 3, 8, 8}), styles(Shape{copies, 2}), epss(Shape{copies, 6});
  for (std::size_t i = 0; i < copies; ++i) {
    std::copy_n(image.raw(), 192, images.raw() + i * 192);
    std::copy_n(style.raw(), 2, styles.raw() + i * 2);
    std::copy_n(eps.raw(), 6, epss.raw() + i * 6);
  }
  RngStream draws(4, 4);
  double acc = 0;
  for (int call = 0; call < 100; ++call) {
    std::vector<std::size_t> prefix(copies);
    for (auto& p : prefix) p = sample_prefix_length(t, 6, draws);
    Tape<double> tape;
    Binder<double> b(tape, vae.params);
    acc += vae_loss_given(b, vae, tape.constant(images), tape.constant(styles), epss, prefix)
               .reconstruction.value().item();
  }
  EXPECT_NEAR(acc / 100, exact, 0.02 * exact);
}

TEST(VaeLoss, StochasticEstimatorGradient) {
  auto vae = tiny_vae(5);
  RngStream rng(5, 5);
  const auto images = random_tensor(rng, {2, 3, 8, 8}, -1, 1);
  const auto style = random_tensor(rng, {2, 2});
  const NetLoss f = [&](Tape<double>& tape, std::vector<Binder<double>>& b) {
    RngStream draw(11, 11);
    const auto l = vae_loss(b[0], vae, tape.constant(images), tape.constant(style), 0.7, draw);
    return l.reconstruction + l.kl;
  };
  EXPECT_LT(param_gradcheck({&vae.params}, f, 16), 1e-4);
}

TEST(GanLoss, DiscriminatorExamples) {
  Tape<double> tape;
  auto probs = [&](std::size_t n, double p) { return tape.constant(Tensor<double>(Shape{n}, p)); };
  const std::array<Var<double>, 3> half{probs(2, 0.5), probs(8, 0.5), probs(32, 0.5)};
  EXPECT_NEAR(gan_d_loss(half, half).value().item(), 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(2 * std::log(2.0), 1.3863, 1e-4);
  const std::array<Var<double>, 3> one{probs(2, 1.0), probs(8, 1.0), probs(32, 1.0)};
  const std::array<Var<double>, 3> zero{probs(2, 0.0), probs(8, 0.0), probs(32, 0.0)};
  const double perfect = gan_d_loss(one, zero).value().item();
  EXPECT_GE(perfect, 0.0);
  EXPECT_LT(perfect, 1e-6);
  EXPECT_TRUE(std::isfinite(gan_d_loss(zero, one).value().item()));
}

TEST(GanLoss, DiscriminatorOnRandomImagesIsFinite) {
  RngStream rng(6, 0);
  const auto c = build_consortium<double>(tiny_spec(4, 1), 16, rng);
  Tape<double> tape;
  std::array<Binder<double>, 3> b{Binder<double>(tape, std::as_const(c.members[0].params)),
                                  Binder<double>(tape, std::as_const(c.members[1].params)),
                                  Binder<double>(tape, std::as_const(c.members[2].params))};
  const auto real = c.forward(b, tape.constant(random_tensor(rng, {2, 3, 16, 16}, -1, 1)), rng);
  const auto fake = c.forward(b, tape.constant(random_tensor(rng, {2, 3, 16, 16}, -1, 1)), rng);
  const double v = gan_d_loss(real, fake).value().item();
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(v, 0.0);
}

namespace {

struct GanFixture {
  StyleEncoder<double> s;
  ContentVAE<double> vae;
  StyleNormalizer<double> norm;
  DiscriminatorConsortium<double> consortium;
  Generator<double> g;

  GanFixture() {
    RngStream rng(7, 0);
    s = build_style_encoder<double>(tiny_spec(16, 4), rng);
    vae = build_content_vae<double>(tiny_spec(16, 5, 6), 3, rng);
    norm = fit_style_normalizer(s.encode(random_tensor(rng, {20, 3, 16, 16}, -1, 1)), 3);
    consortium = build_consortium<double>(tiny_spec(4, 1), 16, rng);
    g = build_generator<double>(ArchSpec{2, {4, 4}, {1, 1}, 16, 9, 0}, {3, 4, 2}, rng);
  }
  GanCritics<double> critics() const { return {&s, &vae, &norm, &consortium}; }
};

}  // namespace

TEST(GanLoss, GeneratorComponentsRecombine) {
  GanFixture fx;
  RngStream rng(8, 8);
  const auto u = random_tensor(rng, {2, 3}), v = random_tensor(rng, {2, 4}), w = random_tensor(rng, {2, 2});
  Tape<double> tape;
  Binder<double> gb(tape, fx.g.params);
  const GanWeights weights;
  EXPECT_EQ(weights.style, 0.5);
  EXPECT_EQ(weights.content, 0.05);
  const auto l = gan_g_loss(gb, fx.g, fx.critics(), tape.constant(u), tape.constant(v), tape.constant(w),
                            weights, rng);
  const double manual = l.gan.value().item() + 0.5 * l.style.value().item() + 0.05 * l.content.value().item();
  EXPECT_NEAR(l.total.value().item(), manual, 1e-12);

  tape.backward(l.total);
  for (const auto& p : fx.g.params) EXPECT_TRUE(p.has_grad()) << p.name;
  for (const auto& p : fx.s.params) EXPECT_FALSE(p.has_grad()) << p.name;
  for (const auto& p : fx.vae.params) EXPECT_FALSE(p.has_grad()) << p.name;
  for (const auto& m : fx.consortium.members) {
    for (const auto& p : m.params) EXPECT_FALSE(p.has_grad()) << p.name;
  }
}

TEST(GanLoss, ExactStyleRecoveryGivesZeroStyleLoss) {
  GanFixture fx;
  RngStream rng(9, 9);
  const auto images = random_tensor(rng, {3, 3, 16, 16}, -1, 1);
  const auto target = fx.norm.apply(fx.s.encode(images));
  const auto content = fx.vae.encode_mean(images);
  Tensor<double> v(Shape{3, 4});
  for (std::size_t i = 0; i < 3; ++i) std::copy_n(content.raw() + i * 5, 4, v.raw() + i * 4);
  Tape<double> tape;
  const auto [style, cont] = code_recovery_losses(tape.constant(images), fx.critics(),
                                                  tape.constant(target), tape.constant(v));
  EXPECT_NEAR(style.value().item(), 0.0, 1e-20);
  EXPECT_NEAR(cont.value().item(), 0.0, 1e-20);
}

TEST(GanLoss, GeneratorGradient) {
  GanFixture fx;
  RngStream rng(10, 10);
  const auto u = random_tensor(rng, {2, 3}), v = random_tensor(rng, {2, 4}), w = random_tensor(rng, {2, 2});
  const NetLoss f = [&](Tape<double>& tape, std::vector<Binder<double>>& b) {
    RngStream draw(3, 3);
    return gan_g_loss(b[0], fx.g, fx.critics(), tape.constant(u), tape.constant(v), tape.constant(w),
                      GanWeights{}, draw)
        .total;
  };
  EXPECT_LT(param_gradcheck({&fx.g.params}, f, 16), 1e-4);
}

TEST(Normalizer, StandardizesTrainingCodes) {
  RngStream rng(11, 11);
  Tensor<double> codes(Shape{50, 6});
  for (std::size_t i = 0; i < codes.size(); ++i) codes[i] = rng.uniform(-3, 5) * double(1 + i % 6);
  const auto norm = fit_style_normalizer(codes, 4);
  EXPECT_EQ(norm.dim(), 4u);
  const auto z = norm.apply(codes);
  EXPECT_EQ(z.shape(), (Shape{50, 4}));
  for (std::size_t k = 0; k < 4; ++k) {
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      s += z[i * 4 + k];
      s2 += z[i * 4 + k] * z[i * 4 + k];
    }
    EXPECT_LT(std::abs(s / 50), 1e-6);
    EXPECT_NEAR(std::sqrt(s2 / 50 - (s / 50) * (s / 50)), 1.0, 1e-6);
  }
  const auto back = norm.inverse(z);
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(back[i * 4 + k], codes[i * 6 + k], 1e-12);
  }
  const auto again = norm.apply(norm.inverse(z));
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(again[i], z[i], 1e-12);
  Tape<double> tape;
  const auto zv = norm.apply(tape.constant(codes)).value();
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(zv[i], z[i], 1e-15);
}

TEST(Normalizer, DegenerateInputsRejected) {
  EXPECT_THROW(fit_style_normalizer(Tensor<double>(Shape{1, 3}, 2.0), 3), NumericError);
  Tensor<double> codes(Shape{4, 2});
  codes[0] = 1;
  EXPECT_THROW(fit_style_normalizer(codes, 2), NumericError);  // column 1 constant
  EXPECT_NO_THROW(fit_style_normalizer(codes, 1));
  EXPECT_THROW(fit_style_normalizer(codes, 3), ConfigError);
}

TEST(CrossEntropy, ValueAndGradient) {
  Tape<double> tape;
  const auto logits = tape.constant(Tensor<double>(Shape{2, 3}, Vec{1, 2, 3, 0, 0, 5}));
  const double v = cross_entropy(logits, {2, 0}).value().item();
  const double l0 = std::log(std::exp(1) + std::exp(2) + std::exp(3)) - 3;
  const double l1 = std::log(2 + std::exp(5)) - 0;
  EXPECT_NEAR(v, (l0 + l1) / 2, 1e-12);
  RngStream rng(12, 12);
  const double err = gradcheck({random_tensor(rng, {4, 5})}, [](Tape<double>&, const std::vector<Var<double>>& in) {
    return cross_entropy(in[0], {0, 4, 2, 2});
  });
  EXPECT_LT(err, 1e-6);
}
