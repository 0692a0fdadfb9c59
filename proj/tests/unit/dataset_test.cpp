#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "stylespace/dataset/corpus.hpp"
#include "stylespace/error.hpp"

using namespace stylespace;
namespace fs = std::filesystem;

namespace {

ArtistCorpus small_corpus(std::size_t artists, std::size_t per, std::uint64_t seed) {
  RngStream rng(seed, stream_id("corpus"));
  return generate_synthetic_corpus({artists, per, 32, 0.05}, rng);
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("stylespace_ds_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
             "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_images(const fs::path& dir, std::size_t count, std::size_t res) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < count; ++i) {
    ImageRGB img(res, res);
    img.pixels[0] = static_cast<std::uint8_t>(i);
    write_png(dir / ("img_" + std::to_string(i) + ".png"), img);
  }
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = 0.5 * static_cast<double>(i + j);
    i = j + 1;
  }
  return r;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// Mean and std of each Lab channel.
std::array<double, 6> pixel_stats(const ImageRGB& img) {
  const ImageLab lab = rgb_to_lab(img);
  std::array<double, 6> out{};
  const std::size_t n = img.width * img.height;
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = lab.channels[c * n + i];
      s += v;
      s2 += v * v;
    }
    const double m = s / static_cast<double>(n);
    out[c] = m;
    out[3 + c] = std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - m * m));
  }
  return out;
}

}  // namespace

TEST(Synthetic, SameSeedGivesIdenticalCorpora) {
  const auto a = small_corpus(20, 100, 7);
  const auto b = small_corpus(20, 100, 7);
  ASSERT_EQ(a.size(), 2000u);
  ASSERT_EQ(a.num_artists(), 20u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a.images[i].pixels, b.images[i].pixels) << i;
    ASSERT_EQ(a.images[i].style->values(), b.images[i].style->values());
  }
  const auto c = small_corpus(3, 5, 8);
  EXPECT_NE(a.images[0].pixels, c.images[0].pixels);
}

TEST(Synthetic, SameArtistStyleDiffersOnlyWithinJitter) {
  const auto corpus = small_corpus(6, 40, 11);
  const auto& ranges = StyleFactors::ranges();
  for (std::size_t a = 0; a < corpus.num_artists(); ++a) {
    const auto idx = corpus.indices_of(a);
    for (std::size_t k = 0; k < 5; ++k) {
      double lo = 1e300, hi = -1e300;
      for (const auto i : idx) {
        const double v = corpus.images[i].style->values()[k];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        EXPECT_GE(v, ranges[k].lo);
        EXPECT_LE(v, ranges[k].hi);
      }
      // Each image lies within +-5% of the artist base, so any two differ by <= 10%.
      EXPECT_LE(hi - lo, 2 * 0.05 * ranges[k].width() + 1e-12);
    }
    // Content factors are independent draws, so they vary widely within an artist.
    double lo = 1e300, hi = -1e300;
    for (const auto i : idx) {
      lo = std::min(lo, corpus.images[i].content->face_width);
      hi = std::max(hi, corpus.images[i].content->face_width);
    }
    EXPECT_GT(hi - lo, 0.3 * ContentFactors::ranges()[1].width());
  }
}

TEST(Synthetic, SameFactorsRenderIdentically) {
  StyleFactors s{1.0, 1.5, 1.1, 5.0, 0.4};
  ContentFactors c{0.2, 0.5, 1234u, 0.03};
  EXPECT_EQ(render_face(s, c, 64), render_face(s, c, 64));
  c.hair_seed = 99;
  EXPECT_NE(render_face(s, c, 64), render_face(StyleFactors{1.0, 1.5, 1.1, 5.0, 0.4},
                                               ContentFactors{0.2, 0.5, 1234u, 0.03}, 64));
}

TEST(Synthetic, ZeroHueRotationIsGrey) {
  StyleFactors s{0.0, 1.5, 1.2, 4.0, 0.7};
  for (std::uint32_t seed = 0; seed < 5; ++seed) {
    const ImageRGB img = render_face(s, ContentFactors{0.22, 0.5, seed, 0.0}, 64);
    for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
      ASSERT_EQ(img.pixels[i], img.pixels[i + 1]);
      ASSERT_EQ(img.pixels[i], img.pixels[i + 2]);
    }
  }
  s.hue_rotation = 1.5;
  const ImageRGB coloured = render_face(s, ContentFactors{}, 64);
  std::size_t chromatic = 0;
  for (std::size_t i = 0; i < coloured.pixels.size(); i += 3) {
    chromatic += coloured.pixels[i] != coloured.pixels[i + 1] || coloured.pixels[i] != coloured.pixels[i + 2];
  }
  EXPECT_GT(chromatic, coloured.pixels.size() / 6);
}

TEST(Synthetic, RejectsBadConfigAndFactors) {
  RngStream rng(1, 0);
  EXPECT_THROW(generate_synthetic_corpus({1, 10, 32, 0.05}, rng), ConfigError);
  EXPECT_THROW(generate_synthetic_corpus({2, 10, 48, 0.05}, rng), ConfigError);
  EXPECT_THROW(render_face(StyleFactors{4.0, 1, 1, 4, 0}, ContentFactors{}, 32), ConfigError);
}

TEST(Synthetic, StyleDistanceCorrelatesWithPixelStatistics) {
  const auto corpus = small_corpus(40, 10, 21);
  const auto& ranges = StyleFactors::ranges();
  std::vector<std::array<double, 6>> stats;
  for (const auto& im : corpus.images) stats.push_back(pixel_stats(im.pixels));
  RngStream rng(5, stream_id("pairs"));
  std::vector<double> style_d, pixel_d;
  for (int p = 0; p < 1000; ++p) {
    const std::size_t i = rng.index(corpus.size());
    std::size_t j = rng.index(corpus.size() - 1);
    if (j >= i) ++j;
    const auto si = corpus.images[i].style->values();
    const auto sj = corpus.images[j].style->values();
    double ds = 0, dp = 0;
    for (std::size_t k = 0; k < 5; ++k) ds += std::pow((si[k] - sj[k]) / ranges[k].width(), 2);
    for (std::size_t k = 0; k < 6; ++k) dp += std::pow(stats[i][k] - stats[j][k], 2);
    style_d.push_back(std::sqrt(ds));
    pixel_d.push_back(std::sqrt(dp));
  }
  const double rho = pearson(ranks(style_d), ranks(pixel_d));
  EXPECT_GT(rho, 0.0);
  RecordProperty("spearman", std::to_string(rho));
}

TEST(Ingest, TwoDirectoriesOfThree) {
  TempDir tmp;
  write_images(tmp.path() / "bob", 3, 16);
  write_images(tmp.path() / "alice", 3, 16);
  const auto corpus = ingest_directory(tmp.path());
  ASSERT_EQ(corpus.num_artists(), 2u);
  EXPECT_EQ(corpus.size(), 6u);
  EXPECT_EQ(corpus.artists[0], "alice");
  EXPECT_EQ(corpus.artists[1], "bob");
  EXPECT_EQ(corpus.resolution, 16u);
  EXPECT_FALSE(corpus.images[0].style.has_value());
  EXPECT_EQ(corpus.artist_sizes(), (std::vector<std::size_t>{3, 3}));
}

TEST(Ingest, MinWorksFilterDropsArtistWith49) {
  TempDir tmp;
  write_images(tmp.path() / "few", 49, 8);
  write_images(tmp.path() / "many", 50, 8);
  const auto corpus = ingest_directory(tmp.path(), IngestOptions{50});
  ASSERT_EQ(corpus.num_artists(), 1u);
  EXPECT_EQ(corpus.artists[0], "many");
  EXPECT_EQ(corpus.size(), 50u);
  for (const auto& im : corpus.images) EXPECT_EQ(im.artist, 0u);
}

TEST(Ingest, IgnoresNonPngAndSkipsEmptyDirs) {
  TempDir tmp;
  write_images(tmp.path() / "a", 2, 8);
  std::ofstream(tmp.path() / "a" / "notes.txt") << "hello";
  fs::create_directories(tmp.path() / "empty");
  const auto corpus = ingest_directory(tmp.path());
  EXPECT_EQ(corpus.num_artists(), 1u);
  EXPECT_EQ(corpus.size(), 2u);
}

TEST(Ingest, MixedResolutionNamesOffendingFile) {
  TempDir tmp;
  write_images(tmp.path() / "a", 2, 8);
  fs::create_directories(tmp.path() / "b");
  write_png(tmp.path() / "b" / "odd.png", ImageRGB(16, 16));
  try {
    ingest_directory(tmp.path());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("odd.png"), std::string::npos) << e.what();
  }
}

TEST(Ingest, ExportRoundTrip) {
  TempDir tmp;
  const auto corpus = small_corpus(2, 3, 4);
  export_corpus(corpus, tmp.path());
  EXPECT_TRUE(fs::exists(tmp.path() / "factors.csv"));
  const auto back = ingest_directory(tmp.path());
  ASSERT_EQ(back.size(), corpus.size());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_EQ(back.images[i].pixels, corpus.images[i].pixels);
}

namespace {
ArtistCorpus label_corpus(const std::vector<std::size_t>& sizes) {
  ArtistCorpus c;
  c.resolution = 1;
  for (std::size_t a = 0; a < sizes.size(); ++a) {
    c.artists.push_back("a" + std::to_string(a));
    for (std::size_t i = 0; i < sizes[a]; ++i) {
      c.images.push_back(CorpusImage{c.artists.back() + "/" + std::to_string(i), a, ImageRGB(1, 1), {}, {}});
    }
  }
  return c;
}

std::size_t oracle_test_count(std::size_t n) { return std::max<std::size_t>((n + 9) / 10, 10); }
}  // namespace

TEST(Split, Examples) {
  EXPECT_EQ(test_count(200, SplitSpec{}), 20u);
  EXPECT_EQ(test_count(60, SplitSpec{}), 10u);
  const auto corpus = label_corpus({200, 60});
  RngStream rng(3, 0);
  const auto [train, test] = split_train_test(corpus, SplitSpec{}, rng);
  EXPECT_EQ(test.artist_sizes(), (std::vector<std::size_t>{20, 10}));
  EXPECT_EQ(train.artist_sizes(), (std::vector<std::size_t>{180, 50}));
}

TEST(Split, IsPartition) {
  const auto corpus = label_corpus({37, 120, 15});
  RngStream rng(9, 0);
  const auto [train, test] = split_train_test(corpus, SplitSpec{}, rng);
  std::multiset<std::string> all;
  for (const auto& im : train.images) all.insert(im.id);
  for (const auto& im : test.images) all.insert(im.id);
  std::multiset<std::string> expected;
  for (const auto& im : corpus.images) expected.insert(im.id);
  EXPECT_EQ(all, expected);
  EXPECT_EQ(std::set<std::string>(all.begin(), all.end()).size(), corpus.size());
}

TEST(Split, CountRuleSweep) {
  for (std::size_t n = 11; n <= 10000; ++n) {
    ASSERT_EQ(test_count(n, SplitSpec{}), oracle_test_count(n)) << n;
  }
  const auto corpus = label_corpus({11, 99, 101, 1234, 10000});
  RngStream rng(2, 0);
  const auto [train, test] = split_train_test(corpus, SplitSpec{}, rng);
  const auto ts = test.artist_sizes();
  const auto rs = train.artist_sizes();
  const std::vector<std::size_t> n = {11, 99, 101, 1234, 10000};
  for (std::size_t a = 0; a < n.size(); ++a) {
    EXPECT_EQ(ts[a], oracle_test_count(n[a]));
    EXPECT_EQ(ts[a] + rs[a], n[a]);
  }
}

TEST(Split, TooSmallArtistIsListed) {
  const auto corpus = label_corpus({30, 10});
  RngStream rng(1, 0);
  try {
    split_train_test(corpus, SplitSpec{}, rng);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("a1"), std::string::npos);
    EXPECT_EQ(std::string(e.what()).find("a0"), std::string::npos);
  }
  EXPECT_THROW((SplitSpec{1.5, 10, 50}.validate()), ConfigError);
  EXPECT_THROW((SplitSpec{0.1, 0, 50}.validate()), ConfigError);
}

TEST(Batches, ShortFinalBatch) {
  const auto corpus = label_corpus({4, 6});
  BatchIterator it(corpus, 3, 1);
  EXPECT_EQ(it.batches_per_epoch(), 4u);
  std::vector<std::size_t> sizes;
  for (int i = 0; i < 4; ++i) sizes.push_back(it.next().indices.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 3, 3, 1}));
  EXPECT_THROW(BatchIterator(corpus, 0, 1), ConfigError);
}

TEST(Batches, EpochVisitsEachOnceAndLabelsMatch) {
  const auto corpus = label_corpus({7, 9, 4});
  BatchIterator it(corpus, 6, 4);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::vector<std::size_t> seen;
    for (std::size_t b = 0; b < it.batches_per_epoch(); ++b) {
      const Batch batch = it.next();
      for (std::size_t k = 0; k < batch.indices.size(); ++k) {
        EXPECT_EQ(batch.artists[k], corpus.images[batch.indices[k]].artist);
        seen.push_back(batch.indices[k]);
      }
    }
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> all(corpus.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    EXPECT_EQ(seen, all);
  }
}

TEST(Batches, SeedReplayAndSeek) {
  const auto corpus = label_corpus({25, 25});
  BatchIterator a(corpus, 8, 77), b(corpus, 8, 77), c(corpus, 8, 78);
  bool differs = false;
  for (int i = 0; i < 20; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x.indices, b.next().indices);
    differs |= x.indices != c.next().indices;
  }
  EXPECT_TRUE(differs);
  BatchIterator d(corpus, 8, 77);
  d.seek(13);
  EXPECT_EQ(d.next().indices, a.at(13).indices);
}

TEST(Tensors, CorpusTensorAndGather) {
  const auto corpus = small_corpus(2, 2, 3);
  const auto bank = corpus_tensor<float>(corpus);
  EXPECT_EQ(bank.shape(), (Shape{4, 3, 32, 32}));
  const auto g = gather_images(bank, {3, 0});
  EXPECT_EQ(g.shape(), (Shape{2, 3, 32, 32}));
  EXPECT_EQ(g.raw()[0], bank.raw()[3 * 3 * 32 * 32]);
  EXPECT_THROW(gather_images(bank, {4}), ShapeError);
}
