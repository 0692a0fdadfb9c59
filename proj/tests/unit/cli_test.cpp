#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "stylespace/imaging/image.hpp"
#include "stylespace/trainer/checkpoint.hpp"
#include "stylespace/trainer/config.hpp"

using namespace stylespace;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "stylespace_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    TrainConfig c = TrainConfig::desk();
    c.style_arch = {2, {8, 8}, {1, 1}, 32, 8, 0};
    c.style = {{OptimizerKind::kAdam, 3e-3}, 8, 30, 0.9};
    c.vae_arch = {2, {8, 8}, {1, 1}, 32, 4, 16};
    c.vae = {{OptimizerKind::kRmsProp, 1e-3}, 8, 30, 0.9};
    c.gen_arch = {2, {8, 8}, {1, 1}, 32, 0, 0};
    c.disc_arch = {1, {8}, {1}, 8, 1, 0};
    c.gan = {{OptimizerKind::kRmsProp, 1e-3}, 8, 10, 0.9};
    c.d_noise = 4;
    c.log_every = 10;
    c.eval_every = 10;
    c.synth = {4, 12, 32, 0.05};
    c.split = {0.25, 2, 5};
    std::ofstream(root_ / "toy.cfg") << to_text(c);
  }

  static int run(std::vector<std::string> args) {
    args.insert(args.begin(), "stylespace");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
  }

  static std::string cfg() { return (root_ / "toy.cfg").string(); }
  static std::string path(const std::string& name) { return (root_ / name).string(); }

  static inline fs::path root_;
};

}  // namespace

TEST_F(CliTest, FullWorkflow) {
  const std::string out = path("run");
  ASSERT_EQ(run({"synth-data", "--config", cfg(), "--out", path("corpus")}), 0);
  std::size_t pngs = 0;
  for (const auto& e : fs::recursive_directory_iterator(path("corpus"))) pngs += e.path().extension() == ".png";
  EXPECT_EQ(pngs, 48u);

  ASSERT_EQ(run({"train-style", "--config", cfg(), "--out", out}), 0);
  EXPECT_TRUE(fs::exists(out + "/style.ssg"));
  EXPECT_TRUE(fs::exists(out + "/style-history.csv"));
  ASSERT_EQ(run({"prune", "--checkpoint", out + "/style.ssg", "--out", out}), 0);
  EXPECT_TRUE(fs::exists(out + "/prune-style.csv"));
  ASSERT_EQ(run({"train-vae", "--checkpoint", out + "/style-pruned.ssg", "--out", out}), 0);
  ASSERT_EQ(run({"prune", "--checkpoint", out + "/vae.ssg", "--out", out}), 0);
  EXPECT_TRUE(fs::exists(out + "/prune-content.csv"));
  ASSERT_EQ(run({"train-gan", "--checkpoint", out + "/content-pruned.ssg", "--out", out}), 0);
  const std::string model = out + "/gan.ssg";
  ASSERT_TRUE(fs::exists(model));

  ASSERT_EQ(run({"eval", "--checkpoint", model, "--out", out}), 0);
  std::ifstream acc(out + "/accuracy.csv"), ratio(out + "/ratio.csv");
  std::string line;
  std::getline(acc, line);
  EXPECT_EQ(line, "method,dims,accuracy");
  std::getline(ratio, line);
  EXPECT_EQ(line, "method,dims,ratio");
  std::size_t classifier_rows = 0;
  while (std::getline(acc, line)) classifier_rows += line.rfind("classifier,", 0) == 0;
  EXPECT_EQ(classifier_rows, 4u);  // dims 1, 2, 4, 8

  ASSERT_EQ(run({"sweep", "--checkpoint", model, "--dim", "0", "--values", "-5,0,5", "--out", out}), 0);
  const ImageRGB sweep = read_png(out + "/sweep-dim0.png");
  EXPECT_EQ(sweep.height / 32, 4u);
  EXPECT_EQ(sweep.width / 32, 3u);

  ASSERT_EQ(run({"interp", "--checkpoint", model, "--n", "3", "--out", out}), 0);
  EXPECT_EQ(read_png(out + "/interp.png").width / 32, 3u);

  fs::path first;
  for (const auto& e : fs::recursive_directory_iterator(path("corpus"))) {
    if (e.path().extension() == ".png") {
      first = e.path();
      break;
    }
  }
  ASSERT_EQ(run({"reconstruct", "--checkpoint", model, "--out", out, first.string()}), 0);
  EXPECT_EQ(read_png(out + "/" + first.stem().string() + "-recon.png").width, 32u);
  ASSERT_EQ(run({"transfer", "--checkpoint", model, "--content", first.string(), "--style", first.string(),
                 "--out", out}),
            0);
  EXPECT_EQ(read_png(out + "/transfer.png"), read_png(out + "/" + first.stem().string() + "-recon.png"));

  ASSERT_EQ(run({"interp", "--checkpoint", model, "--out", out, first.string(), first.string(), first.string(),
                 first.string()}),
            0);
  EXPECT_EQ(run({"reconstruct", "--checkpoint", model, "--out", out, out + "/interp.png"}), 2);
  EXPECT_EQ(run({"sweep", "--checkpoint", model, "--dim", "999", "--out", out}), 2);
  EXPECT_EQ(run({"sweep", "--checkpoint", model, "--dim", "0", "--values", "1,x", "--out", out}), 2);
  EXPECT_EQ(run({"serve", "--checkpoint", model, "--bind", "nonsense"}), 2);
}

TEST_F(CliTest, ResumeMatchesUninterruptedRun) {
  TrainConfig c = load_train_config(cfg());
  c.checkpoint_every = 10;
  c.style.steps = 20;
  std::ofstream(path("short.cfg")) << to_text(c);
  ASSERT_EQ(run({"train-style", "--config", path("short.cfg"), "--out", path("short")}), 0);
  ASSERT_EQ(run({"train-style", "--config", cfg(), "--checkpoint", path("short") + "/style.ssg", "--out",
                 path("resumed")}),
            0);
  ASSERT_EQ(run({"train-style", "--config", cfg(), "--out", path("straight")}), 0);
  auto strip = [](Checkpoint ckpt) {
    ckpt.meta.erase("config.checkpoint_every");
    ckpt.meta.erase("config.style.steps");
    return serialize_checkpoint(ckpt);
  };
  EXPECT_EQ(strip(load_checkpoint(path("resumed") + "/style.ssg")),
            strip(load_checkpoint(path("straight") + "/style.ssg")));
}

TEST_F(CliTest, ExitCodes) {
  std::ofstream(path("bad.cfg")) << "style.lr = fast\n";
  EXPECT_EQ(run({"train-style", "--config", path("bad.cfg"), "--out", path("bad")}), 2);
  std::ofstream(path("unknown.cfg")) << "no.such.key = 1\n";
  EXPECT_EQ(run({"train-style", "--config", path("unknown.cfg"), "--out", path("bad")}), 2);
  EXPECT_EQ(run({"train-style", "--bogus-flag"}), 2);
  EXPECT_EQ(run({"prune", "--out", path("bad")}), 2);
  EXPECT_EQ(run({}), 2);

  TrainConfig c = load_train_config(cfg());
  c.style.optimizer.learning_rate = 1e30;
  std::ofstream(path("explode.cfg")) << to_text(c);
  EXPECT_EQ(run({"train-style", "--config", path("explode.cfg"), "--out", path("explode")}), 3);
  EXPECT_TRUE(fs::exists(path("explode") + "/style-diagnostic.ssg"));
}
