#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sys/wait.h>

#include "commands.hpp"
#include "experiment.hpp"
#include "segdiff/errors.hpp"

namespace fs = std::filesystem;

namespace segdiff::cli {
namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path = fs::temp_directory_path() / ("segdiff_cli_" + std::to_string(std::random_device{}()) + "_" +
                                        (info ? info->name() : "suite"));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

int count_lines(const fs::path& p) {
  std::ifstream f(p);
  std::string line;
  int n = 0;
  while (std::getline(f, line)) ++n;
  return n;
}

ExperimentConfig tiny_experiment(const fs::path& root) {
  ExperimentConfig c;
  c.net.base_width = 8;
  c.net.channel_mult = {1, 2};
  c.net.time_embed_dim = 16;
  c.net.groups = 4;
  c.scene.size = 8;
  c.scene.max_entities = 4;
  c.train.iterations = 20;
  c.train.batch_size = 4;
  c.train.warmup_iters = 2;
  c.train.decay_tail_iters = 5;
  c.train.eval_every = 10;
  c.train.eval_images = 2;
  c.splits = {{0, 6}, {1000, 2}, {2000, 3}};
  c.sampler.steps = 2;
  c.dataset = root / "data";
  c.out = root / "run";
  return c;
}

TEST(ExperimentConfig, Defaults) {
  const ExperimentConfig c;
  EXPECT_EQ(c.sampler.steps, 8);
  EXPECT_EQ(c.sampler.guidance_weight, 1.0);
  EXPECT_EQ(c.input_scale, 0.1);
  EXPECT_EQ(c.prediction, PredictionType::X);
  EXPECT_EQ(c.weighting.kind, WeightingKind::SigmoidBias);
  EXPECT_EQ(c.weighting.bias, -4.0);
  EXPECT_NO_THROW(c.validate());
}

TEST(ExperimentConfig, RejectsOddBitsWithSimilarPalette) {
  ExperimentConfig c;
  c.n_bits = 3;
  c.scene.n_bits = 3;
  c.scene.max_entities = 8;
  EXPECT_THROW(c.validate(), ValidationError);
  c.lap_mode = LapMode::None;
  c.scene.max_entities = 7;
  EXPECT_NO_THROW(c.validate());
}

TEST(ExperimentConfig, JsonRoundTripAndUnknownKeys) {
  TempDir tmp;
  ExperimentConfig c = tiny_experiment(tmp.path);
  c.lap_mode = LapMode::Random;
  c.palette_seed = 9;
  c.encoding = EncodingKind::OneHot;
  c.weighting = {WeightingKind::SnrEps, -2.0};
  c.prediction = PredictionType::V;
  write_config(tmp.path, c);
  const auto back = load_experiment(tmp.path / "config.json");
  EXPECT_EQ(to_json(back), to_json(c));
  auto j = to_json(c);
  j["bogus"] = 1;
  EXPECT_THROW(experiment_from_json(j), ValidationError);
}

TEST(RunGuarded, ExitCodes) {
  EXPECT_EQ(run_guarded([] {}), kExitOk);
  EXPECT_EQ(run_guarded([] { throw ValidationError("v"); }), kExitValidation);
  EXPECT_EQ(run_guarded([] { throw IoError("io"); }), kExitIo);
  EXPECT_EQ(run_guarded([] { throw NumericError("nan"); }), kExitNumeric);
  EXPECT_EQ(run_guarded([] { throw CapacityError("cap"); }), kExitValidation);
}

TEST(Sweep, DefaultGrids) {
  EXPECT_EQ(default_sweep_values(SweepKind::Timesteps), (std::vector<std::string>{"1", "2", "4", "8", "16", "32"}));
  EXPECT_EQ(default_sweep_values(SweepKind::Guidance).size(), 7u);
  EXPECT_EQ(default_sweep_values(SweepKind::InputScale).size(), 6u);
  EXPECT_EQ(default_sweep_values(SweepKind::LapMode).size(), 4u);
  EXPECT_EQ(default_sweep_values(SweepKind::Encoding).size(), 3u);
  EXPECT_EQ(default_sweep_values(SweepKind::PredLoss).size(), 9u);
  for (auto k : {SweepKind::Timesteps, SweepKind::Guidance, SweepKind::InputScale, SweepKind::LapMode,
                 SweepKind::Encoding, SweepKind::PredLoss, SweepKind::BestOfN}) {
    EXPECT_EQ(parse_sweep_kind(to_string(k)), k);
  }
  EXPECT_TRUE(is_training_sweep(SweepKind::LapMode));
  EXPECT_FALSE(is_training_sweep(SweepKind::Guidance));
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0}), 2.5);
}

// One dataset and one trained model shared by the end-to-end tests below.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    tmp_ = new TempDir;
    cfg_ = tiny_experiment(tmp_->path);
    cmd_datagen(cfg_, cfg_.dataset);
    cmd_train(cfg_, cfg_.out);
  }
  static void TearDownTestSuite() { delete tmp_; }
  static TempDir* tmp_;
  static ExperimentConfig cfg_;
};
TempDir* Pipeline::tmp_ = nullptr;
ExperimentConfig Pipeline::cfg_;

TEST_F(Pipeline, DatagenCountsAndRerun) {
  const auto n = [&](const char* sub) {
    return std::distance(fs::directory_iterator(cfg_.dataset / sub), fs::directory_iterator{});
  };
  EXPECT_EQ(n("images"), 6 + 2 + 3);
  EXPECT_EQ(n("entities"), 6 + 2 + 3);
  EXPECT_EQ(read_dataset_meta(cfg_.dataset).splits, cfg_.splits);
  cmd_datagen(cfg_, tmp_->path / "again");
  EXPECT_EQ(slurp(tmp_->path / "again" / "images" / "2001.png"), slurp(cfg_.dataset / "images" / "2001.png"));
  EXPECT_EQ(slurp(tmp_->path / "again" / "meta.json"), slurp(cfg_.dataset / "meta.json"));
}

TEST_F(Pipeline, TrainWritesLogAndIsDeterministic) {
  std::ifstream log(cfg_.out / "log.csv");
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, "iter,loss,ari,iou,lr");
  EXPECT_EQ(count_lines(cfg_.out / "log.csv"), 1 + 2);
  EXPECT_TRUE(fs::exists(cfg_.out / "config.json"));
  cmd_train(cfg_, tmp_->path / "run2");
  EXPECT_EQ(load_checkpoint(tmp_->path / "run2" / "final.sgdf").parameters,
            load_checkpoint(cfg_.out / "final.sgdf").parameters);
}

TEST_F(Pipeline, SampleMultipleDrawsAndEval) {
  SampleOptions so;
  so.checkpoint = cfg_.out / "final.sgdf";
  so.images = cfg_.dataset / "images";
  so.out = tmp_->path / "pred4";
  so.sampler = cfg_.sampler;
  so.sampler.seed = 7;
  so.num_samples = 4;
  const auto files = cmd_sample(so, cfg_);
  EXPECT_EQ(files.size(), 4u * 11u);
  std::set<std::string> contents;
  for (int k = 0; k < 4; ++k) {
    const auto p = so.out / ("2000_s" + std::to_string(k) + ".png");
    ASSERT_TRUE(fs::exists(p));
    contents.insert(slurp(p));
    EXPECT_EQ(load_labelmap(p).height(), 8);
  }
  EXPECT_EQ(contents.size(), 4u);
  so.out = tmp_->path / "pred4b";
  cmd_sample(so, cfg_);
  EXPECT_EQ(slurp(tmp_->path / "pred4" / "2000_s3.png"), slurp(tmp_->path / "pred4b" / "2000_s3.png"));
  EXPECT_TRUE(fs::exists(tmp_->path / "pred4" / "config.json"));

  const auto gt = cfg_.dataset / "entities";
  const auto self = cmd_eval(gt, gt, tmp_->path / "eval_self", cfg_);
  EXPECT_EQ(self.mean_ari, 1.0);
  EXPECT_EQ(self.mean_iou, 1.0);
  EXPECT_EQ(count_lines(tmp_->path / "eval_self" / "eval.csv"), 1 + 11 + 1);

  so.out = tmp_->path / "pred1";
  so.num_samples = 1;
  cmd_sample(so, cfg_);
  const auto rep = cmd_eval(gt, so.out, tmp_->path / "eval", cfg_);
  double sum = 0.0;
  for (const auto& r : rep.rows) sum += r.ari;
  EXPECT_NEAR(rep.mean_ari, sum / rep.rows.size(), 1e-12);

  fs::remove(so.out / "2001.png");
  try {
    cmd_eval(gt, so.out, tmp_->path / "eval_missing", cfg_);
    FAIL() << "missing prediction accepted";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("2001.png"), std::string::npos);
  }
}

TEST_F(Pipeline, ResumeRejectsMismatchedSpec) {
  ExperimentConfig other = cfg_;
  other.net.base_width = 16;
  EXPECT_THROW(cmd_train(other, tmp_->path / "bad", cfg_.out / "final.sgdf"), ValidationError);
}

TEST_F(Pipeline, GuidanceZeroMatchesUnguidedSampling) {
  SweepOptions g;
  g.kind = SweepKind::Guidance;
  g.values = {"0"};
  g.eval_images = 3;
  const auto guided = cmd_sweep(g, cfg_, tmp_->path / "sweep_g");
  ExperimentConfig plain = cfg_;
  plain.sampler.guidance_weight = 0.0;
  SweepOptions t;
  t.kind = SweepKind::Timesteps;
  t.values = {std::to_string(cfg_.sampler.steps)};
  t.eval_images = 3;
  const auto unguided = cmd_sweep(t, plain, tmp_->path / "sweep_t");
  ASSERT_EQ(guided.size(), 1u);
  EXPECT_EQ(guided[0].ari, unguided[0].ari);
  EXPECT_EQ(guided[0].iou, unguided[0].iou);
  EXPECT_EQ(count_lines(tmp_->path / "sweep_g" / "sweep_guidance.csv"), 2);
}

TEST_F(Pipeline, BestOfNMonotone) {
  SweepOptions b;
  b.kind = SweepKind::BestOfN;
  b.eval_images = 3;
  const auto rows = cmd_sweep(b, cfg_, tmp_->path / "sweep_b");
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_GE(rows[i].ari, rows[i - 1].ari);
}

TEST_F(Pipeline, TrainingSweepNeedsCheckpointsUnlessTraining) {
  SweepOptions l;
  l.kind = SweepKind::LapMode;
  l.grid_dir = tmp_->path / "grid";
  l.eval_images = 2;
  EXPECT_THROW(cmd_sweep(l, cfg_, tmp_->path / "sweep_l"), IoError);
  l.train_missing = true;
  const auto rows = cmd_sweep(l, cfg_, tmp_->path / "sweep_l");
  EXPECT_EQ(rows.size(), 4u);
  EXPECT_EQ(count_lines(tmp_->path / "sweep_l" / "sweep_lap_mode.csv"), 5);
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(SEGDIFF_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(CliBinary, ExitCodeContract) {
  TempDir tmp;
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("sample --images x"), 1);
  ExperimentConfig c = tiny_experiment(tmp.path);
  auto j = to_json(c);
  j["n_bits"] = 3;
  write_json(tmp.path / "odd.json", j);
  EXPECT_EQ(run_cli("--config " + (tmp.path / "odd.json").string() + " train"), 1);
  write_json(tmp.path / "ok.json", to_json(c));
  EXPECT_EQ(run_cli("--config " + (tmp.path / "ok.json").string() + " train"), 2);  // no dataset yet
  EXPECT_EQ(run_cli("--config " + (tmp.path / "ok.json").string() + " datagen"), 0);
  EXPECT_TRUE(fs::exists(tmp.path / "data" / "meta.json"));
  EXPECT_EQ(run_cli("--config " + (tmp.path / "ok.json").string() + " eval --gt " +
                    (tmp.path / "data" / "entities").string() + " --pred " + (tmp.path / "nowhere").string()),
            2);
}

}  // namespace
}  // namespace segdiff::cli
