#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dtpsr/pipeline.hpp"
#include "fixtures.hpp"

using namespace dtpsr;
namespace fs = std::filesystem;

namespace {

std::vector<Tensor> values(const Denoiser& m) {
  std::vector<Tensor> out;
  for (const auto& e : m.parameters().entries()) out.push_back(e.var->value);
  return out;
}

std::size_t line_count(const fs::path& p) {
  std::ifstream f(p);
  std::size_t n = 0;
  for (std::string line; std::getline(f, line);) n += !line.empty();
  return n;
}

}  // namespace

class TrainTest : public ::testing::Test {
 protected:
  fs::path dir = fs::temp_directory_path() / "dtpsr_train_test";
  std::unique_ptr<EncoderSuite> suite;
  std::vector<TrainingExample> data;
  TrainConfig cfg;

  void SetUp() override {
    fs::remove_all(dir);
    const auto s = build_dataset(4, dir / "data", 2, DatasetConfig{});
    suite = std::make_unique<EncoderSuite>(test::codec_config(), 16);
    data = load_examples(Manifest::load(s.manifest), suite->view());
    cfg.batch_size = 2;
    cfg.iterations = 6;
    cfg.seed = 4;
    cfg.checkpoint_every = 0;
  }
  void TearDown() override { fs::remove_all(dir); }

  std::vector<LossPoint> train(Denoiser& m, const TrainConfig& c, const fs::path& log = {},
                               const fs::path& ckpt = {}) {
    Trainer t(m, ScheduleConfig{}, c);
    return t.run(data, log, ckpt);
  }
};

TEST_F(TrainTest, ExamplesMatchManifest) {
  ASSERT_EQ(data.size(), 4u);
  EXPECT_EQ(data[0].z0.shape(), (Shape{48, 16, 16}));
  EXPECT_EQ(data[0].z_lr.shape(), (Shape{48, 16, 16}));
  EXPECT_EQ(data[0].lr_tokens.tokens.shape(), (Shape{16, 8}));
  EXPECT_EQ(data[0].record_id, "rec_000000");
}

TEST_F(TrainTest, ZeroIterationsCheckpointEqualsInitialisation) {
  Denoiser m(test::codec_config());
  const Denoiser fresh(test::codec_config());
  cfg.iterations = 0;
  EXPECT_TRUE(train(m, cfg, {}, dir / "c0.json").empty());
  const Checkpoint c = load_checkpoint(dir / "c0.json");
  EXPECT_EQ(c.iteration, 0u);
  EXPECT_EQ(values(model_from_checkpoint(c)), values(fresh));
}

TEST_F(TrainTest, FixedSeedGivesIdenticalLossCurve) {
  Denoiser a(test::codec_config()), b(test::codec_config()), c(test::codec_config());
  const auto ca = train(a, cfg), cb = train(b, cfg);
  ASSERT_EQ(ca.size(), 6u);
  for (std::size_t i = 0; i < ca.size(); ++i) {
    EXPECT_EQ(ca[i].loss, cb[i].loss);
    EXPECT_EQ(ca[i].iteration, i);
  }
  EXPECT_EQ(values(a), values(b));
  TrainConfig other = cfg;
  other.seed = 5;
  EXPECT_NE(train(c, other)[0].loss, ca[0].loss);
}

TEST_F(TrainTest, ResumeMatchesUninterruptedRun) {
  Denoiser full(test::codec_config());
  const auto curve = train(full, cfg);

  Denoiser part(test::codec_config());
  TrainConfig half = cfg;
  half.iterations = 3;
  train(part, half, dir / "loss.jsonl", dir / "c3.json");

  Denoiser resumed(test::codec_config());
  Trainer t(resumed, ScheduleConfig{}, cfg);
  t.resume(load_checkpoint(dir / "c3.json"));
  EXPECT_EQ(t.iteration(), 3u);
  const auto rest = t.run(data, dir / "loss.jsonl");
  ASSERT_EQ(rest.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(rest[i].loss, curve[i + 3].loss);
  EXPECT_EQ(values(resumed), values(full));
  EXPECT_EQ(line_count(dir / "loss.jsonl"), 6u);
}

TEST_F(TrainTest, NonFiniteLossAborts) {
  Denoiser m(test::codec_config());
  m.parameters().entries().front().var->value[0] = std::numeric_limits<double>::quiet_NaN();
  Trainer t(m, ScheduleConfig{}, cfg);
  EXPECT_THROW(t.step(data), NumericalError);
  EXPECT_THROW(t.step({}), ValidationError);
}

TEST_F(TrainTest, EvaluationLossIsDeterministic) {
  const Denoiser m(test::codec_config());
  const auto s = ScheduleConfig{}.schedule();
  EXPECT_EQ(evaluation_loss(m, s, data, 2, 1), evaluation_loss(m, s, data, 2, 1));
  EXPECT_NE(evaluation_loss(m, s, data, 2, 1), evaluation_loss(m, s, data, 2, 2));
}

TEST(TrainingDraw, DeterministicAndInRange) {
  for (std::uint64_t it = 0; it < 50; ++it) {
    const Draw a = training_draw(3, it, 1, 4, 7, 1000, {2, 2, 2}), b = training_draw(3, it, 1, 4, 7, 1000, {2, 2, 2});
    EXPECT_EQ(a.example, b.example);
    EXPECT_EQ(a.t, b.t);
    EXPECT_EQ(a.eps, b.eps);
    EXPECT_LT(a.example, 7u);
    EXPECT_GE(a.t, 0);
    EXPECT_LT(a.t, 1000);
  }
}

TEST(AdamW, ClosedFormSteps) {
  ParameterSet ps;
  auto w = ps.add("w", Tensor({2}, std::vector<double>{1.0, -2.0}));
  AdamW opt(ps, AdamWConfig{0.1, 0.9, 0.999, 0.0, 0.0, 0.0});
  w->grad = Tensor({2}, std::vector<double>{0.5, -4.0});
  EXPECT_DOUBLE_EQ(opt.step(), std::sqrt(0.25 + 16.0));
  // The first bias-corrected update is lr * sign(g).
  EXPECT_NEAR(w->value[0], 0.9, 1e-15);
  EXPECT_NEAR(w->value[1], -1.9, 1e-15);
  w->grad = Tensor({2}, std::vector<double>{0.5, 0.0});
  opt.step();
  const double m2 = 0.9 * 0.05 + 0.05, v2 = 0.999 * 0.00025 + 0.00025;
  EXPECT_NEAR(w->value[0], 0.9 - 0.1 * (m2 / (1 - 0.81)) / std::sqrt(v2 / (1 - 0.998001)), 1e-12);
}

TEST(AdamW, ClippingDecayAndNonFinite) {
  ParameterSet ps;
  auto w = ps.add("w", Tensor({1}, 2.0));
  AdamW opt(ps, AdamWConfig{0.1, 0.9, 0.999, 0.0, 0.5, 1.0});
  w->grad = Tensor({1}, 300.0);
  EXPECT_DOUBLE_EQ(opt.step(), 300.0);
  EXPECT_NEAR(w->value[0], 2.0 - 0.1 * (1.0 + 0.5 * 2.0), 1e-12);
  w->grad = Tensor({1}, std::numeric_limits<double>::infinity());
  EXPECT_THROW(opt.step(), std::runtime_error);
}

TEST(Checkpoint, RoundTripAndShapeChecks) {
  const fs::path p = fs::temp_directory_path() / "dtpsr_ckpt_rt.json";
  Denoiser m(test::tiny_config());
  test::randomize_gates(m, 3);
  ParameterSet& ps = m.parameters();
  AdamW opt(ps, {});
  for (auto& e : ps.entries()) e.var->grad = Tensor(e.var->value.shape(), 0.25);
  opt.step();
  save_checkpoint(p, capture_checkpoint(ScheduleConfig{}, m, &opt, 7));
  const Checkpoint c = load_checkpoint(p);
  EXPECT_EQ(c.iteration, 7u);
  EXPECT_EQ(c.adam_steps, 1u);
  Denoiser back(c.denoiser);
  AdamW opt2(back.parameters(), {});
  restore_checkpoint(c, back, &opt2);
  EXPECT_EQ(values(back), values(m));
  EXPECT_EQ(opt2.first_moments(), opt.first_moments());
  EXPECT_EQ(opt2.steps(), 1u);

  DenoiserConfig wider = test::tiny_config();
  wider.base_channels = 4;
  Denoiser other(wider);
  EXPECT_THROW(restore_checkpoint(c, other), std::exception);
  fs::remove(p);
  EXPECT_THROW(load_checkpoint(p), std::runtime_error);
}
