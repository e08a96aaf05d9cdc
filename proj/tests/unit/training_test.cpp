// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "depthrnn/errors.hpp"
#include "depthrnn/training/trainer.hpp"

namespace depthrnn::training {
namespace {

backbone::BackboneConfig tiny_model() {
  backbone::BackboneConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.vocab = 10;
  c.max_seq = 8;
  c.ff_mult = 2;
  return c;
}

std::vector<TrainingSequence> corpus(std::size_t n, Rng& rng) {
  std::vector<TrainingSequence> out(n);
  for (TrainingSequence& s : out) {
    for (int i = 0; i < 6; ++i) s.tokens.push_back(rng.below(10));
    s.answer_begin = 5;
  }
  return out;
}

backbone::BackboneWeights frozen_backbone(std::uint64_t seed) {
  Rng rng(seed);
  backbone::BackboneWeights w = backbone::BackboneWeights::init(tiny_model(), rng);
  w.freeze();
  return w;
}

TEST(Targets, MaskingAndShift) {
  TrainingSequence s{{1, 2, 3, 4}, 3};
  EXPECT_EQ(targets_for(s, LossMask::kAllTokens), (std::vector<int>{2, 3, 4}));
  EXPECT_EQ(targets_for(s, LossMask::kAnswerTokensOnly), (std::vector<int>{-1, -1, 4}));
}

TEST(Config, Validation) {
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  EXPECT_NO_THROW(c.validate());
}

TEST(Pretrain, MemorizesOneSequence) {
  Rng rng(1);
  const std::vector<TrainingSequence> one = corpus(1, rng);
  TrainConfig c;
  c.learning_rate = 1e-2;
  c.batch_size = 1;
  c.epochs = 300;
  c.loss_mask = LossMask::kAllTokens;
  TrainRecord rec;
  backbone::BackboneWeights w = pretrain_backbone(one, tiny_model(), c, &rec);
  EXPECT_TRUE(w.frozen());
  EXPECT_LT(rec.steps.back().loss, 0.01);
}

TEST(Pretrain, ZeroRateKeepsInitBytes) {
  Rng rng(2);
  TrainConfig c;
  c.learning_rate = 0.0;
  c.epochs = 2;
  c.seed = 5;
  c.loss_mask = LossMask::kAllTokens;
  TrainRecord rec;
  const backbone::BackboneWeights w = pretrain_backbone(corpus(20, rng), tiny_model(), c, &rec);
  EXPECT_EQ(rec.backbone_sha_before, rec.backbone_sha_after);
  Rng init_rng(mix_seed(5, "backbone-init"));
  backbone::BackboneWeights fresh = backbone::BackboneWeights::init(tiny_model(), init_rng);
  fresh.freeze();
  EXPECT_EQ(w.sha256(), fresh.sha256());
}

TEST(Pretrain, DivergenceReportsSeedAndStep) {
  Rng rng(3);
  TrainConfig c;
  c.learning_rate = 1e6;
  c.optimizer = OptimizerKind::kSgd;
  c.epochs = 50;
  c.seed = 77;
  c.loss_mask = LossMask::kAllTokens;
  try {
    pretrain_backbone(corpus(10, rng), tiny_model(), c);
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("seed 77"), std::string::npos) << msg;
    EXPECT_NE(msg.find("step"), std::string::npos) << msg;
  }
}

TEST(Finetune, ZeroEpochsKeepParams) {
  backbone::BackboneWeights w = frozen_backbone(4);
  Rng rng(4);
  depth::CellMode mode = depth::CellMode::create(depth::CellVariant::kDgDpu, 8, rng);
  const std::string before = mode.serialize();
  TrainConfig c;
  c.epochs = 0;
  finetune_cell(w, mode, corpus(10, rng), c);
  EXPECT_EQ(mode.serialize(), before);
}

TEST(Finetune, BackboneUntouchedAndParamsMove) {
  backbone::BackboneWeights w = frozen_backbone(5);
  const std::string sha = w.sha256();
  Rng rng(5);
  depth::CellMode mode = depth::CellMode::create(depth::CellVariant::kDgDpu, 8, rng);
  const std::string before = mode.serialize();
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.epochs = 1;
  const TrainRecord rec = finetune_cell(w, mode, corpus(30, rng), c);
  EXPECT_EQ(rec.backbone_sha_before, sha);
  EXPECT_EQ(rec.backbone_sha_after, sha);
  EXPECT_EQ(w.sha256(), sha);
  EXPECT_NE(mode.serialize(), before);
  EXPECT_EQ(rec.steps.size(), 3u);
}

TEST(Finetune, Preconditions) {
  Rng rng(6);
  backbone::BackboneWeights unfrozen = backbone::BackboneWeights::init(tiny_model(), rng);
  depth::CellMode mode = depth::CellMode::create(depth::CellVariant::kDgDpu, 8, rng);
  const auto data = corpus(5, rng);
  EXPECT_THROW(finetune_cell(unfrozen, mode, data, TrainConfig{}), ContractError);
  backbone::BackboneWeights w = frozen_backbone(6);
  depth::CellMode vanilla = depth::CellMode::forced_vanilla();
  EXPECT_THROW(finetune_cell(w, vanilla, data, TrainConfig{}), ContractError);
  depth::CellMode narrow = depth::CellMode::create(depth::CellVariant::kGru, 4, rng);
  EXPECT_THROW(finetune_cell(w, narrow, data, TrainConfig{}), ConfigError);
}

TEST(Finetune, DeterministicBytes) {
  backbone::BackboneWeights w = frozen_backbone(7);
  Rng rng(7);
  const auto data = corpus(40, rng);
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.epochs = 2;
  c.seed = 99;
  std::string bytes[2];
  for (std::string& b : bytes) {
    Rng cell_rng(123);
    depth::CellMode mode = depth::CellMode::create(depth::CellVariant::kDgDpu, 8, cell_rng);
    finetune_cell(w, mode, data, c);
    b = mode.serialize();
  }
  EXPECT_EQ(bytes[0], bytes[1]);
}

TEST(Finetune, SingleExampleLossTrendsDown) {
  backbone::BackboneWeights w = frozen_backbone(8);
  Rng rng(8);
  depth::CellMode mode = depth::CellMode::create(depth::CellVariant::kDgDpu, 8, rng);
  TrainConfig c;
  c.learning_rate = 3e-3;
  c.batch_size = 1;
  c.epochs = 120;
  const TrainRecord rec = finetune_cell(w, mode, corpus(1, rng), c);
  // EMA with a 20-step window.
  const double alpha = 2.0 / 21.0;
  double ema = rec.steps.front().loss;
  std::vector<double> series;
  for (const StepRecord& s : rec.steps) {
    ema = alpha * s.loss + (1.0 - alpha) * ema;
    series.push_back(ema);
  }
  for (std::size_t i = 20; i < series.size(); i += 20) {
    EXPECT_LT(series[i], series[i - 20]) << "step " << i;
  }
}

// With answer_tokens_only, rewriting non-answer tokens (which are only ever
// targets) leaves the cell gradient unchanged.
TEST(LossMask, GradientIgnoresNonAnswerTargets) {
  backbone::BackboneWeights w = frozen_backbone(9);
  Rng rng(9);
  depth::CellMode mode = depth::CellMode::create(depth::CellVariant::kDgDpu, 8, rng);
  TrainingSequence s{{1, 2, 3, 4, 5, 6}, 5};
  auto grads_for = [&](std::vector<int> targets) {
    for (Parameter* p : mode.parameters()) p->zero_grad();
    Tape t;
    backbone::BoundBackbone b = backbone::bind(t, std::as_const(w));
    std::unique_ptr<depth::BoundCell> cell = depth::bind(t, mode);
    t.backward(recurrence_loss(s.inputs(), targets, b, *cell));
    std::vector<Tensor> g;
    for (Parameter* p : mode.parameters()) g.push_back(p->grad);
    return g;
  };
  const std::vector<int> masked = targets_for(s, LossMask::kAnswerTokensOnly);
  std::vector<int> relabelled = masked;
  // Masked entries stay masked whatever the underlying tokens were.
  TrainingSequence other{{1, 9, 0, 7, 8, 6}, 5};
  EXPECT_EQ(targets_for(other, LossMask::kAnswerTokensOnly), masked);
  EXPECT_EQ(grads_for(masked), grads_for(targets_for(other, LossMask::kAnswerTokensOnly)));
  relabelled[0] = 3;
  EXPECT_NE(grads_for(masked), grads_for(relabelled));
}

TEST(Calibration, HitsTargetGate) {
  backbone::BackboneWeights w = frozen_backbone(10);
  Rng rng(10);
  depth::CellMode mode =
      depth::CellMode::create(depth::CellVariant::kDgDpu, 8, rng, cells::CellInit::kNearVanilla);
  const auto sample = corpus(20, rng);
  calibrate_correction_gate(mode, w, sample, 0.88);
  EXPECT_NEAR(mean_correction_gate(mode, w, sample), 0.88, 1e-3);
}

TEST(Record, CsvHeader) {
  TrainRecord r;
  r.steps.push_back({1, 0, 0.5, 2.0});
  std::ostringstream out;
  r.write_csv(out);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "step,epoch,loss,grad_norm");
}

TEST(Optimizer, SgdStep) {
  Parameter p("p", Tensor::vector({1.0, 2.0}));
  p.grad = Tensor::vector({0.5, -1.0});
  TrainConfig c;
  c.optimizer = OptimizerKind::kSgd;
  c.learning_rate = 0.1;
  Optimizer opt(c, {&p});
  opt.step();
  EXPECT_DOUBLE_EQ(p.value[0], 0.95);
  EXPECT_DOUBLE_EQ(p.value[1], 2.1);
  EXPECT_EQ(opt.steps_taken(), 1u);
}

}  // namespace
}  // namespace depthrnn::training
