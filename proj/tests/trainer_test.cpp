#include <gtest/gtest.h>

#include <set>
#include <tuple>

#include "mind/gradcheck.hpp"
#include "mind/trainer.hpp"

using namespace mind;

namespace {

std::vector<Tensor> random_frames(Rng& rng, int count, int h, int w) {
  std::vector<Tensor> frames;
  for (int i = 0; i < count; ++i)
    frames.push_back(random_tensor(rng, 1, 3, h, w, 0, 1));
  return frames;
}

NetConfig tiny_net_config(int h = 8, int w = 16) {
  NetConfig c;
  c.input_h = h;
  c.input_w = w;
  c.conv_channels = {6, 8};
  c.dconv_channels = {8, 6};
  c.convs_per_block = 2;
  return c;
}

}  // namespace

TEST(MakeTriplets, FiveFramesGiveTwentyFour) {
  Rng rng(1);
  auto frames = random_frames(rng, 5, 4, 4);
  auto triplets = make_triplets(frames);
  EXPECT_EQ(triplets.size(), 24u);  // 3 windows x 2 directions x 4 flips
}

TEST(MakeTriplets, ThreeFramesNoAugmentationGiveTwo) {
  Rng rng(2);
  auto frames = random_frames(rng, 3, 4, 4);
  auto triplets = make_triplets(frames, 0, false);
  ASSERT_EQ(triplets.size(), 2u);
  EXPECT_FALSE(triplets[0].prov.reversed);
  EXPECT_TRUE(triplets[1].prov.reversed);
}

TEST(MakeTriplets, ReversedTripletKeepsMiddleTarget) {
  Rng rng(3);
  auto frames = random_frames(rng, 3, 4, 4);
  auto triplets = make_triplets(frames, 0, false);
  EXPECT_EQ(triplets[1].i1.data, frames[2].data);
  EXPECT_EQ(triplets[1].i2.data, frames[1].data);
  EXPECT_EQ(triplets[1].i3.data, frames[0].data);
}

TEST(MakeTriplets, ShortSequenceYieldsEmpty) {
  Rng rng(4);
  auto frames = random_frames(rng, 2, 4, 4);
  EXPECT_TRUE(make_triplets(frames).empty());
}

TEST(MakeTriplets, ProvenanceRecordsAreDistinct) {
  Rng rng(5);
  auto frames = random_frames(rng, 3, 4, 4);
  auto triplets = make_triplets(frames, 9);
  ASSERT_EQ(triplets.size(), 8u);
  std::set<std::tuple<int, int, bool, int>> seen;
  for (const auto& t : triplets)
    seen.insert({t.prov.sequence, t.prov.frame, t.prov.reversed,
                 static_cast<int>(t.prov.flip)});
  EXPECT_EQ(seen.size(), 8u);
}

TEST(Flips, AreInvolutions) {
  Rng rng(6);
  Tensor t = random_tensor(rng, 1, 3, 5, 7);
  for (FlipMode m : {FlipMode::vertical, FlipMode::horizontal, FlipMode::both})
    EXPECT_EQ(apply_flip(apply_flip(t, m), m).data, t.data);
}

TEST(SplitWindows, TailFractionHeldOut) {
  auto [train, held] = split_windows(20, 0.1);
  EXPECT_EQ(train.size(), 18u);
  EXPECT_EQ(held.size(), 2u);
  EXPECT_EQ(held.front(), 18);
  auto [t1, h1] = split_windows(1, 0.1);
  EXPECT_EQ(t1.size(), 1u);
  EXPECT_TRUE(h1.empty());
}

TEST(Charbonnier, EqualTensorsGiveEpsilon) {
  Tensor a(1, 3, 4, 4), b(1, 3, 4, 4);
  Rng rng(7);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    a.data[i] = b.data[i] = uniform(rng, 0, 1);
  auto [loss, grad] = charbonnier_loss(a, b, 0.1);
  EXPECT_DOUBLE_EQ(loss, 0.1);
  for (double g : grad.data) EXPECT_EQ(g, 0.0);
}

TEST(Charbonnier, SingleElementClosedForm) {
  Tensor a(1, 1, 1, 1), b(1, 1, 1, 1);
  a.data[0] = 0.5;
  b.data[0] = 0.2;
  auto [loss, grad] = charbonnier_loss(a, b, 0.1);
  EXPECT_NEAR(loss, std::sqrt(0.09 + 0.01), 1e-15);
  EXPECT_NEAR(loss, 0.316228, 1e-6);
  (void)grad;
}

TEST(Charbonnier, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  Tensor pred = random_tensor(rng, 2, 3, 4, 5);
  Tensor target = random_tensor(rng, 2, 3, 4, 5);
  auto [loss, grad] = charbonnier_loss(pred, target, 0.1);
  (void)loss;
  auto f = [&](const Tensor& t) { return charbonnier_loss(t, target, 0.1).first; };
  EXPECT_LT(finite_diff_check(f, pred, grad, 1e-4), 1e-6);
}

TEST(Charbonnier, LossNeverBelowEpsilon) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor pred = random_tensor(rng, 1, 2, 3, 3);
    Tensor target = random_tensor(rng, 1, 2, 3, 3);
    const double eps = uniform(rng, 0.01, 0.5);
    auto [loss, grad] = charbonnier_loss(pred, target, eps);
    (void)grad;
    EXPECT_GE(loss, eps);
    if (pred.data != target.data) EXPECT_GT(loss, eps);
  }
}

namespace {

// independent scalar Adam recurrence
struct AdamOracle {
  double m = 0, v = 0;
  long t = 0;
  double step(double g, double lr, double b1, double b2, double eps) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, static_cast<double>(t)));
    const double vhat = v / (1 - std::pow(b2, static_cast<double>(t)));
    return -lr * mhat / (std::sqrt(vhat) + eps);
  }
};

// one scalar parameter exposed through a PReLU slope
struct ScalarParam {
  std::vector<LayerParams> params;
  OptimizerState st;
  TrainConfig cfg;

  ScalarParam() {
    params.push_back(LayerParams::make_prelu(1, 0.0));
    cfg.lr = 1e-3;
    st = OptimizerState::init(params, cfg);
  }
  double value() const { return params[0].slope[0]; }
  void step_with_grad(double g) {
    params[0].slope_grad[0] = g;
    adam_step(params, st, cfg);
  }
};

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  MindNet net = MindNet::build(tiny_net_config(8, 8), 3);
  TrainConfig cfg;
  OptimizerState st = OptimizerState::init(net.params(), cfg);
  std::vector<std::vector<double>> before;
  for (const auto& p : net.params()) before.push_back(p.weights.data);
  net.zero_grads();
  adam_step(net.params(), st, cfg);
  EXPECT_EQ(st.t, 1);
  for (std::size_t i = 0; i < net.params().size(); ++i)
    EXPECT_EQ(net.params()[i].weights.data, before[i]);
}

TEST(Adam, FirstStepIsMinusLearningRate) {
  ScalarParam sp;
  AdamOracle oracle;
  const double before = sp.value();
  sp.step_with_grad(1.0);
  const double update = sp.value() - before;
  const double expect = oracle.step(1.0, 1e-3, 0.9, 0.999, 1e-8);
  EXPECT_DOUBLE_EQ(update, expect);
  EXPECT_NEAR(update, -1e-3, 1e-10);
}

TEST(Adam, ConstantGradientUpdatesFollowTheRecurrence) {
  // bias correction makes the update magnitude constant for constant g; the
  // oracle recurrence is the reference, and magnitudes must never grow
  ScalarParam sp;
  AdamOracle oracle;
  double prev_mag = 1e300;
  for (int i = 0; i < 5; ++i) {
    const double before = sp.value();
    sp.step_with_grad(1.0);
    const double update = sp.value() - before;
    const double expect = oracle.step(1.0, 1e-3, 0.9, 0.999, 1e-8);
    EXPECT_DOUBLE_EQ(update, expect);
    EXPECT_LE(std::abs(update), prev_mag * (1 + 1e-12));
    prev_mag = std::abs(update);
  }
}

TEST(Adam, ZeroLearningRateIsIdentityOnParameters) {
  ScalarParam sp;
  sp.st.lr = 0.0;
  const double before = sp.value();
  sp.step_with_grad(2.5);
  EXPECT_EQ(sp.value(), before);
  EXPECT_EQ(sp.st.t, 1);
}

TEST(Adam, RejectsUninitialisedState) {
  MindNet net = MindNet::build(tiny_net_config(8, 8), 3);
  TrainConfig cfg;
  OptimizerState st;  // empty
  EXPECT_THROW(adam_step(net.params(), st, cfg), ShapeError);
}

TEST(Adam, GradsZeroedAfterStep) {
  ScalarParam sp;
  sp.step_with_grad(1.0);
  EXPECT_EQ(sp.params[0].slope_grad[0], 0.0);
}

namespace {

std::vector<Triplet> tiny_triplets(int count, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Triplet> out;
  for (int i = 0; i < count; ++i) {
    Triplet t;
    t.i1 = random_tensor(rng, 1, 3, h, w, 0, 1);
    t.i2 = random_tensor(rng, 1, 3, h, w, 0, 1);
    t.i3 = random_tensor(rng, 1, 3, h, w, 0, 1);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

TEST(Train, SingleStepTouchesEveryLayer) {
  MindNet net = MindNet::build(tiny_net_config(), 5);
  std::vector<std::vector<double>> before;
  for (const auto& p : net.params())
    before.push_back(p.kind == LayerKind::prelu ? p.slope : p.weights.data);

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  auto triplets = tiny_triplets(2, 8, 16, 99);
  TrainResult res = train(net, triplets, cfg);
  EXPECT_EQ(res.steps, 1);
  ASSERT_EQ(res.curve.size(), 1u);

  for (std::size_t i = 0; i < net.params().size(); ++i) {
    const auto& p = net.params()[i];
    const auto& now = p.kind == LayerKind::prelu ? p.slope : p.weights.data;
    EXPECT_NE(now, before[i]) << "layer " << i << " untouched";
  }
}

TEST(Train, CurveLengthEqualsStepsAndIsDeterministic) {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 3;
  cfg.rng_seed = 123;
  auto triplets = tiny_triplets(7, 8, 16, 7);

  MindNet a = MindNet::build(tiny_net_config(), 5);
  TrainResult ra = train(a, triplets, cfg);
  // 7 triplets, batch 3 -> 3 steps per epoch
  EXPECT_EQ(ra.steps, 9);
  EXPECT_EQ(ra.curve.size(), 9u);

  MindNet b = MindNet::build(tiny_net_config(), 5);
  TrainResult rb = train(b, triplets, cfg);
  ASSERT_EQ(ra.curve.size(), rb.curve.size());
  for (std::size_t i = 0; i < ra.curve.size(); ++i) {
    EXPECT_EQ(ra.curve[i].loss, rb.curve[i].loss);
    EXPECT_EQ(ra.curve[i].lr, rb.curve[i].lr);
  }
}

TEST(Train, DivergenceAborts) {
  MindNet net = MindNet::build(tiny_net_config(), 5);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.lr = 1e150;  // guaranteed blow-up
  auto triplets = tiny_triplets(4, 8, 16, 11);
  TrainResult res = train(net, triplets, cfg);
  EXPECT_TRUE(res.diverged);
}

TEST(Train, EpochHookRuns) {
  MindNet net = MindNet::build(tiny_net_config(), 5);
  TrainConfig cfg;
  cfg.epochs = 2;
  auto triplets = tiny_triplets(2, 8, 16, 13);
  int calls = 0;
  TrainHooks hooks;
  hooks.on_epoch = [&](int, const MindNet&, const OptimizerState&) { ++calls; };
  train(net, triplets, cfg, hooks);
  EXPECT_EQ(calls, 2);
}

TEST(TrainConfig, ValidationRejectsBadValues) {
  TrainConfig cfg;
  cfg.beta1 = 1.0;
  EXPECT_THROW(cfg.validate(), ShapeError);
  cfg = {};
  cfg.lr = 0;
  EXPECT_THROW(cfg.validate(), ShapeError);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ShapeError);
}
