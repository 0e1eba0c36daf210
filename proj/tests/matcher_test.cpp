#include <gtest/gtest.h>

#include <chrono>

#include "mind/gradcheck.hpp"
#include "mind/matcher.hpp"
#include "test_nets.hpp"

using namespace mind;
using mind::testing::LinearConvNet;
using mind::testing::make_shift_net;

namespace {

NetConfig tiny_net_config() {
  NetConfig c;
  c.input_h = 8;
  c.input_w = 16;
  c.conv_channels = {6, 8};
  c.dconv_channels = {8, 6};
  c.convs_per_block = 2;
  return c;
}

Tensor spike_map(int h, int w, int r, int c, double v) {
  Tensor m(1, 1, h, w);
  m.at(0, 0, r, c) = v;
  return m;
}

}  // namespace

TEST(ExtractMatch, UniqueSpikeWins) {
  SensitivityPair sp;
  sp.g1 = spike_map(10, 10, 5, 7, 1.0);
  sp.g3 = spike_map(10, 10, 2, 3, 1.0);
  Correspondence m = extract_match(sp);
  EXPECT_EQ(m.p1_r, 5);
  EXPECT_EQ(m.p1_c, 7);
  EXPECT_EQ(m.p3_r, 2);
  EXPECT_EQ(m.p3_c, 3);
  EXPECT_TRUE(m.valid);
}

TEST(ExtractMatch, TieBreaksToSmallestRowMajorIndex) {
  SensitivityPair sp;
  sp.g1 = Tensor(1, 1, 6, 6);
  sp.g1.at(0, 0, 2, 2) = 4.0;
  sp.g1.at(0, 0, 3, 1) = 4.0;
  sp.g3 = spike_map(6, 6, 0, 0, 1.0);
  Correspondence m = extract_match(sp);
  EXPECT_EQ(m.p1_r, 2);
  EXPECT_EQ(m.p1_c, 2);
}

TEST(ExtractMatch, AllZeroMapIsInvalidWithZeroScore) {
  SensitivityPair sp;
  sp.g1 = Tensor(1, 1, 6, 6);
  sp.g3 = spike_map(6, 6, 1, 1, 1.0);
  Correspondence m = extract_match(sp);
  EXPECT_FALSE(m.valid);
  EXPECT_EQ(m.score1, 0.0);
  EXPECT_EQ(m.score3, 0.0);
}

TEST(MatchingScore, UniformMapScoresOne) {
  Tensor g(1, 1, 40, 40);
  for (double& v : g.data) v = 0.7;
  EXPECT_NEAR(matching_score(g, 20, 20), 1.0, 1e-12);
}

TEST(MatchingScore, InteriorSpikeScoresWindowArea) {
  Tensor g = spike_map(40, 40, 20, 20, 1.0);
  EXPECT_DOUBLE_EQ(matching_score(g, 20, 20), 400.0);  // mean = 1/400
}

TEST(MatchingScore, CornerSpikeUsesClippedWindow) {
  Tensor g = spike_map(40, 40, 0, 0, 1.0);
  // window rows [-10,9] and cols [-10,9] clip to [0,9]: 10x10 pixels
  EXPECT_DOUBLE_EQ(matching_score(g, 0, 0), 100.0);
}

TEST(Sensitivity, MapsAreNonNegativeForAnyNet) {
  MindNet net = MindNet::build(tiny_net_config(), 21);
  Rng rng(1);
  Tensor i1 = random_tensor(rng, 1, 3, 8, 16, 0, 1);
  Tensor i3 = random_tensor(rng, 1, 3, 8, 16, 0, 1);
  SensitivityPair sp = sensitivity(net, i1, i3, {3, 5});
  for (double v : sp.g1.data) EXPECT_GE(v, 0.0);
  for (double v : sp.g3.data) EXPECT_GE(v, 0.0);
}

TEST(Sensitivity, AveragingNetHasHalfSpikeAtAnchor) {
  LinearConvNet net = make_shift_net(10, 12, 0, 0);
  Rng rng(2);
  Tensor i1 = random_tensor(rng, 1, 3, 10, 12, 0, 1);
  Tensor i3 = random_tensor(rng, 1, 3, 10, 12, 0, 1);
  SensitivityPair sp = sensitivity(net, i1, i3, {4, 6});
  // sum-RGB seed: three channels each 0.5 -> channel-summed magnitude 1.5
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 12; ++x) {
      const double expect = (y == 4 && x == 6) ? 1.5 : 0.0;
      ASSERT_EQ(sp.g1.at(0, 0, y, x), expect);
      ASSERT_EQ(sp.g3.at(0, 0, y, x), expect);
    }
}

TEST(Sensitivity, UsesExactlyOneBackwardPass) {
  MindNet net = MindNet::build(tiny_net_config(), 23);
  Rng rng(3);
  Tensor i1 = random_tensor(rng, 1, 3, 8, 16, 0, 1);
  Tensor i3 = random_tensor(rng, 1, 3, 8, 16, 0, 1);
  net.reset_counters();
  sensitivity(net, i1, i3, {0, 0});
  EXPECT_EQ(net.counters().forward_passes, 1);
  EXPECT_EQ(net.counters().backward_seeds, 1);
  sensitivity(net, i1, i3, {1, 1});
  EXPECT_EQ(net.counters().forward_passes, 1);  // cache reused
  EXPECT_EQ(net.counters().backward_seeds, 2);
}

TEST(Sensitivity, RejectsOutOfBoundsAnchor) {
  MindNet net = MindNet::build(tiny_net_config(), 25);
  Rng rng(4);
  Tensor i1 = random_tensor(rng, 1, 3, 8, 16, 0, 1);
  Tensor i3 = random_tensor(rng, 1, 3, 8, 16, 0, 1);
  EXPECT_THROW(sensitivity(net, i1, i3, {8, 0}), ShapeError);
}

TEST(ShiftOracle, AllInteriorAnchorsMatchExactly) {
  const int h = 16, w = 20;
  Rng rng(5);
  Tensor i1 = random_tensor(rng, 1, 3, h, w, 0, 1);
  Tensor i3 = random_tensor(rng, 1, 3, h, w, 0, 1);

  const std::pair<int, int> shifts[] = {{0, 0}, {2, 0}, {0, 3}};
  for (auto [dy, dx] : shifts) {
    LinearConvNet net = make_shift_net(h, w, dy, dx);
    net.forward(i1, i3);
    const int margin = std::max(std::abs(dy), std::abs(dx));
    for (int i = margin; i < h - margin; ++i)
      for (int j = margin; j < w - margin; ++j) {
        SensitivityPair sp = sensitivity(net, i1, i3, {i, j});
        Correspondence m = extract_match(sp);
        ASSERT_TRUE(m.valid);
        ASSERT_EQ(m.p1_r, i - dy) << "d=(" << dy << "," << dx << ")";
        ASSERT_EQ(m.p1_c, j - dx);
        ASSERT_EQ(m.p3_r, i + dy);
        ASSERT_EQ(m.p3_c, j + dx);
        ASSERT_GT(m.score1, 1.0);
        ASSERT_GT(m.score3, 1.0);
      }
  }
}

TEST(ScaleInvariance, ScaledSeedLeavesMatchAndScoreUnchanged) {
  MindNet net = MindNet::build(tiny_net_config(), 27);
  Rng rng(6);
  Tensor i1 = random_tensor(rng, 1, 3, 8, 16, 0, 1);
  Tensor i3 = random_tensor(rng, 1, 3, 8, 16, 0, 1);
  net.forward(i1, i3);

  const double alpha = 7.5;
  auto [a1, a3] = net.backward_to_input(PixelSeed{4, 9, -1, 1.0});
  auto [b1, b3] = net.backward_to_input(PixelSeed{4, 9, -1, alpha});

  SensitivityPair sa{4, 9, abs_channel_sum(a1, 0), abs_channel_sum(a3, 0)};
  SensitivityPair sb{4, 9, abs_channel_sum(b1, 0), abs_channel_sum(b3, 0)};
  for (std::size_t i = 0; i < sa.g1.data.size(); ++i)
    ASSERT_NEAR(sb.g1.data[i], alpha * sa.g1.data[i],
                1e-12 * std::max(1.0, std::abs(sa.g1.data[i])));

  Correspondence ma = extract_match(sa);
  Correspondence mb = extract_match(sb);
  EXPECT_EQ(ma.p1_r, mb.p1_r);
  EXPECT_EQ(ma.p1_c, mb.p1_c);
  EXPECT_EQ(ma.p3_r, mb.p3_r);
  EXPECT_EQ(ma.p3_c, mb.p3_c);
  EXPECT_NEAR(ma.score1, mb.score1, 1e-9 * std::max(1.0, ma.score1));
  EXPECT_NEAR(ma.score3, mb.score3, 1e-9 * std::max(1.0, ma.score3));
}

TEST(SensitivityBatch, SingleSeedSweepIsBitwiseEqualToSerial) {
  MindNet net = MindNet::build(tiny_net_config(), 29);
  Rng rng(7);
  Tensor i1 = random_tensor(rng, 1, 3, 8, 16, 0, 1);
  Tensor i3 = random_tensor(rng, 1, 3, 8, 16, 0, 1);

  std::vector<std::pair<int, int>> anchors = {{3, 4}};
  BatchOptions opts;
  opts.max_seeds_per_sweep = 1;
  auto batched = sensitivity_batch(net, i1, i3, anchors, opts);
  SensitivityPair serial = sensitivity(net, i1, i3, anchors[0]);
  ASSERT_EQ(batched.size(), 1u);
  EXPECT_EQ(batched[0].g1.data, serial.g1.data);
  EXPECT_EQ(batched[0].g3.data, serial.g3.data);
}

TEST(SensitivityBatch, SixteenSeedSweepMatchesSerial) {
  MindNet net = MindNet::build(tiny_net_config(), 31);
  Rng rng(8);
  Tensor i1 = random_tensor(rng, 1, 3, 8, 16, 0, 1);
  Tensor i3 = random_tensor(rng, 1, 3, 8, 16, 0, 1);

  std::vector<std::pair<int, int>> anchors;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 2; ++j) anchors.emplace_back(i, 8 * j + i);
  ASSERT_EQ(anchors.size(), 16u);

  auto batched = sensitivity_batch(net, i1, i3, anchors);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    SensitivityPair serial = sensitivity(net, i1, i3, anchors[a]);
    for (std::size_t i = 0; i < serial.g1.data.size(); ++i) {
      ASSERT_NEAR(batched[a].g1.data[i], serial.g1.data[i], 1e-10);
      ASSERT_NEAR(batched[a].g3.data[i], serial.g3.data[i], 1e-10);
    }
  }
}

TEST(SensitivityBatch, TinyMemoryBudgetFallsBackAndStaysCorrect) {
  MindNet net = MindNet::build(tiny_net_config(), 33);
  Rng rng(9);
  Tensor i1 = random_tensor(rng, 1, 3, 8, 16, 0, 1);
  Tensor i3 = random_tensor(rng, 1, 3, 8, 16, 0, 1);

  std::vector<std::pair<int, int>> anchors = {{0, 0}, {1, 3}, {5, 10}, {7, 15}};
  BatchOptions tight;
  tight.memory_budget_bytes = 1;  // forces k down to 1
  auto batched = sensitivity_batch(net, i1, i3, anchors, tight);
  ASSERT_EQ(batched.size(), anchors.size());
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    SensitivityPair serial = sensitivity(net, i1, i3, anchors[a]);
    EXPECT_EQ(batched[a].g1.data, serial.g1.data);
  }
}

TEST(SensitivityBatch, RejectsDuplicateAnchors) {
  MindNet net = MindNet::build(tiny_net_config(), 35);
  Rng rng(10);
  Tensor i1 = random_tensor(rng, 1, 3, 8, 16, 0, 1);
  Tensor i3 = random_tensor(rng, 1, 3, 8, 16, 0, 1);
  std::vector<std::pair<int, int>> anchors = {{1, 1}, {1, 1}};
  EXPECT_THROW(sensitivity_batch(net, i1, i3, anchors), ShapeError);
}

TEST(MatchGrid, AnchorCountsFollowTheGridArithmetic) {
  MindNet net = MindNet::build(NetConfig::desk_scale(), 37);
  Rng rng(11);
  Tensor i1 = random_tensor(rng, 1, 3, 32, 64, 0, 1);
  Tensor i3 = random_tensor(rng, 1, 3, 32, 64, 0, 1);

  net.reset_counters();
  MatchSet ms = match_grid(net, i1, i3, 4);
  EXPECT_EQ(ms.matches.size(), 128u);  // 32*64/16
  EXPECT_EQ(net.counters().forward_passes, 1);
  EXPECT_EQ(net.counters().backward_seeds, 128);

  // no duplicate anchors, all on the declared grid
  std::set<std::pair<int, int>> seen;
  for (const auto& m : ms.matches) {
    EXPECT_EQ(m.anchor_i % 4, 0);
    EXPECT_EQ(m.anchor_j % 4, 0);
    seen.insert({m.anchor_i, m.anchor_j});
  }
  EXPECT_EQ(seen.size(), ms.matches.size());
}

TEST(ExtractMatch, ScoresAreAtLeastOneOnAnyPositiveMap) {
  // the global argmax dominates every window, so max/mean >= 1
  Rng rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    SensitivityPair sp;
    sp.g1 = Tensor(1, 1, 12, 17);
    sp.g3 = Tensor(1, 1, 12, 17);
    for (double& v : sp.g1.data) v = uniform(rng, 0, 1);
    for (double& v : sp.g3.data) v = uniform(rng, 0, 1);
    Correspondence m = extract_match(sp);
    ASSERT_GE(m.score1, 1.0);
    ASSERT_GE(m.score3, 1.0);
  }
}

TEST(MatchGrid, StrideOneIsDense) {
  LinearConvNet net = make_shift_net(8, 10, 0, 0);
  Rng rng(12);
  Tensor i1 = random_tensor(rng, 1, 3, 8, 10, 0, 1);
  Tensor i3 = random_tensor(rng, 1, 3, 8, 10, 0, 1);
  MatchSet ms = match_grid(net, i1, i3, 1);
  EXPECT_EQ(ms.matches.size(), 80u);
}

TEST(MatchSetCsv, RoundTripsThroughDisk) {
  MatchSet ms;
  ms.grid_stride = 4;
  ms.h = 8;
  ms.w = 8;
  Rng rng(13);
  for (int i = 0; i < 10; ++i) {
    Correspondence m;
    m.anchor_i = i;
    m.anchor_j = 2 * i;
    m.p1_r = i + 1;
    m.p1_c = i + 2;
    m.p3_r = i + 3;
    m.p3_c = i + 4;
    m.score1 = uniform(rng, 0.1, 400);
    m.score3 = uniform(rng, 0.1, 400);
    ms.matches.push_back(m);
  }
  const std::string path = ::testing::TempDir() + "matchset_roundtrip.csv";
  write_matchset_csv(path, ms);
  MatchSet back = read_matchset_csv(path);
  ASSERT_EQ(back.matches.size(), ms.matches.size());
  for (std::size_t i = 0; i < ms.matches.size(); ++i) {
    EXPECT_EQ(back.matches[i].anchor_i, ms.matches[i].anchor_i);
    EXPECT_EQ(back.matches[i].p3_c, ms.matches[i].p3_c);
    EXPECT_EQ(back.matches[i].score1, ms.matches[i].score1);
    EXPECT_EQ(back.matches[i].score3, ms.matches[i].score3);
  }
}

TEST(MatchSetCsv, RejectsMissingHeader) {
  const std::string path = ::testing::TempDir() + "matchset_bad.csv";
  std::ofstream(path) << "1,2,3,4,5,6,7,8\n";
  EXPECT_THROW(read_matchset_csv(path), IoError);
}

// The batched path must actually buy throughput over one-seed sweeps; the
// full-size requirement lives in the acceptance suite, this is a smoke check
// that the machinery works end to end.
TEST(SensitivityBatch, BatchedSweepIsNotSlowerThanSerial) {
  MindNet net = MindNet::build(NetConfig::desk_scale(), 39);
  Rng rng(14);
  Tensor i1 = random_tensor(rng, 1, 3, 32, 64, 0, 1);
  Tensor i3 = random_tensor(rng, 1, 3, 32, 64, 0, 1);
  net.ensure_forward(i1, i3);

  std::vector<std::pair<int, int>> anchors;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 8; ++j) anchors.emplace_back(i * 8, j * 8);

  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  auto batched = sensitivity_batch(net, i1, i3, anchors);
  const auto t1 = clock::now();
  for (auto a : anchors) sensitivity(net, i1, i3, a);
  const auto t2 = clock::now();
  EXPECT_LT((t1 - t0).count(), (t2 - t1).count());
  (void)batched;
}
