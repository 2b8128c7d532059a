#include "strf/trainer.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace strf;

namespace {

std::vector<Tracklet> random_tracklets(std::size_t ids, std::size_t per_id, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tracklet> out;
  for (std::size_t id = 0; id < ids; ++id)
    for (std::size_t j = 0; j < per_id; ++j) {
      Tracklet t;
      t.identity = int(id);
      t.camera = int(j % 2);
      for (int k = 0; k < 6; ++k) {
        TensorF f({3, 64, 32});
        for (auto& v : f.values()) v = float(rng.normal() + 0.3 * double(id));
        t.frames.push_back(std::move(f));
      }
      out.push_back(std::move(t));
    }
  return out;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.P = 4;
  c.K = 2;
  c.T = 2;
  c.stride = 1;
  c.lr = 1e-3;
  return c;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  VarF w = VarF::parameter(TensorF({3}, std::vector<float>{1.f, -2.f, 0.5f}));
  const std::vector<NamedParam<float>> params{{"w", w}};
  const VarF loss = sum(mul(w, VarF(TensorF({3}, std::vector<float>{2.f, -1.f, 0.f}))));
  const auto grads = backward(loss);
  Adam adam;
  adam.step(params, grads, 0.1, 0.0);
  EXPECT_NEAR(w.value()[0], 0.9f, 1e-6);
  EXPECT_NEAR(w.value()[1], -1.9f, 1e-6);
  EXPECT_NEAR(w.value()[2], 0.5f, 1e-6);
}

TEST(Adam, MatchesHandRolledRecurrenceWithWeightDecay) {
  VarF w = VarF::parameter(TensorF({1}, 2.f));
  const std::vector<NamedParam<float>> params{{"w", w}};
  Adam adam;
  double x = 2.0, m = 0, v = 0;
  const double lr = 0.05, wd = 0.01, b1 = 0.9, b2 = 0.999;
  for (int t = 1; t <= 5; ++t) {
    const VarF loss = sum(square(w));
    adam.step(params, backward(loss), lr, wd);
    const double g = 2 * x + wd * x;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + 1e-8);
    EXPECT_NEAR(w.value()[0], x, 1e-5) << "step " << t;
  }
  EXPECT_EQ(adam.steps(), 5u);
}

TEST(LearningRate, StepDecaysPerPeriod) {
  TrainConfig c;
  c.lr = 3e-4;
  c.decay_period = 50;
  c.decay_factor = 0.1;
  EXPECT_DOUBLE_EQ(learning_rate(c, 0, 10), 3e-4);
  EXPECT_DOUBLE_EQ(learning_rate(c, 499, 10), 3e-4);
  EXPECT_NEAR(learning_rate(c, 500, 10), 3e-5, 1e-18);
  EXPECT_NEAR(learning_rate(c, 1000, 10), 3e-6, 1e-18);
  c.decay_period = 0;
  EXPECT_DOUBLE_EQ(learning_rate(c, 100000, 10), 3e-4);
}

TEST(Train, DeterministicPerSeedAndLogsCsv) {
  const auto data = random_tracklets(4, 2, 1);
  const NetworkSpec spec = NetworkSpec::toy(BlockVariant::P3DC, true, 4);
  const TrainConfig cfg = quick_config();
  std::ostringstream csv_a, csv_b;
  Network<float> a(spec, 5), b(spec, 5);
  TrainHooks ha, hb;
  ha.log_csv = &csv_a;
  hb.log_csv = &csv_b;
  const auto la = train(a, data, cfg, 3, ha);
  const auto lb = train(b, data, cfg, 3, hb);
  ASSERT_EQ(la.size(), 3u);
  EXPECT_EQ(csv_a.str(), csv_b.str());
  EXPECT_EQ(csv_a.str().rfind("step,ce,triplet,total\n1,", 0), 0u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(la[i].total, lb[i].total);
    EXPECT_NEAR(la[i].total, la[i].ce + la[i].triplet, 1e-5);
  }
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].var.value(), pb[i].var.value());
}

TEST(Train, ClassCountMustMatchIdentities) {
  const auto data = random_tracklets(4, 2, 2);
  Network<float> net(NetworkSpec::toy(BlockVariant::P3DC, false, 5), 1);
  EXPECT_THROW(train(net, data, quick_config(), 1), ConfigError);
}

TEST(Train, NonFiniteLossIsNumericError) {
  auto data = random_tracklets(4, 2, 3);
  for (auto& t : data) t.frames[0][0] = std::numeric_limits<float>::quiet_NaN();
  Network<float> net(NetworkSpec::toy(BlockVariant::P3DC, false, 4), 1);
  EXPECT_THROW(train(net, data, quick_config(), 2), NumericError);
}

TEST(Retrieval, FeaturesHaveOneRowPerTracklet) {
  const auto data = random_tracklets(3, 2, 4);
  Network<float> net(NetworkSpec::toy(BlockVariant::P3DC, true, 3), 1);
  const Eigen::MatrixXd f = extract_features(net, data, 4, 3);
  EXPECT_EQ(f.rows(), 6);
  EXPECT_EQ(f.cols(), long(net.spec().feature_dim));
  // Batch size does not change the features.
  EXPECT_LT((f - extract_features(net, data, 4, 1)).cwiseAbs().maxCoeff(), 1e-6);
  const auto r = train_retrieval(net, data, 4, 4);
  EXPECT_EQ(r.queries.size() + r.skipped, 6u);
}
