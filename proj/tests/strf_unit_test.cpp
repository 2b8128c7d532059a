#include "oracles.hpp"

#include "strf/grad_check.hpp"
#include "strf/strf_unit.hpp"

#include <gtest/gtest.h>

using namespace strf;

namespace {

Dims random_volume_dims(Rng& rng) {
  return {1 + rng.below(8), 1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(2)};
}

FamConfig random_fam(Rng& rng) {
  FamConfig cfg;
  cfg.dim = rng.bernoulli(0.5) ? FactorDim::temporal : FactorDim::spatial;
  cfg.resolution = 1 + 2 * rng.below(3);
  cfg.kind = cfg.resolution == 1 ? FactorKind::fine : FactorKind::coarse;
  cfg.pool = rng.bernoulli(0.5) ? PoolMode::max : PoolMode::avg;
  cfg.reduction = std::size_t(1) << rng.below(5);
  cfg.temperature = rng.uniform(0.5, 4.0);
  return cfg;
}

StrfParams<double> random_params(std::size_t c, std::size_t reduction, Rng& rng) {
  return StrfParams<double>::uniform_init(c, reduction, rng);
}

}  // namespace

TEST(FamMask, MatchesOracleOnRandomInstances) {
  Rng rng(101);
  for (int trial = 0; trial < 150; ++trial) {
    const TensorD f = oracle::random_tensor(random_volume_dims(rng), rng);
    const FamConfig cfg = random_fam(rng);
    const TensorD w = oracle::random_tensor({reduced_channels(f.dim(0), cfg.reduction), f.dim(0)}, rng, 0.5);
    const TensorD got = fam_mask(f, cfg, w);
    const TensorD want = oracle::fam_mask(f, cfg, w);
    ASSERT_EQ(got.dims(), want.dims());
    EXPECT_LT(max_abs_diff(got, want), 1e-9) << "trial " << trial;
  }
}

TEST(FfmApply, MatchesOracleOnRandomInstances) {
  Rng rng(102);
  for (int trial = 0; trial < 150; ++trial) {
    const TensorD f = oracle::random_tensor(random_volume_dims(rng), rng);
    const std::size_t s = f.dim(2) * f.dim(3);
    const TensorD mask = softmax_rows(oracle::random_tensor({s, s}, rng));
    EXPECT_LT(max_abs_diff(ffm_apply(f, mask), oracle::ffm_apply(f, mask)), 1e-12);
  }
}

TEST(FamMask, BatchedMatchesPerSample) {
  Rng rng(103);
  const TensorD f = oracle::random_tensor({3, 8, 2, 3, 2}, rng);
  FamConfig cfg;
  cfg.reduction = 4;
  const TensorD w = oracle::random_tensor({2, 8}, rng);
  const TensorD batched = fam_mask(f, cfg, w);
  ASSERT_EQ(batched.dims(), (Dims{3, 6, 6}));
  for (std::size_t n = 0; n < 3; ++n) {
    const std::size_t per = f.size() / 3;
    TensorD one({8, 2, 3, 2}, std::vector<double>(f.data() + n * per, f.data() + (n + 1) * per));
    const TensorD m = fam_mask(one, cfg, w);
    for (std::size_t i = 0; i < 36; ++i) EXPECT_EQ(batched[n * 36 + i], m[i]);
  }
}

TEST(FamMask, RowsSumToOne) {
  Rng rng(104);
  for (int trial = 0; trial < 200; ++trial) {
    const TensorF f = oracle::random_tensor({8, 4, 3, 3}, rng, 3.0).cast<float>();
    FamConfig cfg = random_fam(rng);
    const TensorF w = oracle::random_tensor({reduced_channels(8, cfg.reduction), 8}, rng).cast<float>();
    const TensorF m = fam_mask(f, cfg, w);
    for (std::size_t p = 0; p < 9; ++p) {
      float s = 0;
      for (std::size_t q = 0; q < 9; ++q) s += m(p, q);
      EXPECT_NEAR(s, 1.0f, 1e-5f);
    }
  }
}

TEST(FamMask, ConstantInputGivesUniformMask) {
  Rng rng(105);
  const TensorD f({6, 3, 2, 4}, 0.7);
  for (int trial = 0; trial < 20; ++trial) {
    const FamConfig cfg = random_fam(rng);
    const TensorD w = oracle::random_tensor({reduced_channels(6, cfg.reduction), 6}, rng);
    const TensorD m = fam_mask(f, cfg, w);
    for (double v : m.values()) EXPECT_NEAR(v, 1.0 / 8.0, 1e-12);
  }
}

TEST(FamMask, UnitResolutionPoolsToIdentity) {
  // With r = 1 the pooled factor is the channel mix itself.
  Rng rng(106);
  const TensorD f = oracle::random_tensor({8, 3, 3, 2}, rng);
  const TensorD w = oracle::random_tensor({2, 8}, rng);
  for (FactorDim d : {FactorDim::temporal, FactorDim::spatial})
    for (PoolMode p : {PoolMode::max, PoolMode::avg}) {
      FamConfig cfg;
      cfg.dim = d;
      cfg.pool = p;
      cfg.resolution = 1;
      cfg.reduction = 4;
      const TensorD mixed = conv_channel_mix(f, w);
      EXPECT_EQ(pool3d(mixed, cfg.kernel(), cfg.pool), mixed);
      const TensorD t = mixed.reshaped({6, 6});
      const TensorD expected = softmax_rows(batched_matmul(t, true, t, false) * cfg.temperature);
      EXPECT_EQ(fam_mask(f, cfg, w), expected);
    }
}

TEST(FamMask, RejectsEvenResolutionAndBadWeights) {
  FamConfig cfg;
  cfg.resolution = 2;
  const TensorD f({4, 2, 2, 2}, 1.0);
  EXPECT_THROW(fam_mask(f, cfg, TensorD({1, 4})), ConfigError);
  cfg.resolution = 3;
  cfg.reduction = 2;
  EXPECT_THROW(fam_mask(f, cfg, TensorD({1, 4})), ShapeError);
}

TEST(StrfForward, ConstantInputParallelIsFourTimesInput) {
  Rng rng(107);
  StrfConfig cfg;
  cfg.integration = Integration::parallel;
  for (int trial = 0; trial < 20; ++trial) {
    const double level = rng.uniform(-2, 2);
    const TensorD f({16, 4, 3, 2}, level);
    cfg.reduction = std::size_t(1) << rng.below(5);
    const auto params = random_params(16, cfg.reduction, rng);
    const TensorD y = strf_forward(f, cfg, params);
    for (double v : y.values()) EXPECT_NEAR(v, 4.0 * level, 1e-12);
  }
}

TEST(StrfForward, CascadesComposeModules) {
  Rng rng(108);
  const TensorD f = oracle::random_tensor({8, 3, 3, 2}, rng);
  StrfConfig cfg;
  cfg.reduction = 2;
  const auto p = random_params(8, 2, rng);
  const auto branch = [&](const TensorD& x, Branch b) {
    return oracle::ffm_apply(x, oracle::fam_mask(x, cfg.fam(b), p[b].value()));
  };
  const auto temporal = [&](const TensorD& x) {
    return branch(x, Branch::temporal_fine) + branch(x, Branch::temporal_coarse);
  };
  const auto spatial = [&](const TensorD& x) {
    return branch(x, Branch::spatial_fine) + branch(x, Branch::spatial_coarse);
  };
  cfg.integration = Integration::temporal_then_spatial;
  EXPECT_LT(max_abs_diff(strf_forward(f, cfg, p), spatial(temporal(f))), 1e-9);
  cfg.integration = Integration::spatial_then_temporal;
  EXPECT_LT(max_abs_diff(strf_forward(f, cfg, p), temporal(spatial(f))), 1e-9);
  cfg.integration = Integration::parallel;
  EXPECT_LT(max_abs_diff(strf_forward(f, cfg, p), temporal(f) + spatial(f)), 1e-9);
}

TEST(StrfForward, SingleBranchAppliesOnlyThatMask) {
  Rng rng(109);
  const TensorD f = oracle::random_tensor({4, 3, 2, 2}, rng);
  const auto p = random_params(4, 16, rng);
  for (Branch b : kAllBranches) {
    StrfConfig cfg;
    cfg.enabled = {false, false, false, false};
    cfg.enabled[std::size_t(b)] = true;
    for (Integration phi : {Integration::temporal_then_spatial, Integration::spatial_then_temporal,
                            Integration::parallel}) {
      cfg.integration = phi;
      const TensorD want = oracle::ffm_apply(f, oracle::fam_mask(f, cfg.fam(b), p[b].value()));
      EXPECT_LT(max_abs_diff(strf_forward(f, cfg, p), want), 1e-12) << branch_name(b);
    }
  }
}

TEST(StrfForward, PreservesShapeAndBatches) {
  Rng rng(110);
  const TensorD f = oracle::random_tensor({2, 16, 4, 3, 2}, rng);
  StrfConfig cfg;
  const auto p = random_params(16, 16, rng);
  const TensorD y = strf_forward(f, cfg, p);
  EXPECT_EQ(y.dims(), f.dims());
  EXPECT_TRUE(y.all_finite());
}

TEST(StrfConfig, ValidationRejectsBadSettings) {
  StrfConfig cfg;
  cfg.r_fine = 2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.r_fine = 5;
  cfg.r_coarse = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.enabled = {false, false, false, false};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.temperature = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(StrfParams, CountUsesEffectiveReduction) {
  EXPECT_EQ(strf_param_count(128, 16), 4u * 8 * 128);
  EXPECT_EQ(strf_param_count(256, 16), 4u * 16 * 256);
  EXPECT_EQ(strf_param_count(8, 16), 4u * 1 * 8);
  EXPECT_EQ(effective_reduction(16, 8), 8u);
  EXPECT_EQ(reduced_channels(8, 16), 1u);
}

TEST(StrfGradient, MatchesCentralDifferencesAwayFromKinks) {
  Rng rng(111);
  StrfConfig cfg;
  cfg.reduction = 4;
  cfg.temporal_pool = PoolMode::avg;
  cfg.spatial_pool = PoolMode::avg;
  const VarD x = VarD::parameter(oracle::random_tensor({8, 3, 2, 2}, rng, 0.5));
  auto p = random_params(8, 4, rng);
  std::vector<VarD> leaves{x};
  for (auto& w : p.weights) leaves.push_back(w);
  const auto report = grad_check([&] { return sum(square(strf_forward(x, cfg, p))); }, leaves);
  EXPECT_LT(report.max_rel_error, 1e-6);
}
