#include "oracles.hpp"

#include "strf/backbone.hpp"

#include <gtest/gtest.h>

using namespace strf;

namespace {

// Bottleneck trunk of a 2D ResNet-50 without its classifier, as published
// with the reference torchvision model.
constexpr std::size_t kResNet50Trunk = 23508032;

std::size_t temporal_conv_params(std::size_t b) { return 3 * b * b + 2 * b; }

BlockSpec small_block(BlockVariant v, std::size_t stride = 1, bool strf = false) {
  BlockSpec s;
  s.variant = v;
  s.in_width = 16;
  s.out_width = 32;
  s.bottleneck_width = 8;
  s.spatial_stride = stride;
  if (strf) {
    StrfConfig c;
    c.reduction = 4;
    s.strf = c;
  }
  return s;
}

void zero_conv2(ResidualBlock<double>& block) {
  ParamCollector<double> c;
  std::vector<NamedParam<double>> params;
  c.params = &params;
  block.collect("b", c);
  for (auto& p : params)
    if (p.name == "b.conv2.weight") p.var.mutable_value().fill(0.0);
}

}  // namespace

TEST(ParamCount, C2dMatchesReferenceResNet50) {
  const auto t = count_params(NetworkSpec::resnet50(BlockVariant::C2D, false, 625));
  EXPECT_EQ(t.total, kResNet50Trunk + 625 * 2048);
}

TEST(ParamCount, P3dAddsOneTemporalConvPerBlock) {
  const std::size_t c2d = count_params(NetworkSpec::resnet50(BlockVariant::C2D, false, 625)).total;
  const std::size_t extra = 4 * temporal_conv_params(128) + 6 * temporal_conv_params(256);
  for (BlockVariant v : {BlockVariant::P3DA, BlockVariant::P3DB, BlockVariant::P3DC})
    EXPECT_EQ(count_params(NetworkSpec::resnet50(v, false, 625)).total, c2d + extra);
}

TEST(ParamCount, StrfDeltaIsFourReductionMatricesPerUnit) {
  const std::size_t base = count_params(NetworkSpec::resnet50(BlockVariant::P3DC, false, 625)).total;
  const std::size_t with = count_params(NetworkSpec::resnet50(BlockVariant::P3DC, true, 625)).total;
  EXPECT_EQ(with - base, 4 * (4 * 128 * 128 / 16) + 6 * (4 * 256 * 256 / 16));
  EXPECT_EQ(with - base, 114688u);
}

TEST(ParamCount, TableMatchesInstantiatedNetwork) {
  for (bool strf : {false, true}) {
    const NetworkSpec spec = NetworkSpec::toy(BlockVariant::P3DC, strf, 8);
    Network<float> net(spec, 1);
    std::size_t n = 0;
    for (const auto& p : net.parameters()) n += p.var.value().size();
    EXPECT_EQ(count_params(spec).total, n);
    EXPECT_EQ(net.parameter_table().total, n);
  }
}

TEST(Network, ToyForwardShapes) {
  const NetworkSpec spec = NetworkSpec::toy(BlockVariant::P3DC, true, 5);
  Network<float> net(spec, 3);
  Rng rng(1);
  const TensorF clips = oracle::random_tensor({2, 3, 4, 64, 32}, rng).cast<float>();
  const auto out = net.forward(VarF(clips));
  EXPECT_EQ(out.features.dims(), (Dims{2, spec.feature_dim}));
  EXPECT_EQ(out.logits.dims(), (Dims{2, 5}));
  EXPECT_EQ(net.stage_dims()[0], (Dims{2, 4, 4, 16, 8}));
  EXPECT_EQ(net.stage_dims()[2], (Dims{2, 32, 4, 8, 4}));
  EXPECT_EQ(net.stage_dims()[3], (Dims{2, 64, 4, 4, 2}));
  EXPECT_EQ(net.stage_dims()[4], (Dims{2, 128, 4, 4, 2}));
  EXPECT_TRUE(out.logits.value().all_finite());
}

TEST(Network, RejectsWrongFrameSize) {
  Network<float> net(NetworkSpec::toy(BlockVariant::C2D, false, 4), 1);
  EXPECT_THROW(net.forward(VarF(TensorF({1, 3, 4, 32, 32}))), ShapeError);
}

TEST(Network, SameSeedSameWeights) {
  const NetworkSpec spec = NetworkSpec::toy(BlockVariant::P3DC, true, 4);
  Network<float> a(spec, 9), b(spec, 9), c(spec, 10);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].var.value(), pb[i].var.value());
    any_diff = any_diff || !(pa[i].var.value() == pc[i].var.value());
  }
  EXPECT_TRUE(any_diff);
}

TEST(Network, StrfUnitsSitInConfiguredStages) {
  Network<float> net(NetworkSpec::resnet50(BlockVariant::P3DC, true, 10).scaled(16, {3, 4, 6, 3}), 1);
  const auto units = net.strf_units();
  ASSERT_EQ(units.size(), 10u);
  EXPECT_EQ(units.front().first.rfind("stage2.block0", 0), 0u);
  EXPECT_EQ(units.back().first.rfind("stage3.block5", 0), 0u);
}

TEST(Block, C2dCannotCarryStrf) {
  Rng rng(1);
  EXPECT_THROW(ResidualBlock<double>(small_block(BlockVariant::C2D, 1, true), rng), ConfigError);
}

TEST(Block, P3dcMidIsSpatialPlusTemporal) {
  Rng rng(2);
  ResidualBlock<double> block(small_block(BlockVariant::P3DC, 1, true), rng);
  const VarD x(oracle::random_tensor({2, 16, 4, 6, 3}, rng));
  BlockTrace<double> tr;
  const VarD y = block.forward(x, true, &tr);
  EXPECT_EQ(tr.mid.value(), (tr.spatial_path.value() + tr.temporal_path.value()));
  EXPECT_EQ(block.finish(tr.mid, x, true).value(), y.value());
  EXPECT_EQ(tr.strf_input.dims(), tr.strf_output.dims());
}

TEST(Block, P3daMidIsTemporalPath) {
  Rng rng(3);
  ResidualBlock<double> block(small_block(BlockVariant::P3DA), rng);
  BlockTrace<double> tr;
  block.forward(VarD(oracle::random_tensor({1, 16, 4, 6, 3}, rng)), true, &tr);
  EXPECT_EQ(tr.mid.value(), tr.temporal_path.value());
}

TEST(Block, TemporalPathDependsOnSpatialConvExceptInP3dB) {
  for (BlockVariant v : {BlockVariant::P3DA, BlockVariant::P3DB, BlockVariant::P3DC}) {
    Rng rng(4);
    ResidualBlock<double> block(small_block(v), rng);
    const VarD x(oracle::random_tensor({1, 16, 4, 6, 3}, rng));
    BlockTrace<double> before, after;
    block.forward(x, true, &before);
    zero_conv2(block);
    block.forward(x, true, &after);
    const bool unchanged = before.temporal_path.value() == after.temporal_path.value();
    EXPECT_EQ(unchanged, v == BlockVariant::P3DB) << to_string(v);
  }
}

TEST(Block, StrideHalvesSpatialExtent) {
  for (BlockVariant v : {BlockVariant::C2D, BlockVariant::I3D, BlockVariant::P3DA,
                         BlockVariant::P3DB, BlockVariant::P3DC}) {
    Rng rng(5);
    ResidualBlock<double> block(small_block(v, 2), rng);
    const VarD y = block.forward(VarD(oracle::random_tensor({1, 16, 4, 6, 3}, rng)), false);
    EXPECT_EQ(y.dims(), (Dims{1, 32, 4, 3, 2})) << to_string(v);
  }
}

TEST(Block, OutputIsNonNegative) {
  Rng rng(6);
  ResidualBlock<double> block(small_block(BlockVariant::I3D, 1, true), rng);
  const VarD y = block.forward(VarD(oracle::random_tensor({1, 16, 4, 6, 3}, rng)), true);
  for (double v : y.value().values()) EXPECT_GE(v, 0.0);
}

TEST(AttentionMap, NormalizedPerFrame) {
  Rng rng(7);
  TensorD act = oracle::random_tensor({4, 3, 5, 2}, rng);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 10; ++i) act[c * 30 + 20 + i] = 1.0;  // flat last frame
  const TensorF m = attention_map(act);
  ASSERT_EQ(m.dims(), (Dims{3, 5, 2}));
  for (std::size_t t = 0; t < 2; ++t) {
    float lo = 1, hi = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      lo = std::min(lo, m[t * 10 + i]);
      hi = std::max(hi, m[t * 10 + i]);
    }
    EXPECT_FLOAT_EQ(lo, 0.0f);
    EXPECT_FLOAT_EQ(hi, 1.0f);
  }
  for (std::size_t i = 20; i < 30; ++i) EXPECT_EQ(m[i], 0.0f);
}

TEST(BlockVariant, NamesRoundTrip) {
  for (BlockVariant v : {BlockVariant::C2D, BlockVariant::I3D, BlockVariant::P3DA,
                         BlockVariant::P3DB, BlockVariant::P3DC})
    EXPECT_EQ(parse_block_variant(to_string(v)), v);
  EXPECT_THROW(parse_block_variant("p3dz"), ConfigError);
}
