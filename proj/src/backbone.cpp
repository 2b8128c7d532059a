#include "strf/backbone.hpp"

namespace strf {

const char* to_string(Integration phi) {
  switch (phi) {
    case Integration::temporal_then_spatial: return "temporal-then-spatial";
    case Integration::spatial_then_temporal: return "spatial-then-temporal";
    case Integration::parallel: return "parallel";
  }
  return "?";
}

Integration parse_integration(const std::string& s) {
  if (s == "temporal-then-spatial") return Integration::temporal_then_spatial;
  if (s == "spatial-then-temporal") return Integration::spatial_then_temporal;
  if (s == "parallel") return Integration::parallel;
  throw ConfigError("unknown integration '" + s +
                    "' (expected temporal-then-spatial, spatial-then-temporal or parallel)");
}

const char* to_string(BlockVariant v) {
  switch (v) {
    case BlockVariant::C2D: return "c2d";
    case BlockVariant::I3D: return "i3d";
    case BlockVariant::P3DA: return "p3da";
    case BlockVariant::P3DB: return "p3db";
    case BlockVariant::P3DC: return "p3dc";
  }
  return "?";
}

BlockVariant parse_block_variant(const std::string& s) {
  if (s == "c2d") return BlockVariant::C2D;
  if (s == "i3d") return BlockVariant::I3D;
  if (s == "p3da") return BlockVariant::P3DA;
  if (s == "p3db") return BlockVariant::P3DB;
  if (s == "p3dc") return BlockVariant::P3DC;
  throw ConfigError("unknown block variant '" + s + "' (expected c2d, i3d, p3da, p3db or p3dc)");
}

NetworkSpec NetworkSpec::resnet50(BlockVariant variant, bool with_strf, std::size_t num_classes) {
  NetworkSpec spec;
  for (std::size_t s : {1, 2}) {
    spec.stages[s].variant = variant;
    spec.stages[s].strf = with_strf;
  }
  spec.num_classes = num_classes;
  return spec;
}

NetworkSpec NetworkSpec::scaled(std::size_t divisor, std::array<std::size_t, 4> blocks) const {
  if (divisor == 0) throw ConfigError("width divisor must be >= 1");
  NetworkSpec out = *this;
  out.stem_width = std::max<std::size_t>(1, stem_width / divisor);
  for (std::size_t s = 0; s < 4; ++s) {
    out.stages[s].bottleneck_width = std::max<std::size_t>(1, stages[s].bottleneck_width / divisor);
    out.stages[s].blocks = blocks[s];
  }
  out.feature_dim = 4 * out.stages[3].bottleneck_width;
  return out;
}

NetworkSpec NetworkSpec::toy(BlockVariant variant, bool with_strf, std::size_t num_classes) {
  NetworkSpec spec = resnet50(variant, with_strf, num_classes).scaled(16, {1, 1, 1, 1});
  spec.frame_height = 64;
  spec.frame_width = 32;
  return spec;
}

void NetworkSpec::validate() const {
  if (in_channels == 0 || stem_width == 0 || num_classes == 0)
    throw ConfigError("network widths and class count must be >= 1");
  if (frame_height == 0 || frame_width == 0) throw ConfigError("frame dims must be >= 1");
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& st = stages[s];
    if (st.blocks == 0) throw ConfigError("stage " + std::to_string(s + 1) + " needs >= 1 block");
    if (st.strf && st.variant == BlockVariant::C2D)
      throw ConfigError("stage " + std::to_string(s + 1) +
                        ": C2D blocks have no 3x1x1 convolution to carry an STRF unit");
  }
  if (feature_dim != 4 * stages[3].bottleneck_width)
    throw ConfigError("feature dimension " + std::to_string(feature_dim) +
                      " must equal the last stage output width " +
                      std::to_string(4 * stages[3].bottleneck_width));
  bool any_strf = false;
  for (const auto& st : stages) any_strf = any_strf || st.strf;
  if (any_strf) strf.validate();
}

ParamTable count_params(const NetworkSpec& spec) {
  Network<float> net(spec, 0);
  return net.parameter_table();
}

}  // namespace strf
