// Inflated ResNet-50 backbone with C2D / I3D / P3D-A/B/C bottleneck blocks and
// optional STRF units attached to the temporal convolution.
#ifndef STRF_BACKBONE_HPP
#define STRF_BACKBONE_HPP

#include "strf/autodiff.hpp"
#include "strf/random.hpp"
#include "strf/strf_unit.hpp"

#include <array>
#include <optional>
#include <string>

namespace strf {

enum class BlockVariant { C2D, I3D, P3DA, P3DB, P3DC };

const char* to_string(BlockVariant v);
BlockVariant parse_block_variant(const std::string& s);

struct BlockSpec {
  BlockVariant variant = BlockVariant::C2D;
  std::size_t in_width = 256;
  std::size_t out_width = 256;
  std::size_t bottleneck_width = 64;
  std::size_t spatial_stride = 1;
  std::optional<StrfConfig> strf;

  void validate() const {
    if (bottleneck_width * 4 != out_width)
      throw ConfigError("block bottleneck width " + std::to_string(bottleneck_width) +
                        " must be a quarter of the output width " + std::to_string(out_width));
    if (in_width == 0 || spatial_stride == 0) throw ConfigError("block widths and stride must be >= 1");
    if (strf && variant == BlockVariant::C2D)
      throw ConfigError("C2D blocks have no 3x1x1 convolution to carry an STRF unit");
    if (strf) strf->validate();
  }
};

struct StageSpec {
  std::size_t blocks = 1;
  std::size_t bottleneck_width = 64;
  BlockVariant variant = BlockVariant::C2D;
  bool strf = false;
};

struct NetworkSpec {
  std::size_t in_channels = 3;
  std::size_t frame_height = 256;
  std::size_t frame_width = 128;
  std::size_t stem_width = 64;
  Extent3 stem_kernel{1, 7, 7};
  std::array<StageSpec, 4> stages{StageSpec{3, 64, BlockVariant::C2D, false},
                                  StageSpec{4, 128, BlockVariant::C2D, false},
                                  StageSpec{6, 256, BlockVariant::C2D, false},
                                  StageSpec{3, 512, BlockVariant::C2D, false}};
  StrfConfig strf;
  std::size_t num_classes = 625;
  std::size_t feature_dim = 2048;

  // Spatial stride of the first block in stage `index` (0-based): the last
  // stage keeps stride 1.
  static std::size_t stage_stride(std::size_t index) { return index == 1 || index == 2 ? 2 : 1; }

  // Inflated ResNet-50; stages 2 and 3 use `variant`, with STRF if asked.
  static NetworkSpec resnet50(BlockVariant variant, bool with_strf, std::size_t num_classes = 625);
  // Same layout with every width divided by `divisor` and custom block counts.
  NetworkSpec scaled(std::size_t divisor, std::array<std::size_t, 4> blocks) const;
  // Widths / 16, one block per stage, 64x32 frames.
  static NetworkSpec toy(BlockVariant variant, bool with_strf, std::size_t num_classes);

  void validate() const;
};

template <typename Scalar>
struct NamedParam {
  std::string name;
  Var<Scalar> var;
};

template <typename Scalar>
struct NamedBuffer {
  std::string name;
  Tensor<Scalar>* tensor;
};

struct ParamRow {
  std::string name;
  Dims dims;
  std::size_t count = 0;
};

struct ParamTable {
  std::vector<ParamRow> rows;
  std::size_t total = 0;
};

// ---------------------------------------------------------------------------
// Layers

namespace detail {

template <typename Scalar>
Var<Scalar> kaiming_conv(std::size_t cout, std::size_t cin, Extent3 k, Rng& rng) {
  Tensor<Scalar> w({cout, cin, k.t, k.h, k.w});
  const double stddev = std::sqrt(2.0 / double(cin * k.volume()));
  for (auto& v : w.values()) v = Scalar(stddev * rng.normal());
  return Var<Scalar>::parameter(std::move(w));
}

}  // namespace detail

template <typename Scalar>
struct Conv3dLayer {
  Var<Scalar> weight;
  Extent3 stride{1, 1, 1};

  Conv3dLayer() = default;
  Conv3dLayer(std::size_t cin, std::size_t cout, Extent3 kernel, Extent3 stride_, Rng& rng)
      : weight(detail::kaiming_conv<Scalar>(cout, cin, kernel, rng)), stride(stride_) {}

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    return conv3d(x, weight, stride, Padding::same);
  }
};

template <typename Scalar>
struct BatchNormLayer {
  Var<Scalar> gamma, beta;
  BatchNormState<Scalar> state;

  BatchNormLayer() = default;
  explicit BatchNormLayer(std::size_t channels)
      : gamma(Var<Scalar>::parameter(Tensor<Scalar>({channels}, Scalar(1)))),
        beta(Var<Scalar>::parameter(Tensor<Scalar>({channels}))),
        state{Tensor<Scalar>({channels}), Tensor<Scalar>({channels}, Scalar(1))} {}

  Var<Scalar> operator()(const Var<Scalar>& x, bool training) {
    return batch_norm(x, gamma, beta, state, training);
  }
};

template <typename Scalar>
struct ParamCollector {
  std::vector<NamedParam<Scalar>>* params = nullptr;
  std::vector<NamedBuffer<Scalar>>* buffers = nullptr;

  void conv(const std::string& name, Conv3dLayer<Scalar>& c) const {
    if (params) params->push_back({name + ".weight", c.weight});
  }
  void bn(const std::string& name, BatchNormLayer<Scalar>& b) const {
    if (params) {
      params->push_back({name + ".gamma", b.gamma});
      params->push_back({name + ".beta", b.beta});
    }
    if (buffers) {
      buffers->push_back({name + ".running_mean", &b.state.running_mean});
      buffers->push_back({name + ".running_var", &b.state.running_var});
    }
  }
  void strf(const std::string& name, StrfParams<Scalar>& p) const {
    if (params)
      for (Branch b : kAllBranches) params->push_back({name + "." + branch_name(b), p[b]});
  }
};

// Intermediate values of one block forward, for inspection.
template <typename Scalar>
struct BlockTrace {
  Var<Scalar> spatial_path;   // after its BN + ReLU (unset for I3D)
  Var<Scalar> temporal_path;  // after its BN + ReLU (P3D only)
  Var<Scalar> strf_input;     // temporal conv output fed to STRF, when present
  Var<Scalar> strf_output;
  Var<Scalar> mid;            // input of the final 1x1x1 conv
  Var<Scalar> shortcut;
  Var<Scalar> output;
};

template <typename Scalar>
class ResidualBlock {
 public:
  ResidualBlock(const BlockSpec& spec, Rng& rng) : spec_(spec) {
    spec_.validate();
    const std::size_t b = spec.bottleneck_width;
    const std::size_t s = spec.spatial_stride;
    conv1_ = Conv3dLayer<Scalar>(spec.in_width, b, {1, 1, 1}, {1, 1, 1}, rng);
    bn1_ = BatchNormLayer<Scalar>(b);
    const Extent3 mid_kernel =
        spec.variant == BlockVariant::I3D ? Extent3{3, 3, 3} : Extent3{1, 3, 3};
    conv2_ = Conv3dLayer<Scalar>(b, b, mid_kernel, {1, s, s}, rng);
    bn2_ = BatchNormLayer<Scalar>(b);
    if (has_temporal_conv()) {
      const Extent3 t_stride = spec.variant == BlockVariant::P3DB ? Extent3{1, s, s} : Extent3{1, 1, 1};
      conv_t_ = Conv3dLayer<Scalar>(b, b, {3, 1, 1}, t_stride, rng);
      bn_t_ = BatchNormLayer<Scalar>(b);
    }
    if (spec.strf) strf_ = StrfParams<Scalar>::uniform_init(b, spec.strf->reduction, rng);
    conv3_ = Conv3dLayer<Scalar>(b, spec.out_width, {1, 1, 1}, {1, 1, 1}, rng);
    bn3_ = BatchNormLayer<Scalar>(spec.out_width);
    if (spec.in_width != spec.out_width || s != 1) {
      proj_ = Conv3dLayer<Scalar>(spec.in_width, spec.out_width, {1, 1, 1}, {1, s, s}, rng);
      proj_bn_ = BatchNormLayer<Scalar>(spec.out_width);
    }
  }

  const BlockSpec& spec() const { return spec_; }
  bool has_temporal_conv() const {
    return spec_.variant == BlockVariant::P3DA || spec_.variant == BlockVariant::P3DB ||
           spec_.variant == BlockVariant::P3DC;
  }
  StrfParams<Scalar>* strf_params() { return strf_ ? &*strf_ : nullptr; }

  Var<Scalar> forward(const Var<Scalar>& x, bool training, BlockTrace<Scalar>* trace = nullptr) {
    const auto attach_strf = [&](const Var<Scalar>& y) {
      if (!strf_) return y;
      Var<Scalar> out = strf_forward(y, *spec_.strf, *strf_);
      if (trace) {
        trace->strf_input = y;
        trace->strf_output = out;
      }
      return out;
    };
    const Var<Scalar> h = relu(bn1_(conv1_(x), training));
    Var<Scalar> mid;
    Var<Scalar> spatial, temporal;
    switch (spec_.variant) {
      case BlockVariant::C2D:
        mid = spatial = relu(bn2_(conv2_(h), training));
        break;
      case BlockVariant::I3D:
        mid = relu(bn2_(attach_strf(conv2_(h)), training));
        break;
      case BlockVariant::P3DA:
        spatial = relu(bn2_(conv2_(h), training));
        mid = temporal = relu(bn_t_(attach_strf(conv_t_(spatial)), training));
        break;
      case BlockVariant::P3DB:
        spatial = relu(bn2_(conv2_(h), training));
        temporal = relu(bn_t_(attach_strf(conv_t_(h)), training));
        mid = add(spatial, temporal);
        break;
      case BlockVariant::P3DC:
        spatial = relu(bn2_(conv2_(h), training));
        temporal = relu(bn_t_(attach_strf(conv_t_(spatial)), training));
        mid = add(spatial, temporal);
        break;
    }
    const Var<Scalar> residual = bn3_(conv3_(mid), training);
    const Var<Scalar> shortcut = proj_ ? (*proj_bn_)((*proj_)(x), training) : x;
    Var<Scalar> out = relu(add(residual, shortcut));
    if (trace) {
      trace->spatial_path = spatial;
      trace->temporal_path = temporal;
      trace->mid = mid;
      trace->shortcut = shortcut;
      trace->output = out;
    }
    return out;
  }

  // Applies the final 1x1x1 conv, BN, shortcut add and ReLU to a given mid
  // tensor; lets tests recombine paths computed independently.
  Var<Scalar> finish(const Var<Scalar>& mid, const Var<Scalar>& x, bool training) {
    const Var<Scalar> residual = bn3_(conv3_(mid), training);
    const Var<Scalar> shortcut = proj_ ? (*proj_bn_)((*proj_)(x), training) : x;
    return relu(add(residual, shortcut));
  }

  void collect(const std::string& prefix, const ParamCollector<Scalar>& c) {
    c.conv(prefix + ".conv1", conv1_);
    c.bn(prefix + ".bn1", bn1_);
    c.conv(prefix + ".conv2", conv2_);
    c.bn(prefix + ".bn2", bn2_);
    if (has_temporal_conv()) {
      c.conv(prefix + ".conv_t", conv_t_);
      c.bn(prefix + ".bn_t", bn_t_);
    }
    if (strf_) c.strf(prefix + ".strf", *strf_);
    c.conv(prefix + ".conv3", conv3_);
    c.bn(prefix + ".bn3", bn3_);
    if (proj_) {
      c.conv(prefix + ".proj", *proj_);
      c.bn(prefix + ".proj_bn", *proj_bn_);
    }
  }

 private:
  BlockSpec spec_;
  Conv3dLayer<Scalar> conv1_, conv2_, conv_t_, conv3_;
  BatchNormLayer<Scalar> bn1_, bn2_, bn_t_, bn3_;
  std::optional<StrfParams<Scalar>> strf_;
  std::optional<Conv3dLayer<Scalar>> proj_;
  std::optional<BatchNormLayer<Scalar>> proj_bn_;
};

// ---------------------------------------------------------------------------
// Network

template <typename Scalar>
class Network {
 public:
  struct Output {
    Var<Scalar> features;  // (n, feature_dim)
    Var<Scalar> logits;    // (n, num_classes)
  };

  static constexpr std::size_t kStages = 4;

  Network(const NetworkSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng(seed);
    stem_ = Conv3dLayer<Scalar>(spec_.in_channels, spec_.stem_width, spec_.stem_kernel, {1, 2, 2}, rng);
    stem_bn_ = BatchNormLayer<Scalar>(spec_.stem_width);
    std::size_t width = spec_.stem_width;
    for (std::size_t s = 0; s < kStages; ++s) {
      const StageSpec& st = spec_.stages[s];
      for (std::size_t i = 0; i < st.blocks; ++i) {
        BlockSpec b;
        b.variant = st.variant;
        b.in_width = width;
        b.bottleneck_width = st.bottleneck_width;
        b.out_width = 4 * st.bottleneck_width;
        b.spatial_stride = i == 0 ? NetworkSpec::stage_stride(s) : 1;
        if (st.strf) b.strf = spec_.strf;
        blocks_[s].emplace_back(b, rng);
        width = b.out_width;
      }
    }
    Tensor<Scalar> w({spec_.num_classes, spec_.feature_dim});
    for (auto& v : w.values()) v = Scalar(0.001 * rng.normal());
    classifier_ = Var<Scalar>::parameter(std::move(w));
  }

  const NetworkSpec& spec() const { return spec_; }
  bool training() const { return training_; }
  void set_training(bool on) { training_ = on; }
  void set_capture(bool on) { capture_ = on; }

  std::vector<ResidualBlock<Scalar>>& stage_blocks(std::size_t stage) { return blocks_.at(stage - 1); }

  Var<Scalar> forward_features(const Var<Scalar>& clips) {
    check_input(clips.dims());
    captured_ = {};
    Var<Scalar> x = relu(stem_bn_(stem_(clips), training_));
    x = pool3d_strided(x, {1, 3, 3}, {1, 2, 2}, PoolMode::max);
    record(0, x);
    for (std::size_t s = 0; s < kStages; ++s) {
      for (auto& block : blocks_[s]) x = block.forward(x, training_);
      record(s + 1, x);
    }
    return global_average_pool(x);
  }

  Output forward(const Var<Scalar>& clips) {
    Var<Scalar> features = forward_features(clips);
    Var<Scalar> logits = matmul(features, classifier_, false, true);
    return {features, logits};
  }

  // Inference without graph recording.
  Tensor<Scalar> forward_features(const Tensor<Scalar>& clips) {
    NoGradGuard guard;
    return forward_features(Var<Scalar>(clips)).value();
  }

  // Dims of the stem output (index 0) and of each stage output (1..4) from
  // the latest forward.
  const std::array<Dims, kStages + 1>& stage_dims() const { return stage_dims_; }

  // Stage activation of the latest forward run with capture enabled.
  const Tensor<Scalar>& captured(std::size_t stage) const {
    if (stage > kStages || !captured_[stage])
      throw ContractError("no captured activations for stage " + std::to_string(stage) +
                          "; run forward with capture enabled");
    return *captured_[stage];
  }

  std::vector<NamedParam<Scalar>> parameters() {
    std::vector<NamedParam<Scalar>> out;
    collect({&out, nullptr});
    return out;
  }

  std::vector<NamedBuffer<Scalar>> buffers() {
    std::vector<NamedBuffer<Scalar>> out;
    collect({nullptr, &out});
    return out;
  }

  std::vector<std::pair<std::string, StrfParams<Scalar>*>> strf_units() {
    std::vector<std::pair<std::string, StrfParams<Scalar>*>> out;
    for (std::size_t s = 0; s < kStages; ++s)
      for (std::size_t i = 0; i < blocks_[s].size(); ++i)
        if (auto* p = blocks_[s][i].strf_params()) out.emplace_back(block_name(s, i) + ".strf", p);
    return out;
  }

  ParamTable parameter_table() {
    ParamTable table;
    for (const auto& p : parameters()) {
      table.rows.push_back({p.name, p.var.dims(), p.var.value().size()});
      table.total += p.var.value().size();
    }
    return table;
  }

  const Var<Scalar>& classifier() const { return classifier_; }

 private:
  static std::string block_name(std::size_t stage, std::size_t index) {
    return "stage" + std::to_string(stage + 1) + ".block" + std::to_string(index);
  }

  void collect(const ParamCollector<Scalar>& c) {
    c.conv("stem.conv", stem_);
    c.bn("stem.bn", stem_bn_);
    for (std::size_t s = 0; s < kStages; ++s)
      for (std::size_t i = 0; i < blocks_[s].size(); ++i) blocks_[s][i].collect(block_name(s, i), c);
    if (c.params) c.params->push_back({"classifier.weight", classifier_});
  }

  void check_input(const Dims& d) const {
    if (d.size() != 5 || d[1] != spec_.in_channels || d[3] != spec_.frame_height ||
        d[4] != spec_.frame_width)
      throw ShapeError("network input " + to_string(d) + " expected (n, " +
                       std::to_string(spec_.in_channels) + ", t, " +
                       std::to_string(spec_.frame_height) + ", " +
                       std::to_string(spec_.frame_width) + ")");
  }

  void record(std::size_t index, const Var<Scalar>& x) {
    stage_dims_[index] = x.dims();
    if (capture_) captured_[index] = x.value();
  }

  NetworkSpec spec_;
  Conv3dLayer<Scalar> stem_;
  BatchNormLayer<Scalar> stem_bn_;
  std::array<std::vector<ResidualBlock<Scalar>>, kStages> blocks_;
  Var<Scalar> classifier_;
  bool training_ = false;
  bool capture_ = false;
  std::array<Dims, kStages + 1> stage_dims_;
  std::array<std::optional<Tensor<Scalar>>, kStages + 1> captured_;
};

// Learnable scalars of the network a spec describes (running statistics
// excluded).
ParamTable count_params(const NetworkSpec& spec);

// ---------------------------------------------------------------------------
// Attention maps

// Per-frame energy sum_c a^2 of a (c, t, h, w) activation, min-max normalized
// per frame to [0, 1]; a frame with zero range maps to all zeros.
template <typename Scalar>
Tensor<float> attention_map(const Tensor<Scalar>& activation) {
  const auto vs = volume_shape(activation.dims(), "attention_map");
  if (activation.rank() != 4)
    throw ShapeError("attention_map: expected a (c, t, h, w) activation, got " +
                     to_string(activation.dims()));
  const std::size_t T = vs.extent.t, HW = vs.extent.h * vs.extent.w;
  Tensor<float> map({T, vs.extent.h, vs.extent.w});
  for (std::size_t c = 0; c < vs.channels; ++c)
    for (std::size_t i = 0; i < T * HW; ++i) {
      const double a = double(activation[c * T * HW + i]);
      map[i] += float(a * a);
    }
  for (std::size_t t = 0; t < T; ++t) {
    float* frame = map.data() + t * HW;
    const auto [lo, hi] = std::minmax_element(frame, frame + HW);
    const float mn = *lo, range = *hi - *lo;
    for (std::size_t i = 0; i < HW; ++i) frame[i] = range > 0 ? (frame[i] - mn) / range : 0.0f;
  }
  return map;
}

// Map of clip `sample` at `stage` (0 = stem, 1..4) from captured activations.
template <typename Scalar>
Tensor<float> attention_export(const Network<Scalar>& net, std::size_t stage, std::size_t sample = 0) {
  const Tensor<Scalar>& act = net.captured(stage);
  const auto vs = volume_shape(act.dims(), "attention_export");
  if (sample >= vs.batch) throw ContractError("attention_export: sample index out of range");
  const std::size_t per = act.size() / vs.batch;
  std::vector<Scalar> slice(act.data() + sample * per, act.data() + (sample + 1) * per);
  return attention_map(
      Tensor<Scalar>({vs.channels, vs.extent.t, vs.extent.h, vs.extent.w}, std::move(slice)));
}

}  // namespace strf

#endif  // STRF_BACKBONE_HPP
