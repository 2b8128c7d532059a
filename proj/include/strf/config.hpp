// Run configuration: line-based `key = value` pairs under `[section]` headers.
#ifndef STRF_CONFIG_HPP
#define STRF_CONFIG_HPP

#include "strf/backbone.hpp"
#include "strf/data_synth.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace strf {

struct ModelConfig {
  BlockVariant variant = BlockVariant::P3DC;
  std::vector<std::size_t> variant_stages{2, 3};  // 1-based
  std::vector<std::size_t> strf_stages{2, 3};
  std::size_t width_divisor = 1;
  std::array<std::size_t, 4> blocks{3, 4, 6, 3};
  std::size_t frame_height = 256;
  std::size_t frame_width = 128;
  std::size_t classes = 0;  // 0: number of training identities
  StrfConfig strf;

  NetworkSpec network_spec(std::size_t num_classes) const;
};

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 5e-4;
  std::size_t epochs = 250;
  std::size_t decay_period = 50;  // epochs
  double decay_factor = 0.1;
  std::size_t P = 8;
  std::size_t K = 4;
  std::size_t T = 4;
  std::size_t stride = 8;
  double margin = 0.3;
  std::uint64_t seed = 1;
  std::size_t max_steps = 0;  // 0: epochs x steps per epoch
  double flip_p = 0.5;
  double erase_p = 0.5;
  std::size_t checkpoint_every = 0;
  std::size_t eval_batch = 16;
};

struct DataConfig {
  std::filesystem::path manifest;        // empty: generate `synth` under `root`
  std::filesystem::path root = "synth";
  SynthSpec synth;
  Normalization norm;

  std::filesystem::path manifest_path() const {
    return manifest.empty() ? root / "manifest.tsv" : manifest;
  }
};

struct EvalConfig {
  std::vector<std::size_t> ranks{1, 5, 10, 20};
};

struct AblationSetting {
  std::string axis;   // integration, pool, branches, resolution
  std::string label;
  StrfConfig strf;
};

struct AblationConfig {
  std::vector<Integration> integrations{Integration::temporal_then_spatial,
                                        Integration::spatial_then_temporal, Integration::parallel};
  std::vector<PoolMode> pools{PoolMode::max, PoolMode::avg};
  // "all" or a single branch name.
  std::vector<std::string> branches{"all", "temporal_fine", "temporal_coarse", "spatial_fine",
                                    "spatial_coarse"};
  std::vector<std::pair<std::size_t, std::size_t>> resolutions{{1, 1}, {1, 3}, {1, 5}, {3, 5}};
  std::size_t steps = 20;

  // One setting per value on each axis, the other axes at the model config.
  std::vector<AblationSetting> settings(const StrfConfig& base) const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  AblationConfig ablation;

  std::size_t total_steps(std::size_t train_identities) const;
};

// Throws ConfigError carrying `<source>:<line>` for unknown sections or keys
// and malformed values.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

// Applies `section.key=value` overrides on top of `base` text.
RunConfig parse_config_with_overrides(const std::string& text, const std::string& source,
                                      const std::vector<std::string>& overrides);

std::string read_text(const std::filesystem::path& path);

}  // namespace strf

#endif  // STRF_CONFIG_HPP
