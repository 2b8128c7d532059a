#include "strf/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace strf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::size_t to_size(const std::string& v) {
  std::size_t pos = 0;
  if (v.empty() || v[0] == '-') throw ConfigError("expected a non-negative integer, got '" + v + "'");
  const unsigned long long x = std::stoull(v, &pos);
  if (pos != v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return std::size_t(x);
}

double to_double(const std::string& v) {
  std::size_t pos = 0;
  const double x = std::stod(v, &pos);
  if (pos != v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return x;
}

std::vector<std::size_t> to_sizes(const std::string& v) {
  std::vector<std::size_t> out;
  if (v == "none") return out;
  for (const auto& s : split_list(v)) out.push_back(to_size(s));
  return out;
}

PoolMode to_pool(const std::string& v) {
  if (v == "max") return PoolMode::max;
  if (v == "avg") return PoolMode::avg;
  throw ConfigError("unknown pool kind '" + v + "' (expected max or avg)");
}

std::array<float, 3> to_triple(const std::string& v) {
  const auto parts = split_list(v);
  if (parts.size() != 3) throw ConfigError("expected three comma-separated values, got '" + v + "'");
  return {float(to_double(parts[0])), float(to_double(parts[1])), float(to_double(parts[2]))};
}

Branch to_branch(const std::string& v) {
  for (Branch b : kAllBranches)
    if (v == branch_name(b)) return b;
  throw ConfigError("unknown STRF branch '" + v + "'");
}

std::array<bool, 4> to_enabled(const std::string& v) {
  std::array<bool, 4> on{false, false, false, false};
  for (const auto& name : split_list(v)) {
    if (name == "all") {
      on.fill(true);
      continue;
    }
    on[std::size_t(to_branch(name))] = true;
  }
  return on;
}

std::pair<std::size_t, std::size_t> to_resolution(const std::string& v) {
  const auto colon = v.find(':');
  if (colon == std::string::npos) throw ConfigError("expected fine:coarse resolution, got '" + v + "'");
  return {to_size(trim(v.substr(0, colon))), to_size(trim(v.substr(colon + 1)))};
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, std::map<std::string, Setter>>& setters() {
  static const std::map<std::string, std::map<std::string, Setter>> table = {
      {"model",
       {
           {"variant", [](RunConfig& c, const std::string& v) { c.model.variant = parse_block_variant(v); }},
           {"variant_stages", [](RunConfig& c, const std::string& v) { c.model.variant_stages = to_sizes(v); }},
           {"strf_stages", [](RunConfig& c, const std::string& v) { c.model.strf_stages = to_sizes(v); }},
           {"width_divisor", [](RunConfig& c, const std::string& v) { c.model.width_divisor = to_size(v); }},
           {"blocks",
            [](RunConfig& c, const std::string& v) {
              const auto b = to_sizes(v);
              if (b.size() != 4) throw ConfigError("blocks needs four stage counts");
              std::copy(b.begin(), b.end(), c.model.blocks.begin());
            }},
           {"frame_height", [](RunConfig& c, const std::string& v) { c.model.frame_height = to_size(v); }},
           {"frame_width", [](RunConfig& c, const std::string& v) { c.model.frame_width = to_size(v); }},
           {"classes", [](RunConfig& c, const std::string& v) { c.model.classes = to_size(v); }},
           {"r_fine", [](RunConfig& c, const std::string& v) { c.model.strf.r_fine = to_size(v); }},
           {"r_coarse", [](RunConfig& c, const std::string& v) { c.model.strf.r_coarse = to_size(v); }},
           {"temporal_pool", [](RunConfig& c, const std::string& v) { c.model.strf.temporal_pool = to_pool(v); }},
           {"spatial_pool", [](RunConfig& c, const std::string& v) { c.model.strf.spatial_pool = to_pool(v); }},
           {"pool",
            [](RunConfig& c, const std::string& v) {
              c.model.strf.temporal_pool = c.model.strf.spatial_pool = to_pool(v);
            }},
           {"integration", [](RunConfig& c, const std::string& v) { c.model.strf.integration = parse_integration(v); }},
           {"reduction", [](RunConfig& c, const std::string& v) { c.model.strf.reduction = to_size(v); }},
           {"temperature", [](RunConfig& c, const std::string& v) { c.model.strf.temperature = to_double(v); }},
           {"branches", [](RunConfig& c, const std::string& v) { c.model.strf.enabled = to_enabled(v); }},
       }},
      {"train",
       {
           {"lr", [](RunConfig& c, const std::string& v) { c.train.lr = to_double(v); }},
           {"weight_decay", [](RunConfig& c, const std::string& v) { c.train.weight_decay = to_double(v); }},
           {"epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = to_size(v); }},
           {"decay_period", [](RunConfig& c, const std::string& v) { c.train.decay_period = to_size(v); }},
           {"decay_factor", [](RunConfig& c, const std::string& v) { c.train.decay_factor = to_double(v); }},
           {"P", [](RunConfig& c, const std::string& v) { c.train.P = to_size(v); }},
           {"K", [](RunConfig& c, const std::string& v) { c.train.K = to_size(v); }},
           {"T", [](RunConfig& c, const std::string& v) { c.train.T = to_size(v); }},
           {"stride", [](RunConfig& c, const std::string& v) { c.train.stride = to_size(v); }},
           {"margin", [](RunConfig& c, const std::string& v) { c.train.margin = to_double(v); }},
           {"seed", [](RunConfig& c, const std::string& v) { c.train.seed = to_size(v); }},
           {"max_steps", [](RunConfig& c, const std::string& v) { c.train.max_steps = to_size(v); }},
           {"flip_p", [](RunConfig& c, const std::string& v) { c.train.flip_p = to_double(v); }},
           {"erase_p", [](RunConfig& c, const std::string& v) { c.train.erase_p = to_double(v); }},
           {"checkpoint_every", [](RunConfig& c, const std::string& v) { c.train.checkpoint_every = to_size(v); }},
           {"eval_batch", [](RunConfig& c, const std::string& v) { c.train.eval_batch = to_size(v); }},
       }},
      {"data",
       {
           {"manifest", [](RunConfig& c, const std::string& v) { c.data.manifest = v; }},
           {"root", [](RunConfig& c, const std::string& v) { c.data.root = v; }},
           {"identities", [](RunConfig& c, const std::string& v) { c.data.synth.identities = to_size(v); }},
           {"frames", [](RunConfig& c, const std::string& v) { c.data.synth.frames = to_size(v); }},
           {"tracklets_per_identity",
            [](RunConfig& c, const std::string& v) { c.data.synth.tracklets_per_identity = to_size(v); }},
           {"train_tracklets", [](RunConfig& c, const std::string& v) { c.data.synth.train_tracklets = to_size(v); }},
           {"height", [](RunConfig& c, const std::string& v) { c.data.synth.height = to_size(v); }},
           {"width", [](RunConfig& c, const std::string& v) { c.data.synth.width = to_size(v); }},
           {"cameras", [](RunConfig& c, const std::string& v) { c.data.synth.cameras = to_size(v); }},
           {"twins", [](RunConfig& c, const std::string& v) { c.data.synth.twins = parse_twin_mode(v); }},
           {"occlusion_probability",
            [](RunConfig& c, const std::string& v) { c.data.synth.occlusion_probability = to_double(v); }},
           {"occluder_size", [](RunConfig& c, const std::string& v) { c.data.synth.occluder_size = to_double(v); }},
           {"jitter", [](RunConfig& c, const std::string& v) { c.data.synth.jitter = to_size(v); }},
           {"seed", [](RunConfig& c, const std::string& v) { c.data.synth.seed = to_size(v); }},
           {"mean", [](RunConfig& c, const std::string& v) { c.data.norm.mean = to_triple(v); }},
           {"std", [](RunConfig& c, const std::string& v) { c.data.norm.stddev = to_triple(v); }},
       }},
      {"eval",
       {
           {"ranks", [](RunConfig& c, const std::string& v) { c.eval.ranks = to_sizes(v); }},
       }},
      {"ablation",
       {
           {"integrations",
            [](RunConfig& c, const std::string& v) {
              c.ablation.integrations.clear();
              for (const auto& s : split_list(v)) c.ablation.integrations.push_back(parse_integration(s));
            }},
           {"pools",
            [](RunConfig& c, const std::string& v) {
              c.ablation.pools.clear();
              for (const auto& s : split_list(v)) c.ablation.pools.push_back(to_pool(s));
            }},
           {"branches",
            [](RunConfig& c, const std::string& v) {
              c.ablation.branches = split_list(v);
              for (const auto& s : c.ablation.branches)
                if (s != "all") to_branch(s);
            }},
           {"resolutions",
            [](RunConfig& c, const std::string& v) {
              c.ablation.resolutions.clear();
              for (const auto& s : split_list(v)) c.ablation.resolutions.push_back(to_resolution(s));
            }},
           {"steps", [](RunConfig& c, const std::string& v) { c.ablation.steps = to_size(v); }},
       }},
  };
  return table;
}

void apply(RunConfig& cfg, const std::string& section, const std::string& key,
           const std::string& value, const std::string& where) {
  const auto& table = setters();
  const auto sec = table.find(section);
  if (sec == table.end()) throw ConfigError(where + ": unknown section [" + section + "]");
  const auto it = sec->second.find(key);
  if (it == sec->second.end())
    throw ConfigError(where + ": unknown key '" + key + "' in [" + section + "]");
  try {
    it->second(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + key + ": " + e.what());
  } catch (const std::logic_error&) {
    throw ConfigError(where + ": " + key + ": malformed value '" + value + "'");
  }
}

void apply_text(RunConfig& cfg, const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!setters().count(section)) throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    if (section.empty()) throw ConfigError(where + ": key outside of any section");
    apply(cfg, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
  }
}

}  // namespace

NetworkSpec ModelConfig::network_spec(std::size_t num_classes) const {
  NetworkSpec spec;
  const auto stage = [&](std::size_t s) -> StageSpec& {
    if (s < 1 || s > 4) throw ConfigError("stage index " + std::to_string(s) + " outside 1..4");
    return spec.stages[s - 1];
  };
  for (std::size_t s : variant_stages) stage(s).variant = variant;
  for (std::size_t s : strf_stages) stage(s).strf = true;
  const NetworkSpec reference;
  std::array<std::size_t, 4> reference_blocks{};
  for (std::size_t s = 0; s < 4; ++s) reference_blocks[s] = reference.stages[s].blocks;
  if (width_divisor != 1 || blocks != reference_blocks) spec = spec.scaled(width_divisor, blocks);
  spec.frame_height = frame_height;
  spec.frame_width = frame_width;
  spec.strf = strf;
  spec.num_classes = classes ? classes : num_classes;
  spec.validate();
  return spec;
}

std::vector<AblationSetting> AblationConfig::settings(const StrfConfig& base) const {
  std::vector<AblationSetting> out;
  for (Integration phi : integrations) {
    StrfConfig s = base;
    s.integration = phi;
    out.push_back({"integration", to_string(phi), s});
  }
  for (PoolMode p : pools) {
    StrfConfig s = base;
    s.temporal_pool = s.spatial_pool = p;
    out.push_back({"pool", to_string(p), s});
  }
  for (const auto& b : branches) {
    StrfConfig s = base;
    s.enabled = to_enabled(b);
    out.push_back({"branches", b, s});
  }
  for (const auto& [fine, coarse] : resolutions) {
    StrfConfig s = base;
    s.r_fine = fine;
    s.r_coarse = coarse;
    out.push_back({"resolution", std::to_string(fine) + ":" + std::to_string(coarse), s});
  }
  return out;
}

std::size_t RunConfig::total_steps(std::size_t train_identities) const {
  if (train.max_steps) return train.max_steps;
  const std::size_t per_epoch = std::max<std::size_t>(1, train_identities / std::max<std::size_t>(1, train.P));
  return train.epochs * per_epoch;
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig cfg;
  apply_text(cfg, text, source);
  return cfg;
}

RunConfig parse_config_with_overrides(const std::string& text, const std::string& source,
                                      const std::vector<std::string>& overrides) {
  RunConfig cfg = parse_config(text, source);
  for (const auto& o : overrides) {
    const auto dot = o.find('.');
    const auto eq = o.find('=');
    if (dot == std::string::npos || eq == std::string::npos || dot > eq)
      throw ConfigError("override '" + o + "': expected section.key=value");
    apply(cfg, trim(o.substr(0, dot)), trim(o.substr(dot + 1, eq - dot - 1)), trim(o.substr(eq + 1)),
          "override '" + o + "'");
  }
  return cfg;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text(path), path.string());
}

}  // namespace strf
