#include "strf/data_synth.hpp"

#include "strf/random.hpp"
#include "strf/reid_eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace strf {

namespace fs = std::filesystem;

const char* to_string(TwinMode m) {
  switch (m) {
    case TwinMode::none: return "none";
    case TwinMode::appearance: return "appearance";
    case TwinMode::motion: return "motion";
  }
  return "?";
}

TwinMode parse_twin_mode(const std::string& s) {
  if (s == "none") return TwinMode::none;
  if (s == "appearance") return TwinMode::appearance;
  if (s == "motion") return TwinMode::motion;
  throw ConfigError("unknown twin mode '" + s + "' (expected none, appearance or motion)");
}

void SynthSpec::validate() const {
  if (identities == 0 || frames == 0 || tracklets_per_identity == 0)
    throw ConfigError("synth: identity, frame and tracklet counts must be >= 1");
  if (train_tracklets > tracklets_per_identity)
    throw ConfigError("synth: train tracklets exceed tracklets per identity");
  if (height < 8 || width < 8) throw ConfigError("synth: frames must be at least 8x8");
  if (cameras == 0) throw ConfigError("synth: camera count must be >= 1");
  if (occlusion_probability < 0 || occlusion_probability > 1)
    throw ConfigError("synth: occlusion probability must lie in [0, 1]");
  if (occluder_size <= 0 || occluder_size > 1)
    throw ConfigError("synth: occluder size must lie in (0, 1]");
}

std::vector<IdentityFactors> SynthSpec::identity_factors() const {
  Rng rng(derive_seed(seed, 0xFAC7));
  // Odd steps are coprime to the period. 1 and 7 sweep one cell per frame
  // (right or left); 3 and 5 sweep three.
  static constexpr std::size_t kSlow[] = {1, 7}, kFast[] = {3, 5};
  std::vector<IdentityFactors> out(identities);
  for (std::size_t i = 0; i < identities; ++i) {
    IdentityFactors& f = out[i];
    const bool second = twins != TwinMode::none && i % 2 == 1;
    if (!second) {
      f.palette = twins == TwinMode::appearance ? i / 2 : i;
      const bool fast = twins == TwinMode::appearance ? false : rng.bernoulli(0.5);
      f.step = fast ? kFast[rng.below(2)] : kSlow[rng.below(2)];
      f.amplitude = rng.uniform(0.8, 1.0);
      continue;
    }
    f = out[i - 1];
    if (twins == TwinMode::appearance) f.step = kFast[rng.below(2)];
    else f.palette = i;
  }
  return out;
}

namespace {

struct Rgb {
  std::uint8_t r, g, b;
};

Rgb hue_color(double hue, double sat, double val) {
  const double h6 = std::fmod(hue, 1.0) * 6.0;
  const int sector = int(h6);
  const double frac = h6 - sector;
  const double p = val * (1 - sat), q = val * (1 - sat * frac), t = val * (1 - sat * (1 - frac));
  double r = 0, g = 0, b = 0;
  switch (sector % 6) {
    case 0: r = val, g = t, b = p; break;
    case 1: r = q, g = val, b = p; break;
    case 2: r = p, g = val, b = t; break;
    case 3: r = p, g = q, b = val; break;
    case 4: r = t, g = p, b = val; break;
    default: r = val, g = p, b = q; break;
  }
  return {std::uint8_t(std::lround(r * 255)), std::uint8_t(std::lround(g * 255)),
          std::uint8_t(std::lround(b * 255))};
}

std::pair<Rgb, Rgb> palette_colors(std::uint64_t seed, std::size_t palette) {
  Rng rng(derive_seed(seed ^ 0x9A1E77E5ull, palette));
  const double base = std::fmod(double(palette) * 0.61803398875 + rng.uniform(0, 0.1), 1.0);
  const Rgb top = hue_color(base, rng.uniform(0.6, 1.0), rng.uniform(0.7, 1.0));
  const Rgb bottom = hue_color(base + rng.uniform(0.3, 0.7), rng.uniform(0.5, 1.0),
                               rng.uniform(0.3, 0.6));
  return {top, bottom};
}

constexpr Rgb kBackground{96, 96, 96};
constexpr Rgb kOccluder{128, 128, 128};

void fill_rect(Image& img, std::ptrdiff_t top, std::ptrdiff_t left, std::ptrdiff_t h,
               std::ptrdiff_t w, Rgb c) {
  for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(top, 0);
       y < std::min<std::ptrdiff_t>(top + h, std::ptrdiff_t(img.height)); ++y)
    for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(left, 0);
         x < std::min<std::ptrdiff_t>(left + w, std::ptrdiff_t(img.width)); ++x) {
      std::uint8_t* px = &img.rgb[3 * (std::size_t(y) * img.width + std::size_t(x))];
      px[0] = c.r, px[1] = c.g, px[2] = c.b;
    }
}

}  // namespace

std::size_t body_offset(const SynthSpec& spec, const IdentityFactors& id, std::size_t phase,
                        std::size_t frame_index) {
  const std::size_t body_w = std::max<std::size_t>(2, spec.width * 3 / 8);
  const double range = id.amplitude * double(spec.width - body_w);
  const std::size_t cell = (id.step * frame_index + phase) % kMotionPeriod;
  return std::size_t(std::lround(range * double(cell) / double(kMotionPeriod - 1)));
}

Image render_frame(const SynthSpec& spec, const IdentityFactors& id, std::size_t phase,
                   std::size_t frame_index, std::uint64_t frame_seed) {
  Image img{spec.height, spec.width, std::vector<std::uint8_t>(3 * spec.height * spec.width)};
  fill_rect(img, 0, 0, std::ptrdiff_t(img.height), std::ptrdiff_t(img.width), kBackground);

  Rng rng(frame_seed);
  std::ptrdiff_t dx = 0, dy = 0;
  if (spec.jitter > 0) {
    dx = std::ptrdiff_t(rng.below(2 * spec.jitter + 1)) - std::ptrdiff_t(spec.jitter);
    dy = std::ptrdiff_t(rng.below(2 * spec.jitter + 1)) - std::ptrdiff_t(spec.jitter);
  }
  const std::size_t body_w = std::max<std::size_t>(2, spec.width * 3 / 8);
  const std::size_t body_h = spec.height * 3 / 4;
  const std::ptrdiff_t left = std::ptrdiff_t(body_offset(spec, id, phase, frame_index)) + dx;
  const std::ptrdiff_t top = std::ptrdiff_t(spec.height / 8) + dy;
  const auto [upper, lower] = palette_colors(spec.seed, id.palette);
  fill_rect(img, top, left, std::ptrdiff_t(body_h / 2), std::ptrdiff_t(body_w), upper);
  fill_rect(img, top + std::ptrdiff_t(body_h / 2), left, std::ptrdiff_t(body_h - body_h / 2),
            std::ptrdiff_t(body_w), lower);

  if (spec.occlusion_probability > 0 && rng.bernoulli(spec.occlusion_probability)) {
    const std::size_t oh = std::max<std::size_t>(1, std::size_t(std::lround(spec.occluder_size * double(spec.height))));
    const std::size_t ow = std::max<std::size_t>(1, std::size_t(std::lround(spec.occluder_size * double(spec.width))));
    const std::size_t oy = std::size_t(rng.below(spec.height - std::min(oh, spec.height) + 1));
    const std::size_t ox = std::size_t(rng.below(spec.width - std::min(ow, spec.width) + 1));
    fill_rect(img, std::ptrdiff_t(oy), std::ptrdiff_t(ox), std::ptrdiff_t(oh), std::ptrdiff_t(ow), kOccluder);
  }
  return img;
}

void write_ppm(const fs::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StorageError("cannot write " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), std::streamsize(img.rgb.size()));
  if (!out) throw StorageError("write failed for " + path.string());
}

Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("missing frame file " + path.string());
  const auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  if (token() != "P6") throw LoadError(path.string() + ": bad magic (expected binary PPM P6)");
  Image img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw LoadError(path.string() + ": maxval must be 255");
  } catch (const std::logic_error&) {
    throw LoadError(path.string() + ": malformed PPM header");
  }
  if (img.width == 0 || img.height == 0) throw LoadError(path.string() + ": empty image");
  img.rgb.resize(3 * img.width * img.height);
  in.read(reinterpret_cast<char*>(img.rgb.data()), std::streamsize(img.rgb.size()));
  if (std::size_t(in.gcount()) != img.rgb.size()) throw LoadError(path.string() + ": truncated pixel data");
  return img;
}

DatasetManifest generate(const SynthSpec& spec, const fs::path& root) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root)) throw StorageError("cannot create dataset root " + root.string());
  DatasetManifest manifest;
  manifest.root = root;
  const auto factors = spec.identity_factors();
  for (std::size_t id = 0; id < spec.identities; ++id) {
    for (std::size_t j = 0; j < spec.tracklets_per_identity; ++j) {
      TrackletRecord rec;
      rec.identity = int(id);
      rec.camera = int(j % spec.cameras);
      if (j < spec.train_tracklets) rec.split = Split::train;
      else rec.split = (j - spec.train_tracklets) % 2 == 0 ? Split::query : Split::gallery;
      char dir[64];
      std::snprintf(dir, sizeof dir, "%04zu/%d_%02zu", id, rec.camera, j);
      const fs::path rel_dir = fs::path(to_string(rec.split)) / dir;
      fs::create_directories(root / rel_dir, ec);
      if (ec) throw StorageError("cannot create " + (root / rel_dir).string());
      const std::uint64_t tseed = derive_seed(spec.seed, id * 1000003ull + j);
      Rng trng(tseed);
      const std::size_t phase = std::size_t(trng.below(kMotionPeriod));
      for (std::size_t k = 0; k < spec.frames; ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%05zu.ppm", k);
        const fs::path rel = rel_dir / name;
        write_ppm(root / rel, render_frame(spec, factors[id], phase, k, derive_seed(tseed, k)));
        rec.frames.push_back(rel);
      }
      manifest.tracklets.push_back(std::move(rec));
    }
  }
  std::ofstream out(root / "manifest.tsv", std::ios::binary);
  if (!out) throw StorageError("cannot write " + (root / "manifest.tsv").string());
  out << "path\tid\tcamera\tsplit\n";
  for (const auto& t : manifest.tracklets)
    for (const auto& f : t.frames)
      out << f.generic_string() << '\t' << t.identity << '\t' << t.camera << '\t'
          << to_string(t.split) << '\n';
  if (!out) throw StorageError("write failed for manifest");
  return manifest;
}

DatasetManifest read_manifest(const fs::path& manifest_file) {
  std::ifstream in(manifest_file);
  if (!in) throw LoadError("cannot open manifest " + manifest_file.string());
  DatasetManifest m;
  m.root = manifest_file.parent_path();
  std::map<std::string, std::size_t> by_dir;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line.rfind("path\t", 0) == 0) continue;
    std::istringstream ss(line);
    std::string path, id, cam, split;
    if (!std::getline(ss, path, '\t') || !std::getline(ss, id, '\t') ||
        !std::getline(ss, cam, '\t') || !std::getline(ss, split, '\t'))
      throw LoadError(manifest_file.string() + ":" + std::to_string(lineno) +
                      ": expected path, id, camera, split");
    TrackletRecord probe;
    try {
      probe.identity = std::stoi(id);
      probe.camera = std::stoi(cam);
    } catch (const std::logic_error&) {
      throw LoadError(manifest_file.string() + ":" + std::to_string(lineno) + ": bad id or camera");
    }
    try {
      probe.split = parse_split(split);
    } catch (const LoadError& e) {
      throw LoadError(manifest_file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const fs::path rel(path);
    const std::string dir = rel.parent_path().generic_string();
    auto [it, fresh] = by_dir.try_emplace(dir, m.tracklets.size());
    if (fresh) m.tracklets.push_back(probe);
    TrackletRecord& rec = m.tracklets[it->second];
    if (rec.identity != probe.identity || rec.camera != probe.camera || rec.split != probe.split)
      throw LoadError(manifest_file.string() + ":" + std::to_string(lineno) +
                      ": labels disagree with earlier frames of " + dir);
    rec.frames.push_back(rel);
  }
  return m;
}

std::vector<Tracklet> load(const fs::path& manifest_file, Normalization norm,
                           std::optional<Split> only) {
  const DatasetManifest m = read_manifest(manifest_file);
  std::vector<Tracklet> out;
  for (const auto& rec : m.tracklets) {
    if (only && rec.split != *only) continue;
    Tracklet t;
    t.identity = rec.identity;
    t.camera = rec.camera;
    t.split = rec.split;
    t.source = rec.frames.front().parent_path().generic_string();
    for (const auto& rel : rec.frames) {
      const fs::path file = m.root / rel;
      const Image img = read_ppm(file);
      if (!t.frames.empty() && (t.frames[0].dim(1) != img.height || t.frames[0].dim(2) != img.width))
        throw LoadError(file.string() + ": frame dims differ from the rest of the tracklet");
      TensorF f({3, img.height, img.width});
      const std::size_t hw = img.height * img.width;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < hw; ++i)
          f[c * hw + i] = (float(img.rgb[3 * i + c]) / 255.0f - norm.mean[c]) / norm.stddev[c];
      t.frames.push_back(std::move(f));
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::array<float, 3> channel_mean(std::span<const Tracklet> tracklets) {
  std::array<double, 3> acc{0, 0, 0};
  std::size_t count = 0;
  for (const auto& t : tracklets)
    for (const auto& f : t.frames) {
      const std::size_t hw = f.dim(1) * f.dim(2);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < hw; ++i) acc[c] += f[c * hw + i];
      count += hw;
    }
  if (count == 0) return {0, 0, 0};
  return {float(acc[0] / double(count)), float(acc[1] / double(count)), float(acc[2] / double(count))};
}

TensorF augment(const TensorF& clip, const AugmentConfig& cfg, std::uint64_t seed) {
  clip.require_rank(4);
  const std::size_t C = clip.dim(0), T = clip.dim(1), H = clip.dim(2), W = clip.dim(3);
  Rng rng(seed);
  TensorF out = clip;
  const bool flip = cfg.force_flip ? *cfg.force_flip : rng.bernoulli(cfg.flip_probability);
  if (flip)
    for (std::size_t row = 0; row < C * T * H; ++row) {
      float* r = out.data() + row * W;
      std::reverse(r, r + W);
    }
  std::optional<EraseRect> rect = cfg.force_erase;
  if (!rect && cfg.erase_probability > 0 && rng.bernoulli(cfg.erase_probability)) {
    for (int attempt = 0; attempt < 100 && !rect; ++attempt) {
      const double area = double(H * W) * rng.uniform(cfg.erase_area_min, cfg.erase_area_max);
      const double aspect = rng.uniform(cfg.erase_aspect_min, 1.0 / cfg.erase_aspect_min);
      const auto h = std::size_t(std::lround(std::sqrt(area * aspect)));
      const auto w = std::size_t(std::lround(std::sqrt(area / aspect)));
      if (h == 0 || w == 0 || h >= H || w >= W) continue;
      rect = EraseRect{std::size_t(rng.below(H - h + 1)), std::size_t(rng.below(W - w + 1)), h, w};
    }
  }
  if (rect) {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t y = rect->top; y < std::min(H, rect->top + rect->height); ++y)
          for (std::size_t x = rect->left; x < std::min(W, rect->left + rect->width); ++x)
            out[((c * T + t) * H + y) * W + x] = cfg.fill[c % 3];
  }
  return out;
}

std::vector<int> identity_classes(std::span<const Tracklet> tracklets) {
  std::vector<int> ids;
  for (const auto& t : tracklets) ids.push_back(t.identity);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

ClipBatch make_batch(std::span<const Tracklet> tracklets, std::size_t P, std::size_t K,
                     std::size_t frames_per_clip, std::size_t stride, std::uint64_t seed,
                     const AugmentConfig* augmentation) {
  const std::vector<int> classes = identity_classes(tracklets);
  if (classes.size() < P)
    throw ContractError("make_batch: " + std::to_string(classes.size()) +
                        " identities available, " + std::to_string(P) + " requested");
  if (K == 0 || P == 0) throw ContractError("make_batch: P and K must be >= 1");
  std::map<int, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < tracklets.size(); ++i) by_id[tracklets[i].identity].push_back(i);

  Rng rng(seed);
  std::vector<std::size_t> order(classes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < P; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);

  ClipBatch batch;
  std::vector<TensorF> clips;
  std::uint64_t stream = 0;
  for (std::size_t i = 0; i < P; ++i) {
    const int id = classes[order[i]];
    std::vector<std::size_t> pool = by_id[id];
    std::vector<std::size_t> chosen;
    if (pool.size() >= K) {
      for (std::size_t k = 0; k < K; ++k) {
        std::swap(pool[k], pool[k + rng.below(pool.size() - k)]);
        chosen.push_back(pool[k]);
      }
    } else {
      for (std::size_t k = 0; k < K; ++k) chosen.push_back(pool[rng.below(pool.size())]);
    }
    for (std::size_t t : chosen) {
      const std::uint64_t clip_seed = derive_seed(seed, ++stream);
      TensorF clip =
          sample_clips(tracklets[t], frames_per_clip, stride, ClipMode::train, clip_seed).front();
      if (augmentation) clip = augment(clip, *augmentation, derive_seed(clip_seed, 0xA06));
      clips.push_back(std::move(clip));
      batch.labels.push_back(int(order[i]));
      batch.identities.push_back(id);
    }
  }
  Dims d = clips.front().dims();
  d.insert(d.begin(), clips.size());
  std::vector<float> data;
  data.reserve(element_count(d));
  for (const auto& c : clips) data.insert(data.end(), c.values().begin(), c.values().end());
  batch.clips = TensorF(d, std::move(data));
  return batch;
}

}  // namespace strf
