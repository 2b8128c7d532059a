// Synthetic tracklet datasets, manifest loading, clip augmentation and
// identity-balanced batch sampling.
//
// Each identity is a two-colour body sweeping horizontally in a sawtooth over
// a fixed grid of kMotionPeriod positions: frame k sits at grid cell
// (m k + j) mod kMotionPeriod for a per-identity step m coprime to the period
// and a per-tracklet phase j. Every tracklet whose length is a multiple of the
// period therefore visits each position equally often, whatever m is.
// Appearance twins share a palette and differ only in step (a slow and a fast
// sweep), so the frames of one twin are a reordering of the other's; motion
// twins share the step and differ only in palette.
#ifndef STRF_DATA_SYNTH_HPP
#define STRF_DATA_SYNTH_HPP

#include "strf/tracklet.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>

namespace strf {

enum class TwinMode { none, appearance, motion };

const char* to_string(TwinMode m);
TwinMode parse_twin_mode(const std::string& s);

inline constexpr std::size_t kMotionPeriod = 8;

struct IdentityFactors {
  std::size_t palette = 0;
  std::size_t step = 1;    // grid cells per frame, modulo kMotionPeriod (odd)
  double amplitude = 1.0;  // fraction of the free horizontal travel

  double frequency() const { return double(step) / double(kMotionPeriod); }  // cycles per frame
};

struct SynthSpec {
  std::size_t identities = 8;
  std::size_t frames = 16;
  std::size_t tracklets_per_identity = 4;
  // The first `train_tracklets` of each identity form the train split; the
  // rest alternate query, gallery, query, ...
  std::size_t train_tracklets = 4;
  std::size_t height = 64;
  std::size_t width = 32;
  std::size_t cameras = 2;
  TwinMode twins = TwinMode::appearance;
  double occlusion_probability = 0.0;
  double occluder_size = 0.3;  // fraction of frame height / width
  std::size_t jitter = 0;      // crop misalignment, pixels
  std::uint64_t seed = 7;

  void validate() const;
  // Deterministic per-identity factors honouring the twin mode.
  std::vector<IdentityFactors> identity_factors() const;
};

struct TrackletRecord {
  std::vector<std::filesystem::path> frames;  // relative to the manifest root
  int identity = 0;
  int camera = 0;
  Split split = Split::train;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<TrackletRecord> tracklets;
};

struct Image {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major
};

void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);

// One rendered frame; exposed for tests.
// `phase` is the grid cell of frame 0.
Image render_frame(const SynthSpec& spec, const IdentityFactors& id, std::size_t phase,
                   std::size_t frame_index, std::uint64_t frame_seed);

// Horizontal offset of the body, in pixels from the leftmost position.
std::size_t body_offset(const SynthSpec& spec, const IdentityFactors& id, std::size_t phase,
                        std::size_t frame_index);

// Writes root/<split>/<identity>/<camera>_<tracklet>/frame_%05d.ppm and
// root/manifest.tsv (path, id, camera, split; one row per frame).
DatasetManifest generate(const SynthSpec& spec, const std::filesystem::path& root);

DatasetManifest read_manifest(const std::filesystem::path& manifest_file);

struct Normalization {
  std::array<float, 3> mean{0.f, 0.f, 0.f};
  std::array<float, 3> stddev{1.f, 1.f, 1.f};
};

// Decodes every tracklet of the manifest (optionally one split) to (3, h, w)
// frames in [0, 1], then normalizes channel-wise.
std::vector<Tracklet> load(const std::filesystem::path& manifest_file, Normalization norm = {},
                           std::optional<Split> only = std::nullopt);

// Per-channel mean pixel value over every frame.
std::array<float, 3> channel_mean(std::span<const Tracklet> tracklets);

struct EraseRect {
  std::size_t top = 0, left = 0, height = 0, width = 0;
};

struct AugmentConfig {
  double flip_probability = 0.5;
  double erase_probability = 0.5;
  double erase_area_min = 0.02;
  double erase_area_max = 0.4;
  double erase_aspect_min = 0.3;
  std::array<float, 3> fill{0.f, 0.f, 0.f};
  // Forces flip / erase decisions (tests).
  std::optional<bool> force_flip;
  std::optional<EraseRect> force_erase;
};

// Clip-consistent augmentation of a (3, T, h, w) clip: one flip decision and
// at most one erased rectangle, applied to every frame.
TensorF augment(const TensorF& clip, const AugmentConfig& cfg, std::uint64_t seed);

struct ClipBatch {
  TensorF clips;                // (P K, 3, T, h, w)
  std::vector<int> labels;      // class index in [0, classes)
  std::vector<int> identities;  // original identity
};

// Contiguous class indices for the identities present in `tracklets`.
std::vector<int> identity_classes(std::span<const Tracklet> tracklets);

// P identities, K train-mode clips each; identities with fewer than K
// tracklets are sampled with replacement.
ClipBatch make_batch(std::span<const Tracklet> tracklets, std::size_t P, std::size_t K,
                     std::size_t frames_per_clip, std::size_t stride, std::uint64_t seed,
                     const AugmentConfig* augmentation = nullptr);

}  // namespace strf

#endif  // STRF_DATA_SYNTH_HPP
