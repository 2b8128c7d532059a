// Clip sampling, tracklet feature aggregation and cosine retrieval scored by
// CMC and mean average precision.
#ifndef STRF_REID_EVAL_HPP
#define STRF_REID_EVAL_HPP

#include "strf/tracklet.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>

namespace strf {

enum class ClipMode { train, test };

// Frame indices of the clips drawn from a tracklet of `length` frames.
//  train: one clip of T frames spaced by `stride` from a seeded random start,
//         wrapping cyclically when the tracklet is too short.
//  test:  ceil(length / T) consecutive non-overlapping chunks; the last chunk
//         is padded by repeating its final frame.
std::vector<std::vector<std::size_t>> clip_indices(std::size_t length, std::size_t frames_per_clip,
                                                   std::size_t stride, ClipMode mode,
                                                   std::uint64_t seed);

// Same, materialized as (3, T, h, w) clips.
std::vector<TensorF> sample_clips(const Tracklet& t, std::size_t frames_per_clip,
                                  std::size_t stride, ClipMode mode, std::uint64_t seed);

// Elementwise mean of per-clip embeddings.
Eigen::VectorXd tracklet_feature(std::span<const Eigen::VectorXd> clip_features);

// Cosine distance between every query row and every gallery row.
Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& query, const Eigen::MatrixXd& gallery);

struct RetrievalResult {
  std::vector<double> cmc;           // cmc[k] = fraction matched within rank k+1
  double mean_ap = 0.0;
  std::vector<double> ap;            // per evaluated query
  std::vector<std::size_t> queries;  // indices of evaluated queries
  std::size_t skipped = 0;           // queries without any valid gallery match

  double rank(std::size_t k) const { return cmc.at(k - 1); }
};

// Gallery entries sharing both identity and camera with the query are
// excluded; the rest are ranked by ascending distance, ties by gallery index.
RetrievalResult evaluate(const Eigen::MatrixXd& distances, std::span<const int> query_ids,
                         std::span<const int> query_cams, std::span<const int> gallery_ids,
                         std::span<const int> gallery_cams);

// Writes report.txt, cmc.csv (rank,cmc) and ap.csv (query_index,ap).
void write_retrieval_report(const RetrievalResult& r, std::span<const std::size_t> ranks,
                            const std::filesystem::path& dir, const std::string& header = {});

}  // namespace strf

#endif  // STRF_REID_EVAL_HPP
