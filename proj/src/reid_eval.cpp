#include "strf/reid_eval.hpp"

#include "strf/random.hpp"

#include <fstream>
#include <iomanip>
#include <numeric>

namespace strf {

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "query") return Split::query;
  if (s == "gallery") return Split::gallery;
  throw LoadError("unknown split '" + s + "'");
}

TensorF assemble_clip(const Tracklet& t, std::span<const std::size_t> indices) {
  if (t.frames.empty()) throw ContractError("tracklet " + t.source + " has no frames");
  const Dims& fd = t.frames.front().dims();
  if (fd.size() != 3) throw ShapeError("frames must be (3, h, w), got " + to_string(fd));
  const std::size_t C = fd[0], HW = fd[1] * fd[2], T = indices.size();
  TensorF clip({C, T, fd[1], fd[2]});
  for (std::size_t k = 0; k < T; ++k) {
    const TensorF& f = t.frames.at(indices[k]);
    if (f.dims() != fd) throw ShapeError("tracklet " + t.source + " has frames of mixed dims");
    for (std::size_t c = 0; c < C; ++c)
      std::copy_n(f.data() + c * HW, HW, clip.data() + (c * T + k) * HW);
  }
  return clip;
}

std::vector<std::vector<std::size_t>> clip_indices(std::size_t length, std::size_t frames_per_clip,
                                                   std::size_t stride, ClipMode mode,
                                                   std::uint64_t seed) {
  if (length == 0) throw ContractError("clip_indices: empty tracklet");
  if (frames_per_clip == 0 || stride == 0)
    throw ContractError("clip_indices: frames per clip and stride must be >= 1");
  std::vector<std::vector<std::size_t>> clips;
  if (mode == ClipMode::train) {
    const std::size_t span = (frames_per_clip - 1) * stride + 1;
    Rng rng(seed);
    std::vector<std::size_t> clip(frames_per_clip);
    if (length >= span) {
      const std::size_t start = std::size_t(rng.below(length - span + 1));
      for (std::size_t k = 0; k < frames_per_clip; ++k) clip[k] = start + k * stride;
    } else {
      const std::size_t start = std::size_t(rng.below(length));
      for (std::size_t k = 0; k < frames_per_clip; ++k) clip[k] = (start + k * stride) % length;
    }
    clips.push_back(std::move(clip));
    return clips;
  }
  const std::size_t chunks = (length + frames_per_clip - 1) / frames_per_clip;
  for (std::size_t c = 0; c < chunks; ++c) {
    std::vector<std::size_t> clip(frames_per_clip);
    for (std::size_t k = 0; k < frames_per_clip; ++k)
      clip[k] = std::min(c * frames_per_clip + k, length - 1);
    clips.push_back(std::move(clip));
  }
  return clips;
}

std::vector<TensorF> sample_clips(const Tracklet& t, std::size_t frames_per_clip,
                                  std::size_t stride, ClipMode mode, std::uint64_t seed) {
  std::vector<TensorF> out;
  for (const auto& idx : clip_indices(t.length(), frames_per_clip, stride, mode, seed))
    out.push_back(assemble_clip(t, idx));
  return out;
}

Eigen::VectorXd tracklet_feature(std::span<const Eigen::VectorXd> clip_features) {
  if (clip_features.empty()) throw ContractError("tracklet_feature: no clip features");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(clip_features.front().size());
  for (const auto& f : clip_features) {
    if (f.size() != acc.size()) throw ShapeError("tracklet_feature: clip features differ in length");
    acc += f;
  }
  return acc / double(clip_features.size());
}

Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& query, const Eigen::MatrixXd& gallery) {
  if (query.cols() != gallery.cols())
    throw ShapeError("distance_matrix: feature dims " + std::to_string(query.cols()) + " vs " +
                     std::to_string(gallery.cols()));
  const auto normalized = [](const Eigen::MatrixXd& m, const char* which) {
    Eigen::MatrixXd out = m;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double n = m.row(i).norm();
      if (n == 0.0)
        throw DomainError(std::string("distance_matrix: ") + which + " row " + std::to_string(i) +
                          " is zero");
      out.row(i) /= n;
    }
    return out;
  };
  const Eigen::MatrixXd q = normalized(query, "query");
  const Eigen::MatrixXd g = normalized(gallery, "gallery");
  Eigen::MatrixXd d = (Eigen::MatrixXd::Ones(q.rows(), g.rows()) - q * g.transpose());
  return d.cwiseMax(0.0).cwiseMin(2.0);
}

RetrievalResult evaluate(const Eigen::MatrixXd& distances, std::span<const int> query_ids,
                         std::span<const int> query_cams, std::span<const int> gallery_ids,
                         std::span<const int> gallery_cams) {
  const std::size_t nq = std::size_t(distances.rows()), ng = std::size_t(distances.cols());
  if (query_ids.size() != nq || query_cams.size() != nq || gallery_ids.size() != ng ||
      gallery_cams.size() != ng)
    throw ShapeError("evaluate: label lengths do not match the " + std::to_string(nq) + "x" +
                     std::to_string(ng) + " distance matrix");
  RetrievalResult r;
  std::vector<double> hits(ng, 0.0);
  std::vector<std::size_t> order(ng);
  for (std::size_t q = 0; q < nq; ++q) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return distances(Eigen::Index(q), Eigen::Index(a)) < distances(Eigen::Index(q), Eigen::Index(b));
    });
    std::size_t rank = 0, found = 0, first_hit = ng;
    double precision_sum = 0.0;
    for (std::size_t g : order) {
      if (gallery_ids[g] == query_ids[q] && gallery_cams[g] == query_cams[q]) continue;
      ++rank;
      if (gallery_ids[g] == query_ids[q]) {
        ++found;
        precision_sum += double(found) / double(rank);
        if (first_hit == ng) first_hit = rank - 1;
      }
    }
    if (found == 0) {
      ++r.skipped;
      continue;
    }
    for (std::size_t k = first_hit; k < ng; ++k) hits[k] += 1.0;
    r.ap.push_back(precision_sum / double(found));
    r.queries.push_back(q);
  }
  if (r.queries.empty()) throw EvaluationError("evaluate: no query has a valid gallery match");
  const double n = double(r.queries.size());
  r.cmc.resize(ng);
  for (std::size_t k = 0; k < ng; ++k) r.cmc[k] = hits[k] / n;
  r.mean_ap = std::accumulate(r.ap.begin(), r.ap.end(), 0.0) / n;
  return r;
}

void write_retrieval_report(const RetrievalResult& r, std::span<const std::size_t> ranks,
                            const std::filesystem::path& dir, const std::string& header) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.txt");
    if (!out) throw StorageError("cannot write " + (dir / "report.txt").string());
    if (!header.empty()) out << header << '\n';
    out << std::fixed << std::setprecision(4);
    out << "queries " << r.queries.size() << " skipped " << r.skipped << '\n';
    out << "mAP " << r.mean_ap << '\n';
    for (std::size_t k : ranks)
      if (k >= 1 && k <= r.cmc.size()) out << "R@" << k << ' ' << r.rank(k) << '\n';
  }
  {
    std::ofstream out(dir / "cmc.csv");
    out << "rank,cmc\n" << std::setprecision(17);
    for (std::size_t k = 0; k < r.cmc.size(); ++k) out << k + 1 << ',' << r.cmc[k] << '\n';
  }
  {
    std::ofstream out(dir / "ap.csv");
    out << "query_index,ap\n" << std::setprecision(17);
    for (std::size_t i = 0; i < r.ap.size(); ++i) out << r.queries[i] << ',' << r.ap[i] << '\n';
  }
}

}  // namespace strf
