#ifndef STRF_TRACKLET_HPP
#define STRF_TRACKLET_HPP

#include "strf/tensor.hpp"

#include <string>
#include <vector>

namespace strf {

enum class Split { train, query, gallery };

const char* to_string(Split s);
Split parse_split(const std::string& s);

// Ordered frames of one identity seen by one camera. Each frame is (3, h, w).
struct Tracklet {
  std::vector<TensorF> frames;
  int identity = 0;
  int camera = 0;
  Split split = Split::train;
  std::string source;

  std::size_t length() const { return frames.size(); }
};

// Frames (3, T, h, w) assembled from the given frame indices.
TensorF assemble_clip(const Tracklet& t, std::span<const std::size_t> indices);

}  // namespace strf

#endif  // STRF_TRACKLET_HPP
