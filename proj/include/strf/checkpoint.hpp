// Network checkpoints: a directory holding manifest.txt (one line per tensor:
// name, dims, file, byte offset) and binary tensor files. Each STRF unit's
// four weight matrices share one file as consecutive records.
#ifndef STRF_CHECKPOINT_HPP
#define STRF_CHECKPOINT_HPP

#include "strf/backbone.hpp"

#include <filesystem>

namespace strf {

struct CheckpointEntry {
  std::string name;
  Dims dims;
  std::string file;
  std::size_t offset = 0;
};

void save_checkpoint(Network<float>& net, const std::filesystem::path& dir);

// Restores parameters and batch-norm statistics into a network built from the
// same spec; names and dims must match the manifest exactly.
void load_checkpoint(Network<float>& net, const std::filesystem::path& dir);

std::vector<CheckpointEntry> read_checkpoint_manifest(const std::filesystem::path& dir);

}  // namespace strf

#endif  // STRF_CHECKPOINT_HPP
