// Binary tensor records.
//
// Layout: "STRF", version byte 0x01, rank byte, rank x u32 little-endian
// dims, then little-endian IEEE-754 single-precision data in row-major order.
#ifndef STRF_TENSOR_IO_HPP
#define STRF_TENSOR_IO_HPP

#include "strf/tensor.hpp"

#include <filesystem>
#include <iosfwd>

namespace strf {

inline constexpr char kTensorMagic[4] = {'S', 'T', 'R', 'F'};
inline constexpr std::uint8_t kTensorVersion = 0x01;

// Size in bytes of a record header for a tensor of the given rank.
inline std::size_t tensor_header_size(std::size_t rank) { return 4 + 1 + 1 + 4 * rank; }
inline std::size_t tensor_record_size(const Dims& dims) {
  return tensor_header_size(dims.size()) + 4 * element_count(dims);
}

void write_tensor(std::ostream& out, const TensorF& t);
// `source` names the stream in error messages.
TensorF read_tensor(std::istream& in, const std::string& source);

void save_tensor(const std::filesystem::path& path, const TensorF& t);
TensorF load_tensor(const std::filesystem::path& path);

}  // namespace strf

#endif  // STRF_TENSOR_IO_HPP
