#include "strf/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace strf {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

void read_exact(std::istream& in, void* dst, std::size_t n, const std::string& source) {
  in.read(static_cast<char*>(dst), std::streamsize(n));
  if (std::size_t(in.gcount()) != n) throw LoadError(source + ": truncated tensor record");
}

}  // namespace

void write_tensor(std::ostream& out, const TensorF& t) {
  if (t.rank() > 255) throw ShapeError("write_tensor: rank exceeds 255");
  out.write(kTensorMagic, 4);
  out.put(char(kTensorVersion));
  out.put(char(t.rank()));
  for (std::size_t d : t.dims()) {
    if (d > UINT32_MAX) throw ShapeError("write_tensor: extent exceeds u32");
    put_u32(out, std::uint32_t(d));
  }
  for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw StorageError("write_tensor: stream write failed");
}

TensorF read_tensor(std::istream& in, const std::string& source) {
  char magic[4];
  read_exact(in, magic, 4, source);
  if (std::memcmp(magic, kTensorMagic, 4) != 0) throw LoadError(source + ": bad tensor magic");
  unsigned char version_rank[2];
  read_exact(in, version_rank, 2, source);
  if (version_rank[0] != kTensorVersion)
    throw LoadError(source + ": unsupported tensor version " + std::to_string(version_rank[0]));
  const std::size_t rank = version_rank[1];
  Dims dims(rank);
  for (auto& d : dims) {
    unsigned char b[4];
    read_exact(in, b, 4, source);
    d = get_u32(b);
    if (d == 0) throw LoadError(source + ": zero tensor extent");
  }
  const std::size_t count = element_count(dims);
  std::vector<unsigned char> raw(4 * count);
  read_exact(in, raw.data(), raw.size(), source);
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = std::bit_cast<float>(get_u32(&raw[4 * i]));
  return TensorF(std::move(dims), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const TensorF& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StorageError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

TensorF load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  return read_tensor(in, path.string());
}

}  // namespace strf
