#include "strf/checkpoint.hpp"
#include "strf/tensor_io.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

using namespace strf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void perturb(Network<float>& net, float delta) {
  for (auto& p : net.parameters())
    for (auto& v : p.var.mutable_value().values()) v += delta;
  for (auto& b : net.buffers())
    for (auto& v : b.tensor->values()) v += delta;
}

}  // namespace

TEST(TensorIo, StreamRoundTripIsBitExact) {
  TensorF t({2, 3, 1});
  const float values[] = {0.f, -0.f, 1.5f, -3.25e-12f, std::numeric_limits<float>::max(),
                          std::numeric_limits<float>::denorm_min()};
  std::copy(std::begin(values), std::end(values), t.data());
  std::stringstream ss;
  write_tensor(ss, t);
  EXPECT_EQ(ss.str().size(), tensor_record_size(t.dims()));
  const TensorF back = read_tensor(ss, "mem");
  EXPECT_EQ(back.dims(), t.dims());
  EXPECT_EQ(std::memcmp(back.data(), t.data(), t.size() * sizeof(float)), 0);
}

TEST(TensorIo, HeaderLayout) {
  TensorF t({1, 258}, 0.f);
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string s = ss.str();
  EXPECT_EQ(s.substr(0, 4), "STRF");
  EXPECT_EQ(std::uint8_t(s[4]), 1);
  EXPECT_EQ(std::uint8_t(s[5]), 2);
  EXPECT_EQ(std::uint8_t(s[10]), 2);  // 258 little-endian: 02 01 00 00
  EXPECT_EQ(std::uint8_t(s[11]), 1);
}

TEST(TensorIo, CorruptRecordsAreLoadErrors) {
  TensorF t({2, 2}, 1.f);
  std::stringstream ss;
  write_tensor(ss, t);
  std::string bytes = ss.str();
  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::stringstream in(bad);
    EXPECT_THROW(read_tensor(in, "bad"), LoadError);
  }
  {
    std::string bad = bytes;
    bad[4] = 9;
    std::stringstream in(bad);
    EXPECT_THROW(read_tensor(in, "bad"), LoadError);
  }
  {
    std::stringstream in(bytes.substr(0, bytes.size() - 1));
    EXPECT_THROW(read_tensor(in, "bad"), LoadError);
  }
}

TEST(TensorIo, FileRoundTrip) {
  TempDir dir("strf_tensor_io");
  fs::create_directories(dir.path);
  TensorF t({3}, std::vector<float>{1, 2, 3});
  save_tensor(dir.path / "t.bin", t);
  EXPECT_EQ(load_tensor(dir.path / "t.bin"), t);
  EXPECT_THROW(load_tensor(dir.path / "none.bin"), LoadError);
}

TEST(Checkpoint, RoundTripRestoresEveryTensorExactly) {
  TempDir dir("strf_ckpt_roundtrip");
  const NetworkSpec spec = NetworkSpec::toy(BlockVariant::P3DC, true, 6);
  Network<float> a(spec, 1);
  perturb(a, 0.125f);
  save_checkpoint(a, dir.path);
  Network<float> b(spec, 2);
  load_checkpoint(b, dir.path);
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].var.value(), pb[i].var.value()) << pa[i].name;
  const auto ba = a.buffers(), bb = b.buffers();
  for (std::size_t i = 0; i < ba.size(); ++i) EXPECT_EQ(*ba[i].tensor, *bb[i].tensor) << ba[i].name;
}

TEST(Checkpoint, StrfUnitsShareOneFile) {
  TempDir dir("strf_ckpt_manifest");
  Network<float> net(NetworkSpec::toy(BlockVariant::P3DC, true, 6), 1);
  save_checkpoint(net, dir.path);
  const auto entries = read_checkpoint_manifest(dir.path);
  std::map<std::string, std::vector<std::size_t>> strf_offsets;
  for (const auto& e : entries)
    if (e.name.find(".strf.") != std::string::npos) strf_offsets[e.file].push_back(e.offset);
  ASSERT_EQ(strf_offsets.size(), 2u);
  for (const auto& [file, offsets] : strf_offsets) {
    ASSERT_EQ(offsets.size(), 4u);
    EXPECT_EQ(offsets[0], 0u);
    EXPECT_LT(offsets[0], offsets[1]);
    EXPECT_LT(offsets[2], offsets[3]);
  }
}

TEST(Checkpoint, MismatchedSpecIsLoadError) {
  TempDir dir("strf_ckpt_mismatch");
  Network<float> a(NetworkSpec::toy(BlockVariant::P3DC, true, 6), 1);
  save_checkpoint(a, dir.path);
  Network<float> wider(NetworkSpec::toy(BlockVariant::P3DC, true, 7), 1);
  EXPECT_THROW(load_checkpoint(wider, dir.path), LoadError);
  Network<float> no_strf(NetworkSpec::toy(BlockVariant::P3DC, false, 6), 1);
  EXPECT_THROW(load_checkpoint(no_strf, dir.path), LoadError);
  Network<float> c2d(NetworkSpec::toy(BlockVariant::C2D, false, 6), 1);
  EXPECT_THROW(load_checkpoint(c2d, dir.path), LoadError);
}

TEST(Checkpoint, MissingOrTruncatedFilesAreLoadErrors) {
  TempDir dir("strf_ckpt_missing");
  const NetworkSpec spec = NetworkSpec::toy(BlockVariant::P3DC, true, 6);
  Network<float> a(spec, 1);
  EXPECT_THROW(load_checkpoint(a, dir.path), LoadError);
  save_checkpoint(a, dir.path);
  fs::resize_file(dir.path / "classifier.weight.bin", 10);
  EXPECT_THROW(load_checkpoint(a, dir.path), LoadError);
}
