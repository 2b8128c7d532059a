#include "strf/checkpoint.hpp"

#include "strf/tensor_io.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace strf {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestName = "manifest.txt";
constexpr const char* kManifestHeader = "# strf checkpoint 1";

std::string dims_text(const Dims& d) {
  std::string s;
  for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "x" : "") + std::to_string(d[i]);
  return s;
}

Dims parse_dims(const std::string& s, const std::string& where) {
  Dims d;
  std::stringstream ss(s);
  std::string part;
  try {
    while (std::getline(ss, part, 'x')) d.push_back(std::stoul(part));
  } catch (const std::logic_error&) {
    throw LoadError(where + ": malformed dims '" + s + "'");
  }
  if (d.empty()) throw LoadError(where + ": empty dims");
  return d;
}

// Parameter names of an STRF unit end in ".strf.<branch>".
std::string strf_unit_of(const std::string& name) {
  const auto pos = name.rfind(".strf.");
  return pos == std::string::npos ? std::string{} : name.substr(0, pos + 5);
}

}  // namespace

void save_checkpoint(Network<float>& net, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw StorageError("cannot create checkpoint directory " + dir.string());
  std::vector<CheckpointEntry> entries;
  std::map<std::string, std::size_t> unit_offsets;

  const auto write_one = [&](const std::string& name, const TensorF& t, bool shared_file) {
    const std::string unit = shared_file ? strf_unit_of(name) : std::string{};
    const std::string file = (unit.empty() ? name : unit) + ".bin";
    std::size_t& offset = unit_offsets[file];
    std::ofstream out(dir / file, std::ios::binary | (offset ? std::ios::app : std::ios::trunc));
    if (!out) throw StorageError("cannot write " + (dir / file).string());
    write_tensor(out, t);
    if (!out) throw StorageError("write failed for " + (dir / file).string());
    entries.push_back({name, t.dims(), file, offset});
    offset += tensor_record_size(t.dims());
  };
  for (const auto& p : net.parameters()) write_one(p.name, p.var.value(), true);
  for (const auto& b : net.buffers()) write_one(b.name, *b.tensor, false);

  std::ofstream manifest(dir / kManifestName);
  if (!manifest) throw StorageError("cannot write " + (dir / kManifestName).string());
  manifest << kManifestHeader << '\n';
  for (const auto& e : entries)
    manifest << e.name << '\t' << dims_text(e.dims) << '\t' << e.file << '\t' << e.offset << '\n';
  if (!manifest) throw StorageError("write failed for checkpoint manifest");
}

std::vector<CheckpointEntry> read_checkpoint_manifest(const fs::path& dir) {
  const fs::path path = dir / kManifestName;
  std::ifstream in(path);
  if (!in) throw LoadError("missing checkpoint manifest " + path.string());
  std::vector<CheckpointEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    std::stringstream ss(line);
    CheckpointEntry e;
    std::string dims, offset;
    if (!std::getline(ss, e.name, '\t') || !std::getline(ss, dims, '\t') ||
        !std::getline(ss, e.file, '\t') || !std::getline(ss, offset))
      throw LoadError(where + ": expected name, dims, file, offset");
    e.dims = parse_dims(dims, where);
    try {
      e.offset = std::stoull(offset);
    } catch (const std::logic_error&) {
      throw LoadError(where + ": malformed offset");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void load_checkpoint(Network<float>& net, const fs::path& dir) {
  std::map<std::string, CheckpointEntry> by_name;
  for (auto& e : read_checkpoint_manifest(dir)) by_name.emplace(e.name, std::move(e));

  const auto read_into = [&](const std::string& name, TensorF& target) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw LoadError("checkpoint " + dir.string() + " lacks tensor " + name);
    const CheckpointEntry& e = it->second;
    if (e.dims != target.dims())
      throw LoadError("checkpoint tensor " + name + " has dims " + to_string(e.dims) +
                      ", network expects " + to_string(target.dims()));
    const fs::path file = dir / e.file;
    std::ifstream in(file, std::ios::binary);
    if (!in) throw LoadError("missing checkpoint file " + file.string());
    in.seekg(std::streamoff(e.offset));
    TensorF t = read_tensor(in, file.string());
    if (t.dims() != target.dims()) throw LoadError(file.string() + ": record dims disagree with manifest");
    target = std::move(t);
    by_name.erase(it);
  };
  for (auto& p : net.parameters()) read_into(p.name, p.var.mutable_value());
  for (auto& b : net.buffers()) read_into(b.name, *b.tensor);
  if (!by_name.empty())
    throw LoadError("checkpoint " + dir.string() + " holds tensor " + by_name.begin()->first +
                    " unknown to the network");
}

}  // namespace strf
