#include "vx/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace vx {

static_assert(std::endian::native == std::endian::little,
              "container format assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'V', 'X', 'S', 'T'};

template <typename T>
void write_pod(std::string& buf, T v) {
  const size_t at = buf.size();
  buf.resize(at + sizeof(T));
  std::memcpy(buf.data() + at, &v, sizeof(T));
}

template <typename T>
T read_pod(const std::string& buf, size_t& at) {
  if (at + sizeof(T) > buf.size()) throw CheckpointError("container truncated");
  T v;
  std::memcpy(&v, buf.data() + at, sizeof(T));
  at += sizeof(T);
  return v;
}

}  // namespace

void Checkpoint::put(std::string name, Dims shape, std::vector<double> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw CheckpointError("entry " + name + ": shape " + shape_str(shape) + " does not match " +
                          std::to_string(data.size()) + " values");
  }
  auto it = index_.find(name);
  if (it != index_.end()) {
    entries_[it->second].shape = std::move(shape);
    entries_[it->second].data = std::move(data);
    return;
  }
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(shape), std::move(data)});
}

void Checkpoint::put(const std::string& name, const Tensor& t) {
  put(name, t.shape(), t.data());
}

void Checkpoint::put_scalar(const std::string& name, double value) { put(name, {1}, {value}); }

bool Checkpoint::has(const std::string& name) const { return index_.count(name) > 0; }

const Checkpoint::Entry& Checkpoint::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw CheckpointError("container has no entry named " + name);
  return entries_[it->second];
}

double Checkpoint::get_scalar(const std::string& name) const {
  const Entry& e = get(name);
  if (e.data.size() != 1) {
    throw CheckpointError("entry " + name + " is not scalar: " + shape_str(e.shape));
  }
  return e.data[0];
}

double Checkpoint::get_scalar_or(const std::string& name, double fallback) const {
  return has(name) ? get_scalar(name) : fallback;
}

Tensor Checkpoint::tensor(const std::string& name, bool requires_grad) const {
  const Entry& e = get(name);
  return Tensor::from_vector(e.shape, e.data, requires_grad);
}

std::vector<std::string> Checkpoint::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const Entry& e : entries_) {
    if (e.name.rfind(prefix, 0) == 0) out.push_back(e.name);
  }
  return out;
}

void Checkpoint::save(const std::string& path) const {
  std::string manifest;
  std::string blobs;
  write_pod<uint64_t>(manifest, entries_.size());
  for (const Entry& e : entries_) {
    write_pod<uint32_t>(manifest, static_cast<uint32_t>(e.name.size()));
    manifest.append(e.name);
    write_pod<uint32_t>(manifest, static_cast<uint32_t>(e.shape.size()));
    for (int64_t d : e.shape) write_pod<int64_t>(manifest, d);
    write_pod<uint64_t>(manifest, blobs.size());
    const size_t at = blobs.size();
    blobs.resize(at + e.data.size() * sizeof(double));
    std::memcpy(blobs.data() + at, e.data.data(), e.data.size() * sizeof(double));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open " + path + " for writing");
  f.write(kMagic, 4);
  uint32_t ver = kVersion;
  f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  f.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  f.write(blobs.data(), static_cast<std::streamsize>(blobs.size()));
  if (!f) throw CheckpointError("short write to " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  size_t at = 0;
  if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw CheckpointError(path + ": not a VXST container (bad magic)");
  }
  at = 4;
  const uint32_t ver = read_pod<uint32_t>(buf, at);
  if (ver != kVersion) {
    throw CheckpointError(path + ": unsupported container version " + std::to_string(ver) +
                          " (expected " + std::to_string(kVersion) + ")");
  }
  const uint64_t count = read_pod<uint64_t>(buf, at);
  struct Rec {
    std::string name;
    Dims shape;
    uint64_t offset;
  };
  std::vector<Rec> recs;
  recs.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    Rec r;
    const uint32_t name_len = read_pod<uint32_t>(buf, at);
    if (at + name_len > buf.size()) throw CheckpointError("container truncated in manifest");
    r.name.assign(buf.data() + at, name_len);
    at += name_len;
    const uint32_t ndim = read_pod<uint32_t>(buf, at);
    r.shape.resize(ndim);
    for (uint32_t d = 0; d < ndim; ++d) r.shape[d] = read_pod<int64_t>(buf, at);
    r.offset = read_pod<uint64_t>(buf, at);
    recs.push_back(std::move(r));
  }
  const size_t blob_base = at;
  Checkpoint ck;
  for (Rec& r : recs) {
    const size_t n = static_cast<size_t>(shape_numel(r.shape));
    const size_t lo = blob_base + r.offset;
    if (lo + n * sizeof(double) > buf.size()) {
      throw CheckpointError("container truncated in blob for " + r.name);
    }
    std::vector<double> data(n);
    std::memcpy(data.data(), buf.data() + lo, n * sizeof(double));
    ck.put(std::move(r.name), std::move(r.shape), std::move(data));
  }
  return ck;
}

void Checkpoint::put_params(const NamedParams& params) {
  for (const auto& [name, t] : params) put("param/" + name, t);
}

void Checkpoint::load_params_into(NamedParams params) const {
  for (auto& [name, t] : params) {
    const Entry& e = get("param/" + name);
    if (e.shape != t.shape()) {
      throw CheckpointError("parameter " + name + ": stored shape " + shape_str(e.shape) +
                            " does not match model shape " + shape_str(t.shape()));
    }
    t.leaf_data() = e.data;
  }
}

}  // namespace vx
