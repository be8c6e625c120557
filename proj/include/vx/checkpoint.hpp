#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "vx/nn.hpp"
#include "vx/tensor.hpp"

namespace vx {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Versioned binary tensor container: magic "VXST", u32 format version, a
// manifest of (name, shape, blob offset) records, then raw little-endian f64
// blobs. Round-trips bit-exactly. Entry order is insertion order, so writes
// are deterministic.
class Checkpoint {
 public:
  static constexpr uint32_t kVersion = 1;

  struct Entry {
    std::string name;
    Dims shape;
    std::vector<double> data;
  };

  void put(std::string name, Dims shape, std::vector<double> data);
  void put(const std::string& name, const Tensor& t);
  void put_scalar(const std::string& name, double value);

  bool has(const std::string& name) const;
  const Entry& get(const std::string& name) const;
  double get_scalar(const std::string& name) const;
  double get_scalar_or(const std::string& name, double fallback) const;
  Tensor tensor(const std::string& name, bool requires_grad = false) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  // module parameter helpers: store under "param/<name>", restore in place
  void put_params(const NamedParams& params);
  void load_params_into(NamedParams params) const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace vx
