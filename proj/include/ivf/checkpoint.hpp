#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ivf/common.hpp"

namespace ivf {

// Versioned binary container of named float32 arrays plus a JSON metadata
// blob (config echo, counters). Layout:
//   8 bytes  magic "IVFCKPT\0"
//   u32 LE   format version (1)
//   u64 LE   metadata length
//   bytes    metadata JSON; its "tensors" list carries name/dtype/shape/offset
//   bytes    raw row-major little-endian tensor data
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  std::string meta_json;  // free-form metadata (configs, step counters, ...)
  std::map<std::string, std::pair<std::vector<int64_t>, std::vector<float>>> tensors;

  void put(const std::string& name, std::vector<int64_t> shape, std::vector<float> data);
  const std::vector<float>& get(const std::string& name) const;
  const std::vector<int64_t>& shape(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) > 0; }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace ivf
