#include "ivf/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace ivf {

namespace {
constexpr char kMagic[8] = {'I', 'V', 'F', 'C', 'K', 'P', 'T', '\0'};
}

void Checkpoint::put(const std::string& name, std::vector<int64_t> shape, std::vector<float> data) {
  size_t n = 1;
  for (int64_t d : shape) n *= static_cast<size_t>(d);
  if (n != data.size())
    throw ShapeError("checkpoint tensor " + name + ": shape does not match data size");
  tensors[name] = {std::move(shape), std::move(data)};
}

const std::vector<float>& Checkpoint::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw IoError("checkpoint tensor missing: " + name);
  return it->second.second;
}

const std::vector<int64_t>& Checkpoint::shape(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw IoError("checkpoint tensor missing: " + name);
  return it->second.first;
}

void Checkpoint::save(const std::string& path) const {
  nlohmann::json meta;
  meta["meta"] = meta_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(meta_json);
  meta["tensors"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const uint64_t nbytes = t.second.size() * sizeof(float);
    meta["tensors"].push_back(
        {{"name", name}, {"dtype", "f32"}, {"shape", t.first}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string meta_str = meta.dump();

  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 8);
  const uint32_t version = kVersion;
  out.write(reinterpret_cast<const char*>(&version), 4);
  const uint64_t meta_len = meta_str.size();
  out.write(reinterpret_cast<const char*>(&meta_len), 8);
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  for (const auto& [name, t] : tensors)
    out.write(reinterpret_cast<const char*>(t.second.data()),
              static_cast<std::streamsize>(t.second.size() * sizeof(float)));
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a checkpoint file: " + path);
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  if (version != kVersion)
    throw IoError("checkpoint version mismatch in " + path + ": file has " + std::to_string(version) +
                  ", loader supports " + std::to_string(kVersion));
  uint64_t meta_len = 0;
  in.read(reinterpret_cast<char*>(&meta_len), 8);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw IoError("truncated checkpoint: " + path);
  const nlohmann::json meta = nlohmann::json::parse(meta_str);

  Checkpoint ck;
  ck.meta_json = meta.value("meta", nlohmann::json::object()).dump();
  for (const auto& t : meta.at("tensors")) {
    const std::string name = t.at("name");
    if (t.at("dtype") != "f32") throw IoError("unsupported dtype in checkpoint tensor " + name);
    std::vector<int64_t> shape = t.at("shape").get<std::vector<int64_t>>();
    const uint64_t nbytes = t.at("nbytes");
    std::vector<float> data(nbytes / sizeof(float));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(nbytes));
    if (!in) throw IoError("truncated checkpoint tensor " + name + " in " + path);
    ck.put(name, std::move(shape), std::move(data));
  }
  return ck;
}

}  // namespace ivf
