#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <vector>

#include "ivf/rng.hpp"
#include "ivf/tensor.hpp"

namespace ivf {

// Registered visible/infrared pair, values in [0,1].
struct ImagePair {
  Tensor visible;   // [3,H,W]
  Tensor infrared;  // [1,H,W]
  std::string id;

  int height() const { return visible.h; }
  int width() const { return visible.w; }
};

struct LumaChroma {
  Tensor luma;    // [1,H,W]
  Tensor chroma;  // [2,H,W] (Cb, Cr with 0.5 offset)
};

struct PatchPair {
  Tensor visible_luma;  // [1,P,P]
  Tensor infrared;      // [1,P,P]
  int patch = 0;
};

// BT.601 YCbCr on the [0,1] range.
LumaChroma rgb_to_luma_chroma(const Tensor& rgb);
Tensor rgb_to_luma(const Tensor& rgb);
// Inverse BT.601; output clamped to [0,1].
Tensor chroma_reinject(const Tensor& fused_luma, const Tensor& chroma);

// Decodes PNG/JPEG/BMP (8-bit) to [C,H,W] float in [0,1]; C is 1 or 3.
Tensor load_image(const std::string& path);
ImagePair load_image_pair(const std::string& visible_path, const std::string& infrared_path,
                          const std::string& id = "");

void save_gray_png(const std::string& path, const Tensor& img);  // [1,H,W]
void save_rgb_png(const std::string& path, const Tensor& img);   // [3,H,W]

// Identical crop window and flips on both modalities; visible reduced to luma.
PatchPair sample_patch(const ImagePair& pair, int patch, Rng& rng, bool enable_flips = true);

// A dataset is two sibling directories ir/ and vi/ with matching filenames, or
// a manifest with lines `<id>\t<vi_path>\t<ir_path>`.
class Dataset {
 public:
  struct Entry {
    std::string id, vi_path, ir_path;
  };

  static Dataset scan_directory(const std::string& root);
  static Dataset from_manifest(const std::string& manifest_path);
  static Dataset open(const std::string& root_or_manifest);  // manifest file overrides scanning
  static Dataset from_entries(std::vector<Entry> entries, std::string id);

  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const Entry& entry(size_t i) const { return entries_.at(i); }
  const std::string& id() const { return id_; }

  ImagePair load(size_t i) const;

  // Number of load() calls served; used to assert train/validation separation.
  uint64_t access_count() const { return counter_->load(); }

 private:
  std::vector<Entry> entries_;
  std::string id_;
  std::shared_ptr<std::atomic<uint64_t>> counter_ = std::make_shared<std::atomic<uint64_t>>(0);
};

}  // namespace ivf
