#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ivf/rng.hpp"
#include "ivf/tensor.hpp"

namespace ivf {

enum class MaskKind { complementary_vi, complementary_ir, random_shared, dropout };

const char* mask_kind_name(MaskKind k);

// Binary keep map assembled from axis-aligned square blocks (keep=1 outside
// the occluded union). Dropout masks occlude everything.
struct InterventionMask {
  int h = 0, w = 0;
  int block_size = 0;
  MaskKind kind = MaskKind::random_shared;
  std::vector<std::pair<int, int>> blocks;  // (row, col) origins
  std::vector<uint8_t> keep;                // h*w, 1 = keep

  static InterventionMask all_keep(int h, int w, MaskKind kind);
  static InterventionMask dropout_mask(int h, int w);

  size_t occluded_count() const;
  double occluded_fraction() const { return static_cast<double>(occluded_count()) / (static_cast<double>(h) * w); }
  bool occludes(int y, int x) const { return keep[static_cast<size_t>(y) * w + x] == 0; }
};

struct InterventionConfig {
  int block_size = 16;
  int count_min = 1;
  int count_max = 6;
  int max_attempts = 1000;  // rejection-sampling cap per block
};

// n ~ uniform{count_min..count_max} blocks, origins uniform with blocks fully
// in bounds; blocks within one mask may overlap (union semantics).
InterventionMask sample_block_mask(int h, int w, int block_size, Rng& rng,
                                   MaskKind kind = MaskKind::random_shared, int count_min = 1,
                                   int count_max = 6);

// Two masks whose occluded regions are pixel-disjoint across the pair; each
// side independently has count_min..count_max blocks. Placement failure after
// max_attempts rejections throws SamplingError.
std::pair<InterventionMask, InterventionMask> sample_complementary_masks(int h, int w,
                                                                         const InterventionConfig& cfg,
                                                                         Rng& rng);

// image * keep, broadcast over channels.
template <class T>
TensorT<T> apply_mask(const TensorT<T>& image, const InterventionMask& mask) {
  if (image.h != mask.h || image.w != mask.w)
    throw ShapeError("apply_mask: image " + image.shape_str() + " vs mask [" + std::to_string(mask.h) + "," +
                     std::to_string(mask.w) + "]");
  TensorT<T> out(image.c, image.h, image.w);
  const size_t n = image.plane();
  for (int c = 0; c < image.c; ++c) {
    const T* src = image.data() + c * n;
    T* dst = out.data() + c * n;
    for (size_t i = 0; i < n; ++i) dst[i] = mask.keep[i] ? src[i] : T(0);
  }
  return out;
}

// One complementary pair plus one shared random mask, all derived from `seed`.
struct InterventionSet {
  InterventionMask comp_vi, comp_ir, random_shared;
  uint64_t seed = 0;
};

InterventionSet make_intervention_set(int h, int w, const InterventionConfig& cfg, uint64_t seed);

}  // namespace ivf
