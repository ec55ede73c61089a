#include "ivf/masks.hpp"

namespace ivf {

const char* mask_kind_name(MaskKind k) {
  switch (k) {
    case MaskKind::complementary_vi:
      return "complementary_vi";
    case MaskKind::complementary_ir:
      return "complementary_ir";
    case MaskKind::random_shared:
      return "random_shared";
    case MaskKind::dropout:
      return "dropout";
  }
  return "?";
}

InterventionMask InterventionMask::all_keep(int h, int w, MaskKind kind) {
  InterventionMask m;
  m.h = h;
  m.w = w;
  m.kind = kind;
  m.keep.assign(static_cast<size_t>(h) * w, 1);
  return m;
}

InterventionMask InterventionMask::dropout_mask(int h, int w) {
  InterventionMask m;
  m.h = h;
  m.w = w;
  m.kind = MaskKind::dropout;
  m.keep.assign(static_cast<size_t>(h) * w, 0);
  return m;
}

size_t InterventionMask::occluded_count() const {
  size_t n = 0;
  for (uint8_t k : keep) n += k == 0;
  return n;
}

namespace {

void check_dims(int h, int w, int block_size) {
  if (block_size < 1) throw SizeError("block_size must be >= 1");
  if (h < block_size || w < block_size)
    throw SizeError("map " + std::to_string(h) + "x" + std::to_string(w) + " smaller than block " +
                    std::to_string(block_size));
}

void stamp_block(InterventionMask& m, int r, int c) {
  m.blocks.emplace_back(r, c);
  for (int y = r; y < r + m.block_size; ++y)
    for (int x = c; x < c + m.block_size; ++x) m.keep[static_cast<size_t>(y) * m.w + x] = 0;
}

bool block_hits_occlusion(const InterventionMask& other, int r, int c, int bs) {
  for (int y = r; y < r + bs; ++y)
    for (int x = c; x < c + bs; ++x)
      if (other.occludes(y, x)) return true;
  return false;
}

}  // namespace

InterventionMask sample_block_mask(int h, int w, int block_size, Rng& rng, MaskKind kind, int count_min,
                                   int count_max) {
  check_dims(h, w, block_size);
  InterventionMask m = InterventionMask::all_keep(h, w, kind);
  m.block_size = block_size;
  const int n = rng.uniform_int(count_min, count_max);
  for (int i = 0; i < n; ++i) {
    const int r = rng.uniform_int(0, h - block_size);
    const int c = rng.uniform_int(0, w - block_size);
    stamp_block(m, r, c);
  }
  return m;
}

std::pair<InterventionMask, InterventionMask> sample_complementary_masks(int h, int w,
                                                                         const InterventionConfig& cfg,
                                                                         Rng& rng) {
  check_dims(h, w, cfg.block_size);
  InterventionMask mv = InterventionMask::all_keep(h, w, MaskKind::complementary_vi);
  InterventionMask mi = InterventionMask::all_keep(h, w, MaskKind::complementary_ir);
  mv.block_size = mi.block_size = cfg.block_size;

  const int nv = rng.uniform_int(cfg.count_min, cfg.count_max);
  const int ni = rng.uniform_int(cfg.count_min, cfg.count_max);
  for (int i = 0; i < nv; ++i)
    stamp_block(mv, rng.uniform_int(0, h - cfg.block_size), rng.uniform_int(0, w - cfg.block_size));

  // Infrared blocks must avoid the visible mask's occlusion; overlaps among
  // infrared blocks themselves are allowed.
  for (int i = 0; i < ni; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
      const int r = rng.uniform_int(0, h - cfg.block_size);
      const int c = rng.uniform_int(0, w - cfg.block_size);
      if (!block_hits_occlusion(mv, r, c, cfg.block_size)) {
        stamp_block(mi, r, c);
        placed = true;
        break;
      }
    }
    if (!placed)
      throw SamplingError("complementary mask placement failed after " + std::to_string(cfg.max_attempts) +
                          " attempts on " + std::to_string(h) + "x" + std::to_string(w));
  }
  return {mv, mi};
}

InterventionSet make_intervention_set(int h, int w, const InterventionConfig& cfg, uint64_t seed) {
  InterventionSet set;
  set.seed = seed;
  Rng rng_comp(derive_seed(seed, {0xC0117ULL}));
  Rng rng_rand(derive_seed(seed, {0x5A4DULL}));
  auto [mv, mi] = sample_complementary_masks(h, w, cfg, rng_comp);
  set.comp_vi = std::move(mv);
  set.comp_ir = std::move(mi);
  set.random_shared =
      sample_block_mask(h, w, cfg.block_size, rng_rand, MaskKind::random_shared, cfg.count_min, cfg.count_max);
  return set;
}

}  // namespace ivf
