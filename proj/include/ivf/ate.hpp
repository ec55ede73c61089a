#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ivf/image.hpp"
#include "ivf/masks.hpp"
#include "ivf/model.hpp"

namespace ivf::ate {

// Interventions indexed as in the analysis: 0 baseline, 1 complementary
// masking, 2 random masking, 3 infrared dropout, 4 visible dropout.
constexpr int kBaseline = 0, kComplementary = 1, kRandomMask = 2, kDropIr = 3, kDropVi = 4;
const char* intervention_name(int t);

enum class Quality { psnr, cc };
const char* quality_name(Quality q);

// Q(fused, vi_luma, ir) on the 8-bit scale.
using QualityFn = std::function<double(const Tensor& fused, const Tensor& vi_luma, const Tensor& ir)>;
QualityFn standard_quality(Quality q);

struct AteRow {
  int t = 0;
  std::string quality;
  uint64_t seed = 0;
  double ate = 0;            // mean of deltas
  double baseline_mean = 0;  // mean baseline quality
  std::vector<double> deltas;
  size_t n() const { return deltas.size(); }
};

// Sample-average estimator: mean_i [ Q(F(I_i)) - Q(F(M_t(I_i))) ]. Masks are
// derived from (seed, t, image id), so per-sample deltas are reproducible
// from (checkpoint, id, seed, t) alone.
AteRow estimate_ate(const FusionModel& model, const Dataset& dataset, int t, const QualityFn& q,
                    const std::string& quality_label, uint64_t seed, const InterventionConfig& cfg,
                    int threads = 0);

inline AteRow estimate_ate(const FusionModel& model, const Dataset& dataset, int t, Quality q, uint64_t seed,
                           const InterventionConfig& cfg, int threads = 0) {
  return estimate_ate(model, dataset, t, standard_quality(q), quality_name(q), seed, cfg, threads);
}

struct AteSuiteRow {
  int t = 0;
  std::string quality;
  double ate_mean = 0;  // across seeds
  double ate_std = 0;
  std::vector<AteRow> per_seed;
};

struct AteReport {
  std::vector<AteSuiteRow> rows;  // 4 interventions x 2 metrics
  double baseline_psnr_mean = 0;
  double baseline_cc_mean = 0;
  std::string dataset_id, checkpoint_id;

  std::string to_csv() const;
  std::string to_json() const;
};

AteReport run_ate_suite(const FusionModel& model, const Dataset& dataset, const std::vector<uint64_t>& seeds,
                        const InterventionConfig& cfg, int threads = 0);

// Simple grouped bar chart of the suite (one group per intervention).
void write_ate_chart_png(const AteReport& report, const std::string& path);

}  // namespace ivf::ate
