#include "ivf/ate.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ivf/metrics.hpp"
#include "ivf/trainer.hpp"

namespace ivf::ate {

const char* intervention_name(int t) {
  switch (t) {
    case kBaseline:
      return "baseline";
    case kComplementary:
      return "complementary";
    case kRandomMask:
      return "random";
    case kDropIr:
      return "ir_dropout";
    case kDropVi:
      return "vi_dropout";
  }
  throw ConfigError("unknown intervention t=" + std::to_string(t));
}

const char* quality_name(Quality q) { return q == Quality::psnr ? "PSNR" : "CC"; }

QualityFn standard_quality(Quality q) {
  return [q](const Tensor& fused, const Tensor& vi_luma, const Tensor& ir) {
    const DTensor f = metrics::to_eight_bit_scale(fused);
    const DTensor a = metrics::to_eight_bit_scale(vi_luma);
    const DTensor b = metrics::to_eight_bit_scale(ir);
    return q == Quality::psnr ? metrics::psnr(f, a, b) : metrics::cc(f, a, b);
  };
}

namespace {

void parallel_indices(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int workers = std::min(threads, n);
  for (int t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

// Applies intervention t to the (luma, ir) pair at full resolution.
std::pair<Tensor, Tensor> intervene(const Tensor& vi_luma, const Tensor& ir, int t,
                                    const InterventionConfig& cfg, uint64_t mask_seed) {
  switch (t) {
    case kBaseline:
      return {vi_luma, ir};
    case kComplementary: {
      Rng rng(mask_seed);
      auto [mv, mi] = sample_complementary_masks(vi_luma.h, vi_luma.w, cfg, rng);
      return {apply_mask(vi_luma, mv), apply_mask(ir, mi)};
    }
    case kRandomMask: {
      Rng rng(mask_seed);
      const InterventionMask m = sample_block_mask(vi_luma.h, vi_luma.w, cfg.block_size, rng,
                                                   MaskKind::random_shared, cfg.count_min, cfg.count_max);
      return {apply_mask(vi_luma, m), apply_mask(ir, m)};
    }
    case kDropIr:
      return {vi_luma, Tensor(1, ir.h, ir.w)};
    case kDropVi:
      return {Tensor(1, vi_luma.h, vi_luma.w), ir};
  }
  throw ConfigError("unknown intervention t=" + std::to_string(t));
}

}  // namespace

AteRow estimate_ate(const FusionModel& model, const Dataset& dataset, int t, const QualityFn& q,
                    const std::string& quality_label, uint64_t seed, const InterventionConfig& cfg,
                    int threads) {
  if (dataset.empty()) throw IoError("estimate_ate: empty dataset " + dataset.id());
  intervention_name(t);  // validates t
  AteRow row;
  row.t = t;
  row.quality = quality_label;
  row.seed = seed;
  row.deltas.resize(dataset.size());
  std::vector<double> base_q(dataset.size());
  const int tn = resolve_threads(threads, false);
  parallel_indices(static_cast<int>(dataset.size()), tn, [&](int i) {
    const ImagePair pair = dataset.load(static_cast<size_t>(i));
    const Tensor vi_luma = rgb_to_luma(pair.visible);
    const Tensor baseline = fuse_image(model, vi_luma, pair.infrared);
    const double q0 = q(baseline, vi_luma, pair.infrared);
    const uint64_t mask_seed = derive_seed(seed, {static_cast<uint64_t>(t), fnv1a64(pair.id)});
    const auto [vi_t, ir_t] = intervene(vi_luma, pair.infrared, t, cfg, mask_seed);
    const Tensor fused_t = fuse_image(model, vi_t, ir_t);
    // quality is always scored against the unperturbed sources
    const double qt = q(fused_t, vi_luma, pair.infrared);
    base_q[i] = q0;
    row.deltas[i] = q0 - qt;
  });
  double ds = 0, bs = 0;
  for (size_t i = 0; i < row.deltas.size(); ++i) {
    ds += row.deltas[i];
    bs += base_q[i];
  }
  row.ate = ds / static_cast<double>(row.deltas.size());
  row.baseline_mean = bs / static_cast<double>(base_q.size());
  return row;
}

AteReport run_ate_suite(const FusionModel& model, const Dataset& dataset, const std::vector<uint64_t>& seeds,
                        const InterventionConfig& cfg, int threads) {
  if (seeds.empty()) throw ConfigError("run_ate_suite: need at least one seed");
  AteReport rep;
  rep.dataset_id = dataset.id();
  for (const Quality q : {Quality::psnr, Quality::cc}) {
    for (int t = kComplementary; t <= kDropVi; ++t) {
      AteSuiteRow row;
      row.t = t;
      row.quality = quality_name(q);
      for (uint64_t s : seeds) row.per_seed.push_back(estimate_ate(model, dataset, t, q, s, cfg, threads));
      double m = 0;
      for (const auto& r : row.per_seed) m += r.ate;
      m /= static_cast<double>(row.per_seed.size());
      double var = 0;
      for (const auto& r : row.per_seed) var += (r.ate - m) * (r.ate - m);
      row.ate_mean = m;
      row.ate_std = row.per_seed.size() > 1 ? std::sqrt(var / (row.per_seed.size() - 1)) : 0.0;
      rep.rows.push_back(std::move(row));
    }
  }
  rep.baseline_psnr_mean = rep.rows.front().per_seed.front().baseline_mean;
  for (const auto& r : rep.rows)
    if (r.quality == std::string("CC")) {
      rep.baseline_cc_mean = r.per_seed.front().baseline_mean;
      break;
    }
  return rep;
}

std::string AteReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "t,intervention,quality,ate_mean,ate_std,n_seeds,n_samples\n";
  for (const auto& r : rows)
    os << r.t << ',' << intervention_name(r.t) << ',' << r.quality << ',' << r.ate_mean << ',' << r.ate_std
       << ',' << r.per_seed.size() << ',' << (r.per_seed.empty() ? 0 : r.per_seed.front().n()) << "\n";
  return os.str();
}

std::string AteReport::to_json() const {
  nlohmann::json j;
  j["metadata"] = {{"dataset", dataset_id},
                   {"checkpoint", checkpoint_id},
                   {"baseline_psnr_mean", baseline_psnr_mean},
                   {"baseline_cc_mean", baseline_cc_mean}};
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row{{"t", r.t},
                       {"intervention", intervention_name(r.t)},
                       {"quality", r.quality},
                       {"ate_mean", r.ate_mean},
                       {"ate_std", r.ate_std}};
    row["per_seed"] = nlohmann::json::array();
    for (const auto& s : r.per_seed)
      row["per_seed"].push_back({{"seed", s.seed},
                                 {"ate", s.ate},
                                 {"baseline_mean", s.baseline_mean},
                                 {"deltas", s.deltas}});
    j["rows"].push_back(std::move(row));
  }
  return j.dump(2);
}

void write_ate_chart_png(const AteReport& report, const std::string& path) {
  const int W = 900, H = 480, margin = 70;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));

  double max_abs = 1e-9;
  for (const auto& r : report.rows) max_abs = std::max(max_abs, std::fabs(r.ate_mean) + r.ate_std);

  const int zero_y = H - margin - (H - 2 * margin) / 2;
  auto value_y = [&](double v) {
    return zero_y - static_cast<int>(v / max_abs * (H - 2 * margin) / 2.0);
  };
  cv::line(img, {margin, zero_y}, {W - margin / 2, zero_y}, {0, 0, 0}, 1);
  cv::line(img, {margin, margin / 2}, {margin, H - margin / 2}, {0, 0, 0}, 1);

  const cv::Scalar colors[2] = {{180, 119, 31}, {14, 127, 255}};  // BGR
  const int groups = 4, group_w = (W - 2 * margin) / groups;
  for (int g = 0; g < groups; ++g) {
    const int t = g + 1;
    int qi = 0;
    for (const auto& r : report.rows) {
      if (r.t != t) continue;
      const int bw = group_w / 3;
      const int x0 = margin + g * group_w + (qi + 0) * bw + bw / 2;
      const int y1 = value_y(r.ate_mean);
      cv::rectangle(img, {x0, std::min(zero_y, y1)}, {x0 + bw - 6, std::max(zero_y, y1)}, colors[qi % 2],
                    cv::FILLED);
      const int ye0 = value_y(r.ate_mean - r.ate_std), ye1 = value_y(r.ate_mean + r.ate_std);
      cv::line(img, {x0 + (bw - 6) / 2, ye0}, {x0 + (bw - 6) / 2, ye1}, {0, 0, 0}, 1);
      ++qi;
    }
    cv::putText(img, intervention_name(t), {margin + g * group_w + 8, H - margin / 3},
                cv::FONT_HERSHEY_SIMPLEX, 0.55, {0, 0, 0}, 1, cv::LINE_AA);
  }
  cv::putText(img, "ATE (PSNR left, CC right) with across-seed std", {margin, margin / 2 - 8},
              cv::FONT_HERSHEY_SIMPLEX, 0.6, {0, 0, 0}, 1, cv::LINE_AA);
  if (!cv::imwrite(path, img)) throw IoError("failed to write chart: " + path);
}

}  // namespace ivf::ate
