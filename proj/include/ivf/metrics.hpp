#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ivf/image.hpp"
#include "ivf/tensor.hpp"

// Fusion quality metrics on 8-bit-scale single-channel images (values in
// [0,255], double precision).
namespace ivf::metrics {

double ag(const DTensor& f);
double sf(const DTensor& f);
double psnr(const DTensor& f, const DTensor& a, const DTensor& b);
double cc(const DTensor& f, const DTensor& a, const DTensor& b);
double qabf(const DTensor& f, const DTensor& a, const DTensor& b);

// [0,1] float map -> [0,255] double map.
DTensor to_eight_bit_scale(const Tensor& t01);

struct MetricRow {
  std::string id;
  double ag = 0, sf = 0, psnr = 0, cc = 0, qabf = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;  // ordered by id
  MetricRow mean;               // id == "mean"
  std::string dataset_id, checkpoint_id, timestamp;

  std::string to_csv() const;
  std::string to_json() const;
  std::string to_table() const;
};

MetricRow compute_row(const std::string& id, const DTensor& fused, const DTensor& a, const DTensor& b);

// fuse(i) must return the fused [0,1] map for dataset entry i (model-backed
// or read from a directory of pre-fused images).
MetricReport evaluate_dataset(const Dataset& dataset, const std::function<Tensor(size_t)>& fuse,
                              const std::string& checkpoint_id);

}  // namespace ivf::metrics
