#pragma once

#include <string>
#include <vector>

#include "ivf/config.hpp"
#include "ivf/image.hpp"
#include "ivf/losses.hpp"
#include "ivf/metrics.hpp"
#include "ivf/model.hpp"

namespace ivf {

struct StepRecord {
  int64_t step = 0;  // 1-based
  LossBreakdown loss;
};

struct TrainResult {
  std::string last_checkpoint;
  std::string best_checkpoint;
  std::string state_path;
  std::vector<StepRecord> loss_log;
  double best_val_psnr = 0;
  int64_t steps = 0;
};

// Runs the intervention-training loop: per batch slot, sample a patch pair
// and an intervention set, run the five passes, evaluate the composite loss
// and accumulate gradients; Adam update per step; validation, last/best
// checkpointing and a loss log per the configured cadence. `resume_state`
// restores a previously saved optimizer state for bit-identical continuation.
TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                  const std::string& resume_state = "");

// Fuses every pair with the frozen model and computes the five metrics.
metrics::MetricReport validate(const FusionModel& model, const Dataset& val_set, int threads = 0,
                               const std::string& checkpoint_id = "");

// Effective worker count (0 = hardware concurrency).
int resolve_threads(int requested, bool deterministic);

}  // namespace ivf
