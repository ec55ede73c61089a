#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ivf/common.hpp"
#include "ivf/losses.hpp"
#include "ivf/model.hpp"

namespace ivf {

// Run configuration. Numeric defaults follow the reference training recipe;
// resolution order is defaults < config file < command-line flags.
struct TrainConfig {
  int epochs = 50;
  int batch_size = 16;
  double learning_rate = 1e-4;
  int patch = 256;

  double alpha = 0.1;
  double beta = 0.05;
  double lambda1 = 1.0;
  double eta = 0.3;
  std::string nec_mode = "as_written";
  double nec_margin = 0.1;

  int block_size = 16;
  int mask_count_min = 1;
  int mask_count_max = 6;

  int c1 = 32, c2 = 64, c3 = 128;
  int pool_r = 8;
  int attention_heads = 1;
  std::string pool_op = "avg";
  double leaky_slope = 0.2;

  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 10.0;

  uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency
  bool deterministic = false;
  bool flips = true;
  int val_interval = 1;  // epochs between validations
  bool keep_epoch_checkpoints = false;

  std::string data_dir;
  std::string val_dir;
  std::string out_dir = "runs/default";

  ModelConfig model_config() const;
  LossWeights loss_weights() const;
  void validate() const;
};

// Key registry shared by the config-file parser, flag overrides, printing and
// the checkpoint echo.
std::vector<std::string> train_config_keys();
std::map<std::string, std::string> train_config_to_map(const TrainConfig& c);
void train_config_set(TrainConfig& c, const std::string& key, const std::string& value);
TrainConfig train_config_from_map(const std::map<std::string, std::string>& kv,
                                  TrainConfig base = TrainConfig());

// Flat `key = value` file; '#' starts a comment; unknown keys are hard errors.
std::map<std::string, std::string> parse_config_file(const std::string& path);

std::string format_config(const TrainConfig& c);
void persist_config(const TrainConfig& c, const std::string& path);

}  // namespace ivf
