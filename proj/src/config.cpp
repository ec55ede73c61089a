#include "ivf/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

namespace ivf {

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.c1 = c1;
  m.c2 = c2;
  m.c3 = c3;
  m.pool_r = pool_r;
  m.attention_heads = attention_heads;
  if (pool_op != "avg" && pool_op != "max") throw ConfigError("pool_op must be avg or max");
  m.pool_op = pool_op == "avg" ? nn::PoolOp::avg : nn::PoolOp::max;
  m.leaky_slope = static_cast<float>(leaky_slope);
  m.validate();
  return m;
}

LossWeights TrainConfig::loss_weights() const {
  LossWeights w;
  w.alpha = alpha;
  w.beta = beta;
  w.lambda1 = lambda1;
  w.eta = eta;
  w.nec_mode = nec_mode_from_string(nec_mode);
  w.nec_margin = nec_margin;
  return w;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patch < 8 || patch % 4) throw ConfigError("patch must be a multiple of 4 and >= 8");
  if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
  if (mask_count_min < 1 || mask_count_max < mask_count_min)
    throw ConfigError("mask count range invalid");
  if (block_size < 1 || block_size > patch) throw ConfigError("block_size must be in [1, patch]");
  if (val_interval < 1) throw ConfigError("val_interval must be >= 1");
  model_config();   // validates channel/pool/head combination
  loss_weights();   // validates nec_mode
}

namespace {

struct Field {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

int parse_int(const std::string& k, const std::string& v) {
  try {
    size_t pos = 0;
    const int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key " + k + ": expected integer, got '" + v + "'");
  }
}

double parse_double(const std::string& k, const std::string& v) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key " + k + ": expected number, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& k, const std::string& v) {
  try {
    size_t pos = 0;
    const uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key " + k + ": expected unsigned integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& k, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key " + k + ": expected boolean, got '" + v + "'");
}

const std::vector<Field>& fields() {
  auto I = [](int TrainConfig::* m) {
    return std::pair{std::function<std::string(const TrainConfig&)>(
                         [m](const TrainConfig& c) { return std::to_string(c.*m); }),
                     std::function<void(TrainConfig&, const std::string&)>(
                         [m](TrainConfig& c, const std::string& v) { c.*m = parse_int("", v); })};
  };
  auto D = [](double TrainConfig::* m) {
    return std::pair{std::function<std::string(const TrainConfig&)>(
                         [m](const TrainConfig& c) { return fmt_double(c.*m); }),
                     std::function<void(TrainConfig&, const std::string&)>(
                         [m](TrainConfig& c, const std::string& v) { c.*m = parse_double("", v); })};
  };
  auto S = [](std::string TrainConfig::* m) {
    return std::pair{std::function<std::string(const TrainConfig&)>(
                         [m](const TrainConfig& c) { return c.*m; }),
                     std::function<void(TrainConfig&, const std::string&)>(
                         [m](TrainConfig& c, const std::string& v) { c.*m = v; })};
  };
  auto B = [](bool TrainConfig::* m) {
    return std::pair{std::function<std::string(const TrainConfig&)>(
                         [m](const TrainConfig& c) { return c.*m ? "true" : "false"; }),
                     std::function<void(TrainConfig&, const std::string&)>(
                         [m](TrainConfig& c, const std::string& v) { c.*m = parse_bool("", v); })};
  };
  static const std::vector<Field> kFields = [&] {
    std::vector<Field> f;
    auto add = [&f](const std::string& key, auto pair) { f.push_back({key, pair.first, pair.second}); };
    add("epochs", I(&TrainConfig::epochs));
    add("batch_size", I(&TrainConfig::batch_size));
    add("learning_rate", D(&TrainConfig::learning_rate));
    add("patch", I(&TrainConfig::patch));
    add("alpha", D(&TrainConfig::alpha));
    add("beta", D(&TrainConfig::beta));
    add("lambda1", D(&TrainConfig::lambda1));
    add("eta", D(&TrainConfig::eta));
    add("nec_mode", S(&TrainConfig::nec_mode));
    add("nec_margin", D(&TrainConfig::nec_margin));
    add("block_size", I(&TrainConfig::block_size));
    add("mask_count_min", I(&TrainConfig::mask_count_min));
    add("mask_count_max", I(&TrainConfig::mask_count_max));
    add("c1", I(&TrainConfig::c1));
    add("c2", I(&TrainConfig::c2));
    add("c3", I(&TrainConfig::c3));
    add("pool_r", I(&TrainConfig::pool_r));
    add("attention_heads", I(&TrainConfig::attention_heads));
    add("pool_op", S(&TrainConfig::pool_op));
    add("leaky_slope", D(&TrainConfig::leaky_slope));
    add("adam_beta1", D(&TrainConfig::adam_beta1));
    add("adam_beta2", D(&TrainConfig::adam_beta2));
    add("adam_eps", D(&TrainConfig::adam_eps));
    add("clip_norm", D(&TrainConfig::clip_norm));
    f.push_back({"seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
                 [](TrainConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); }});
    add("threads", I(&TrainConfig::threads));
    add("deterministic", B(&TrainConfig::deterministic));
    add("flips", B(&TrainConfig::flips));
    add("val_interval", I(&TrainConfig::val_interval));
    add("keep_epoch_checkpoints", B(&TrainConfig::keep_epoch_checkpoints));
    add("data_dir", S(&TrainConfig::data_dir));
    add("val_dir", S(&TrainConfig::val_dir));
    add("out_dir", S(&TrainConfig::out_dir));
    return f;
  }();
  return kFields;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key: " + key);
}

}  // namespace

std::vector<std::string> train_config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

std::map<std::string, std::string> train_config_to_map(const TrainConfig& c) {
  std::map<std::string, std::string> kv;
  for (const auto& f : fields()) kv[f.key] = f.get(c);
  return kv;
}

void train_config_set(TrainConfig& c, const std::string& key, const std::string& value) {
  const Field& f = find_field(key);  // throws on unknown key
  try {
    f.set(c, value);
  } catch (const ConfigError&) {
    throw ConfigError("config key '" + key + "': invalid value '" + value + "'");
  }
}

TrainConfig train_config_from_map(const std::map<std::string, std::string>& kv, TrainConfig base) {
  for (const auto& [k, v] : kv) train_config_set(base, k, v);
  return base;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected `key = value`");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    find_field(key);  // unknown keys are hard errors
    kv[key] = value;
  }
  return kv;
}

std::string format_config(const TrainConfig& c) {
  std::ostringstream ss;
  for (const auto& f : fields()) ss << f.key << " = " << f.get(c) << "\n";
  return ss.str();
}

void persist_config(const TrainConfig& c, const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write config to " + path);
  out << format_config(c);
}

}  // namespace ivf
