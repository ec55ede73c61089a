#pragma once

#include <nlohmann/json.hpp>

#include "ivf/checkpoint.hpp"
#include "ivf/model.hpp"

namespace ivf {

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"c1", c.c1},
          {"c2", c.c2},
          {"c3", c.c3},
          {"pool_r", c.pool_r},
          {"attention_heads", c.attention_heads},
          {"pool_op", c.pool_op == nn::PoolOp::avg ? "avg" : "max"},
          {"leaky_slope", c.leaky_slope},
          {"activation", c.activation},
          {"norm", c.norm}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.c1 = j.at("c1");
  c.c2 = j.at("c2");
  c.c3 = j.at("c3");
  c.pool_r = j.at("pool_r");
  c.attention_heads = j.at("attention_heads");
  const std::string pool = j.at("pool_op");
  if (pool != "avg" && pool != "max") throw ConfigError("unknown pool_op: " + pool);
  c.pool_op = pool == "avg" ? nn::PoolOp::avg : nn::PoolOp::max;
  c.leaky_slope = j.at("leaky_slope");
  c.activation = j.at("activation");
  c.norm = j.at("norm");
  c.validate();
  return c;
}

// Adds the model weights (prefix "model.") and its config echo to `ck`.
inline void checkpoint_put_model(Checkpoint& ck, const FusionModel& model) {
  nlohmann::json meta =
      ck.meta_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(ck.meta_json);
  meta["model_config"] = model_config_to_json(model.cfg);
  ck.meta_json = meta.dump();
  model.visit_layers([&](const std::string& name, const nn::ConvLayer<float>& l) {
    ck.put("model." + name + ".w", {l.out_c, static_cast<int64_t>(l.in_c) * l.k * l.k},
           std::vector<float>(l.w.begin(), l.w.end()));
    ck.put("model." + name + ".b", {l.out_c}, std::vector<float>(l.b.begin(), l.b.end()));
  });
}

inline FusionModel checkpoint_get_model(const Checkpoint& ck) {
  const nlohmann::json meta = nlohmann::json::parse(ck.meta_json);
  if (!meta.contains("model_config")) throw IoError("checkpoint has no model_config");
  FusionModel model(model_config_from_json(meta.at("model_config")));
  model.visit_layers([&](const std::string& name, nn::ConvLayer<float>& l) {
    const auto& w = ck.get("model." + name + ".w");
    const auto& b = ck.get("model." + name + ".b");
    if (w.size() != l.w.size() || b.size() != l.b.size())
      throw ShapeError("checkpoint tensor size mismatch for " + name);
    std::copy(w.begin(), w.end(), l.w.begin());
    std::copy(b.begin(), b.end(), l.b.begin());
  });
  return model;
}

inline void save_model_checkpoint(const std::string& path, const FusionModel& model) {
  Checkpoint ck;
  checkpoint_put_model(ck, model);
  ck.save(path);
}

inline FusionModel load_model_checkpoint(const std::string& path) {
  return checkpoint_get_model(Checkpoint::load(path));
}

}  // namespace ivf
