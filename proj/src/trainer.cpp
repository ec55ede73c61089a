#include "ivf/trainer.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "ivf/checkpoint.hpp"
#include "ivf/masks.hpp"
#include "ivf/model_io.hpp"

namespace fs = std::filesystem;

namespace ivf {

namespace {

// Static slot partition; results are reduced in slot order afterwards, so the
// outcome does not depend on the worker count.
void parallel_slots(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int workers = std::min(threads, n);
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

struct Adam {
  double lr, beta1, beta2, eps;
  int64_t t = 0;
  std::vector<AlignedVec<float>> m, v;

  void init(FusionModel& model) {
    model.visit_layers([&](const std::string&, nn::ConvLayer<float>& l) {
      m.emplace_back(l.w.size(), 0.f);
      v.emplace_back(l.w.size(), 0.f);
      m.emplace_back(l.b.size(), 0.f);
      v.emplace_back(l.b.size(), 0.f);
    });
  }

  void step(FusionModel& model, ModelGrads<float>& g) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    size_t idx = 0;
    std::vector<AlignedVec<float>*> grads;
    g.visit([&](nn::ConvGrad<float>& cg) {
      grads.push_back(&cg.dw);
      grads.push_back(&cg.db);
    });
    model.visit_layers([&](const std::string&, nn::ConvLayer<float>& l) {
      for (AlignedVec<float>* arr : {&l.w, &l.b}) {
        AlignedVec<float>& grad = *grads[idx];
        AlignedVec<float>& mi = m[idx];
        AlignedVec<float>& vi = v[idx];
        for (size_t i = 0; i < arr->size(); ++i) {
          const double gx = grad[i];
          mi[i] = static_cast<float>(beta1 * mi[i] + (1.0 - beta1) * gx);
          vi[i] = static_cast<float>(beta2 * vi[i] + (1.0 - beta2) * gx * gx);
          const double mhat = mi[i] / bc1;
          const double vhat = vi[i] / bc2;
          (*arr)[i] = static_cast<float>((*arr)[i] - lr * mhat / (std::sqrt(vhat) + eps));
        }
        ++idx;
      }
    });
  }
};

struct SlotResult {
  ModelGrads<float> grads;
  LossBreakdown loss;
};

// One training sample: patch + intervention set + five passes + loss +
// backward. Gradients land in `out.grads`, scaled by 1/batch later.
void run_slot(const FusionModel& model, const std::vector<ImagePair>& pairs, const TrainConfig& cfg,
              int64_t step0, int slot, SlotResult& out) {
  Rng rng(derive_seed(cfg.seed, {0xBA7C4ULL, static_cast<uint64_t>(step0), static_cast<uint64_t>(slot)}));
  const int pair_idx = rng.uniform_int(0, static_cast<int>(pairs.size()) - 1);
  const PatchPair patch = sample_patch(pairs[pair_idx], cfg.patch, rng, cfg.flips);

  InterventionConfig icfg;
  icfg.block_size = cfg.block_size;
  icfg.count_min = cfg.mask_count_min;
  icfg.count_max = cfg.mask_count_max;
  const InterventionSet iset = make_intervention_set(
      cfg.patch, cfg.patch, icfg,
      derive_seed(cfg.seed, {0x5E7ULL, static_cast<uint64_t>(step0), static_cast<uint64_t>(slot)}));

  auto traces = std::make_unique<std::array<ForwardTrace<float>, 5>>();
  const FusionBundle bundle =
      model.forward_with_interventions(patch.infrared, patch.visible_luma, iset, traces.get());

  BundleGrads<float> bg;
  bg.init_like(bundle);
  out.loss = total_loss(bundle, patch.visible_luma, patch.infrared, cfg.loss_weights(), &bg);

  out.grads.init_like(model);
  model.backward((*traces)[0], bg.d_baseline, &bg.d_gates, out.grads);
  model.backward((*traces)[1], bg.d_comp, nullptr, out.grads);
  model.backward((*traces)[2], bg.d_random, nullptr, out.grads);
  model.backward((*traces)[3], bg.d_drop_ir, nullptr, out.grads);
  model.backward((*traces)[4], bg.d_drop_vi, nullptr, out.grads);
}

std::string loss_line(int64_t step, const LossBreakdown& l) {
  std::ostringstream ss;
  ss.precision(10);
  ss << step << ' ' << l.fidelity << ' ' << l.inv << ' ' << l.nec << ' ' << l.reg << ' ' << l.total;
  return ss.str();
}

nlohmann::json train_config_json(const TrainConfig& cfg) {
  nlohmann::json j;
  for (const auto& [k, v] : train_config_to_map(cfg)) j[k] = v;
  return j;
}

void save_train_state(const std::string& path, const FusionModel& model, const Adam& adam,
                      int64_t next_step, int epoch, double best_psnr, const TrainConfig& cfg) {
  Checkpoint ck;
  checkpoint_put_model(ck, model);
  nlohmann::json meta = nlohmann::json::parse(ck.meta_json);
  meta["train_config"] = train_config_json(cfg);
  meta["state"] = {{"next_step", next_step},
                   {"epoch", epoch},
                   {"best_val_psnr", best_psnr},
                   {"adam_t", adam.t}};
  ck.meta_json = meta.dump();
  for (size_t i = 0; i < adam.m.size(); ++i) {
    ck.put("adam.m." + std::to_string(i), {static_cast<int64_t>(adam.m[i].size())},
           std::vector<float>(adam.m[i].begin(), adam.m[i].end()));
    ck.put("adam.v." + std::to_string(i), {static_cast<int64_t>(adam.v[i].size())},
           std::vector<float>(adam.v[i].begin(), adam.v[i].end()));
  }
  ck.save(path);
}

}  // namespace

int resolve_threads(int requested, bool deterministic) {
  if (deterministic) return 1;
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

metrics::MetricReport validate(const FusionModel& model, const Dataset& val_set, int threads,
                               const std::string& checkpoint_id) {
  if (val_set.empty()) throw IoError("validation dataset is empty: " + val_set.id());
  const int tn = resolve_threads(threads, false);
  std::vector<Tensor> fused(val_set.size());
  parallel_slots(static_cast<int>(val_set.size()), tn, [&](int i) {
    const ImagePair pair = val_set.load(static_cast<size_t>(i));
    fused[i] = fuse_image(model, rgb_to_luma(pair.visible), pair.infrared);
  });
  return metrics::evaluate_dataset(
      val_set, [&](size_t i) { return fused[i]; }, checkpoint_id);
}

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                  const std::string& resume_state) {
  cfg.validate();
  if (train_set.empty()) throw IoError("training dataset is empty: " + train_set.id());
  if (val_set.empty()) throw IoError("validation dataset is empty: " + val_set.id());

  fs::create_directories(cfg.out_dir);
  persist_config(cfg, (fs::path(cfg.out_dir) / "config_resolved.txt").string());

  FusionModel model(cfg.model_config());
  Adam adam{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  int64_t start_step = 0;
  int start_epoch = 0;
  double best_psnr = -1.0;

  if (resume_state.empty()) {
    model.init_weights(cfg.seed);
    adam.init(model);
  } else {
    const Checkpoint ck = Checkpoint::load(resume_state);
    model = checkpoint_get_model(ck);
    adam.init(model);
    const nlohmann::json meta = nlohmann::json::parse(ck.meta_json);
    const auto& st = meta.at("state");
    start_step = st.at("next_step");
    start_epoch = st.at("epoch");
    best_psnr = st.at("best_val_psnr");
    adam.t = st.at("adam_t");
    for (size_t i = 0; i < adam.m.size(); ++i) {
      const auto& mi = ck.get("adam.m." + std::to_string(i));
      const auto& vi = ck.get("adam.v." + std::to_string(i));
      std::copy(mi.begin(), mi.end(), adam.m[i].begin());
      std::copy(vi.begin(), vi.end(), adam.v[i].begin());
    }
  }

  // Preload the training pairs once; patches are sampled in memory. The
  // validation set keeps its own loader so the access counters stay separate.
  std::vector<ImagePair> pairs;
  pairs.reserve(train_set.size());
  for (size_t i = 0; i < train_set.size(); ++i) pairs.push_back(train_set.load(i));
  for (const auto& p : pairs)
    if (p.height() < cfg.patch || p.width() < cfg.patch)
      throw SizeError("training pair " + p.id + " smaller than patch " + std::to_string(cfg.patch));

  const int threads = resolve_threads(cfg.threads, cfg.deterministic);
  const int64_t steps_per_epoch =
      std::max<int64_t>(1, static_cast<int64_t>(train_set.size()) / cfg.batch_size);

  std::ofstream loss_out(fs::path(cfg.out_dir) / "loss_log.txt",
                         resume_state.empty() ? std::ios::trunc : std::ios::app);
  std::ofstream events_out(fs::path(cfg.out_dir) / "events.log",
                           resume_state.empty() ? std::ios::trunc : std::ios::app);
  std::ofstream val_out(fs::path(cfg.out_dir) / "val_metrics.csv",
                        resume_state.empty() ? std::ios::trunc : std::ios::app);
  if (resume_state.empty()) val_out << "epoch,AG,SF,PSNR,CC,Qabf\n";

  TrainResult result;
  result.best_val_psnr = best_psnr;
  const fs::path out(cfg.out_dir);
  result.last_checkpoint = (out / "checkpoint_last.ckpt").string();
  result.best_checkpoint = (out / "checkpoint_best.ckpt").string();
  result.state_path = (out / "train_state.ckpt").string();

  ModelGrads<float> batch_grads;
  batch_grads.init_like(model);
  std::vector<SlotResult> slots(cfg.batch_size);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    for (int64_t se = 0; se < steps_per_epoch; ++se) {
      const int64_t step0 = epoch * steps_per_epoch + se;
      if (step0 < start_step) continue;  // resume: skip completed steps

      parallel_slots(cfg.batch_size, threads,
                     [&](int slot) { run_slot(model, pairs, cfg, step0, slot, slots[slot]); });

      // Fixed-order reduction keeps results identical for any worker count.
      batch_grads.zero();
      LossBreakdown avg;
      avg.weights = cfg.loss_weights();
      const float scale = 1.f / static_cast<float>(cfg.batch_size);
      for (int slot = 0; slot < cfg.batch_size; ++slot) {
        batch_grads.add_scaled(slots[slot].grads, scale);
        avg.fidelity += slots[slot].loss.fidelity;
        avg.inv += slots[slot].loss.inv;
        avg.nec += slots[slot].loss.nec;
        avg.reg += slots[slot].loss.reg;
        slots[slot].grads = ModelGrads<float>();  // release slot memory
      }
      avg.fidelity /= cfg.batch_size;
      avg.inv /= cfg.batch_size;
      avg.nec /= cfg.batch_size;
      avg.reg /= cfg.batch_size;
      avg.total = avg.fidelity + avg.weights.alpha * avg.inv + avg.weights.beta * avg.nec;

      const int64_t step = step0 + 1;  // 1-based in logs
      if (!std::isfinite(avg.total))
        throw NumericError("non-finite loss at step " + std::to_string(step) + ": " + loss_line(step, avg));

      const double gnorm = std::sqrt(batch_grads.squared_norm());
      if (cfg.clip_norm > 0 && gnorm > cfg.clip_norm) {
        const float s = static_cast<float>(cfg.clip_norm / gnorm);
        batch_grads.visit([&](nn::ConvGrad<float>& g) {
          for (auto& x : g.dw) x *= s;
          for (auto& x : g.db) x *= s;
        });
        events_out << "step " << step << " grad_clip norm " << gnorm << " -> " << cfg.clip_norm << "\n";
        events_out.flush();
      }

      adam.step(model, batch_grads);
      loss_out << loss_line(step, avg) << "\n";
      loss_out.flush();
      result.loss_log.push_back({step, avg});
      result.steps = step;
    }

    // End of epoch: validation + checkpoints.
    if ((epoch + 1) % cfg.val_interval == 0 || epoch + 1 == cfg.epochs) {
      const metrics::MetricReport rep = validate(model, val_set, threads, result.last_checkpoint);
      val_out << epoch + 1 << ',' << rep.mean.ag << ',' << rep.mean.sf << ',' << rep.mean.psnr << ','
              << rep.mean.cc << ',' << rep.mean.qabf << "\n";
      val_out.flush();
      if (rep.mean.psnr > result.best_val_psnr) {
        result.best_val_psnr = rep.mean.psnr;
        Checkpoint ck;
        checkpoint_put_model(ck, model);
        nlohmann::json meta = nlohmann::json::parse(ck.meta_json);
        meta["train_config"] = train_config_json(cfg);
        meta["epoch"] = epoch + 1;
        meta["val_psnr"] = rep.mean.psnr;
        ck.meta_json = meta.dump();
        ck.save(result.best_checkpoint);
      }
    }
    {
      Checkpoint ck;
      checkpoint_put_model(ck, model);
      nlohmann::json meta = nlohmann::json::parse(ck.meta_json);
      meta["train_config"] = train_config_json(cfg);
      meta["epoch"] = epoch + 1;
      ck.meta_json = meta.dump();
      ck.save(result.last_checkpoint);
      if (cfg.keep_epoch_checkpoints) {
        std::ostringstream name;
        name << "checkpoint_epoch_" << std::setfill('0') << std::setw(4) << epoch + 1 << ".ckpt";
        ck.save((out / name.str()).string());
      }
    }
    save_train_state(result.state_path, model, adam, (epoch + 1) * steps_per_epoch, epoch + 1,
                     result.best_val_psnr, cfg);
  }

  return result;
}

}  // namespace ivf
