#pragma once

#include <array>
#include <memory>

#include "ivf/losses.hpp"
#include "ivf/masks.hpp"
#include "ivf/model.hpp"

namespace ivf {

// Evaluates the full training objective for one (vi, ir) patch under the
// given intervention set; optionally accumulates parameter gradients and the
// gradients w.r.t. the two raw inputs (mask multiplications included).
template <class T>
LossBreakdown training_objective(const FusionModelT<T>& model, const TensorT<T>& vi, const TensorT<T>& ir,
                                 const InterventionSet& iset, const LossWeights& w,
                                 ModelGrads<T>* grads = nullptr, TensorT<T>* d_vi = nullptr,
                                 TensorT<T>* d_ir = nullptr) {
  const bool need_grads = grads || d_vi || d_ir;
  auto traces =
      need_grads ? std::make_unique<std::array<ForwardTrace<T>, 5>>() : nullptr;
  const FusionBundleT<T> bundle = model.forward_with_interventions(ir, vi, iset, traces.get());

  if (!need_grads) return total_loss(bundle, vi, ir, w);

  BundleGrads<T> bg;
  bg.init_like(bundle);
  const LossBreakdown breakdown = total_loss(bundle, vi, ir, w, &bg);

  ModelGrads<T> local;
  ModelGrads<T>* g = grads;
  if (!g) {
    local.init_like(model);
    g = &local;
  }

  auto add_masked = [](TensorT<T>* acc, const TensorT<T>& d, const InterventionMask* m) {
    if (!acc) return;
    for (size_t i = 0; i < acc->v.size(); ++i)
      acc->v[i] += (m && !m->keep[i]) ? T(0) : d.v[i];
  };

  TensorT<T> dvi_pass(vi.c, vi.h, vi.w), dir_pass(ir.c, ir.h, ir.w);
  auto run_backward = [&](int pass, const TensorT<T>& d_out, const std::array<TensorT<T>, 3>* d_gates,
                          const InterventionMask* m_vi, const InterventionMask* m_ir, bool vi_active,
                          bool ir_active) {
    dvi_pass.zero();
    dir_pass.zero();
    model.backward((*traces)[pass], d_out, d_gates, *g, (d_vi && ir_active) || d_ir ? &dir_pass : nullptr,
                   d_vi ? &dvi_pass : nullptr);
    if (vi_active) add_masked(d_vi, dvi_pass, m_vi);
    if (ir_active) add_masked(d_ir, dir_pass, m_ir);
  };

  run_backward(0, bg.d_baseline, &bg.d_gates, nullptr, nullptr, true, true);
  run_backward(1, bg.d_comp, nullptr, &iset.comp_vi, &iset.comp_ir, true, true);
  run_backward(2, bg.d_random, nullptr, &iset.random_shared, &iset.random_shared, true, true);
  run_backward(3, bg.d_drop_ir, nullptr, nullptr, nullptr, true, false);   // ir input is zero
  run_backward(4, bg.d_drop_vi, nullptr, nullptr, nullptr, false, true);   // vi input is zero
  return breakdown;
}

}  // namespace ivf
