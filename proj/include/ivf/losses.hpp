#pragma once

#include <array>
#include <cmath>
#include <string>

#include "ivf/model.hpp"
#include "ivf/nn.hpp"
#include "ivf/tensor.hpp"

// The composite training objective: fusion fidelity, intervention consistency
// with a gate regularizer, and modal necessity. Every term returns its value
// in double and accumulates analytic gradients (+=) into optional outputs.
namespace ivf {

enum class NecMode { as_written, maximize_margin };

inline NecMode nec_mode_from_string(const std::string& s) {
  if (s == "as_written") return NecMode::as_written;
  if (s == "maximize_margin") return NecMode::maximize_margin;
  throw ConfigError("unknown nec_mode: " + s + " (expected as_written|maximize_margin)");
}
inline const char* nec_mode_name(NecMode m) {
  return m == NecMode::as_written ? "as_written" : "maximize_margin";
}

struct LossWeights {
  double alpha = 0.1;
  double beta = 0.05;
  double lambda1 = 1.0;
  double eta = 0.3;
  NecMode nec_mode = NecMode::as_written;
  double nec_margin = 0.1;
};

struct LossBreakdown {
  double total = 0, fidelity = 0, inv = 0, nec = 0, reg = 0;
  LossWeights weights;
};

namespace detail {

template <class T>
inline T sgn(T x) {
  return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
}

inline int reflect_idx(int i, int n) {
  if (i < 0) return -1 - i;       // -1 -> 0
  if (i >= n) return 2 * n - 1 - i;  // n -> n-1
  return i;
}

}  // namespace detail

// 5-point Laplacian with symmetric (edge-repeating) borders.
template <class T>
TensorT<T> laplacian(const TensorT<T>& img) {
  TensorT<T> out(img.c, img.h, img.w);
  const int H = img.h, W = img.w;
  for (int c = 0; c < img.c; ++c)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const T up = img.at(c, detail::reflect_idx(i - 1, H), j);
        const T dn = img.at(c, detail::reflect_idx(i + 1, H), j);
        const T lf = img.at(c, i, detail::reflect_idx(j - 1, W));
        const T rt = img.at(c, i, detail::reflect_idx(j + 1, W));
        out.at(c, i, j) = up + dn + lf + rt - T(4) * img.at(c, i, j);
      }
  return out;
}

// Adjoint of `laplacian` (scatter form; the border reflection makes the
// operator non-symmetric).
template <class T>
void laplacian_adjoint_add(const TensorT<T>& g, TensorT<T>& dx) {
  const int H = g.h, W = g.w;
  for (int c = 0; c < g.c; ++c)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const T v = g.at(c, i, j);
        dx.at(c, detail::reflect_idx(i - 1, H), j) += v;
        dx.at(c, detail::reflect_idx(i + 1, H), j) += v;
        dx.at(c, i, detail::reflect_idx(j - 1, W)) += v;
        dx.at(c, i, detail::reflect_idx(j + 1, W)) += v;
        dx.at(c, i, j) -= T(4) * v;
      }
}

// mean |a - b|; accumulates d/da and d/db.
template <class T>
double l1_mean(const TensorT<T>& a, const TensorT<T>& b, TensorT<T>* da = nullptr, TensorT<T>* db = nullptr) {
  check_same_shape(a, b, "l1_mean");
  const double inv_n = 1.0 / static_cast<double>(a.size());
  double s = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const T d = a.v[i] - b.v[i];
    s += std::abs(static_cast<double>(d));
    const T g = static_cast<T>(inv_n) * detail::sgn(d);
    if (da) da->v[i] += g;
    if (db) db->v[i] -= g;
  }
  return s * inv_n;
}

// Eq-style fidelity: mean|I_f - I_vi| + mean|I_f - I_ir|
//                    + lambda1 * mean|lap(I_f) - max(lap(I_vi), lap(I_ir))|.
template <class T>
double fidelity_loss(const TensorT<T>& fused, const TensorT<T>& vi, const TensorT<T>& ir, double lambda1,
                     TensorT<T>* d_fused = nullptr) {
  check_same_shape(fused, vi, "fidelity_loss");
  check_same_shape(fused, ir, "fidelity_loss");
  double loss = l1_mean(fused, vi, d_fused, static_cast<TensorT<T>*>(nullptr));
  loss += l1_mean(fused, ir, d_fused, static_cast<TensorT<T>*>(nullptr));

  const TensorT<T> lf = laplacian(fused);
  const TensorT<T> lv = laplacian(vi);
  const TensorT<T> li = laplacian(ir);
  const double inv_n = 1.0 / static_cast<double>(fused.size());
  double grad_term = 0;
  TensorT<T> dlf;
  if (d_fused) dlf = TensorT<T>(fused.c, fused.h, fused.w);
  for (size_t i = 0; i < lf.v.size(); ++i) {
    const T target = std::max(lv.v[i], li.v[i]);
    const T d = lf.v[i] - target;
    grad_term += std::abs(static_cast<double>(d));
    if (d_fused) dlf.v[i] = static_cast<T>(lambda1 * inv_n) * detail::sgn(d);
  }
  if (d_fused) laplacian_adjoint_add(dlf, *d_fused);
  return loss + lambda1 * grad_term * inv_n;
}

// Gbar = (G1 + up(G2) + up(G3)) / 3 at G1's resolution.
template <class T>
TensorT<T> aggregate_gates(const TensorT<T>& g1, const TensorT<T>& g2, const TensorT<T>& g3) {
  if (g1.c != 1 || g2.c != 1 || g3.c != 1) throw ShapeError("aggregate_gates: gates must be [1,h,w]");
  if (g2.h * 2 != g1.h || g2.w * 2 != g1.w || g3.h * 4 != g1.h || g3.w * 4 != g1.w)
    throw ShapeError("aggregate_gates: incompatible scale ratios " + g1.shape_str() + ", " + g2.shape_str() +
                     ", " + g3.shape_str());
  const TensorT<T> u2 = nn::bilinear_resize(g2, g1.h, g1.w);
  const TensorT<T> u3 = nn::bilinear_resize(g3, g1.h, g1.w);
  TensorT<T> out(1, g1.h, g1.w);
  for (size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = (g1.v[i] + u2.v[i] + u3.v[i]) / T(3);
  return out;
}

template <class T>
void aggregate_gates_backward(const TensorT<T>& d_gbar, std::array<TensorT<T>, 3>& d_gates) {
  TensorT<T> third(1, d_gbar.h, d_gbar.w);
  for (size_t i = 0; i < third.v.size(); ++i) third.v[i] = d_gbar.v[i] / T(3);
  for (size_t i = 0; i < third.v.size(); ++i) d_gates[0].v[i] += third.v[i];
  nn::bilinear_resize_backward(third, d_gates[1].h, d_gates[1].w, d_gates[1]);
  nn::bilinear_resize_backward(third, d_gates[2].h, d_gates[2].w, d_gates[2]);
}

// R(Gbar) = |mean(Gbar) - eta| - H(Gbar), H the entropy of the spatially
// normalized gate distribution p = g / sum(g), natural log, p log p := 0 at 0.
template <class T>
double gate_regularizer(const TensorT<T>& gbar, double eta, TensorT<T>* d_gbar = nullptr) {
  const size_t n = gbar.size();
  if (n == 0) throw ShapeError("gate_regularizer: empty gate");
  double sum = 0, mean = 0;
  for (T x : gbar.v) sum += static_cast<double>(x);
  if (sum <= 0) throw NumericError("gate_regularizer: gate sums to zero");
  mean = sum / static_cast<double>(n);

  // T_sum = sum g_i ln g_i;  H = ln S - T_sum / S
  double t_sum = 0;
  for (T x : gbar.v) {
    const double g = static_cast<double>(x);
    if (g > 0) t_sum += g * std::log(g);
  }
  const double entropy = std::log(sum) - t_sum / sum;
  const double mean_term = std::abs(mean - eta);
  if (d_gbar) {
    const double dmean = detail::sgn(mean - eta) / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
      const double g = static_cast<double>(gbar.v[i]);
      const double lg = g > 0 ? std::log(g) : 0.0;
      // d(-H)/dg_i = (ln g_i - T_sum/S) / S
      d_gbar->v[i] += static_cast<T>(dmean + (lg - t_sum / sum) / sum);
    }
  }
  return mean_term - entropy;
}

// L_inv = sum_{j in {comp, random}} mean|(I_j - I_f) * Gbar| + R(Gbar).
template <class T>
double intervention_consistency_loss(const TensorT<T>& fused, const TensorT<T>& fused_comp,
                                     const TensorT<T>& fused_random, const TensorT<T>& gbar, double eta,
                                     TensorT<T>* d_fused = nullptr, TensorT<T>* d_comp = nullptr,
                                     TensorT<T>* d_random = nullptr, TensorT<T>* d_gbar = nullptr) {
  check_same_shape(fused, fused_comp, "intervention_consistency_loss");
  check_same_shape(fused, fused_random, "intervention_consistency_loss");
  check_same_shape(fused, gbar, "intervention_consistency_loss");
  const double inv_n = 1.0 / static_cast<double>(fused.size());
  double loss = 0;
  auto term = [&](const TensorT<T>& ij, TensorT<T>* d_ij) {
    for (size_t i = 0; i < fused.v.size(); ++i) {
      const T r = (ij.v[i] - fused.v[i]) * gbar.v[i];
      loss += std::abs(static_cast<double>(r)) * inv_n;
      const T s = detail::sgn(r);
      const T gn = static_cast<T>(inv_n);
      if (d_ij) d_ij->v[i] += gn * s * gbar.v[i];
      if (d_fused) d_fused->v[i] -= gn * s * gbar.v[i];
      if (d_gbar) d_gbar->v[i] += gn * s * (ij.v[i] - fused.v[i]);
    }
  };
  term(fused_comp, d_comp);
  term(fused_random, d_random);
  loss += gate_regularizer(gbar, eta, d_gbar);
  return loss;
}

// as_written: mean|I_f - I_f^{-ir}| + mean|I_f - I_f^{-vi}| (the literal
// equation). maximize_margin: hinge sum max(0, m - d) over the same two
// distances, the prose reading that pushes single-modal outputs away.
template <class T>
double modal_necessity_loss(const TensorT<T>& fused, const TensorT<T>& drop_ir, const TensorT<T>& drop_vi,
                            NecMode mode, double margin, TensorT<T>* d_fused = nullptr,
                            TensorT<T>* d_drop_ir = nullptr, TensorT<T>* d_drop_vi = nullptr) {
  check_same_shape(fused, drop_ir, "modal_necessity_loss");
  check_same_shape(fused, drop_vi, "modal_necessity_loss");
  if (mode == NecMode::as_written) {
    double loss = l1_mean(fused, drop_ir, d_fused, d_drop_ir);
    loss += l1_mean(fused, drop_vi, d_fused, d_drop_vi);
    return loss;
  }
  // hinge: per dropout branch, d = mean|I_f - I_j|, contribute max(0, m - d)
  double loss = 0;
  auto branch = [&](const TensorT<T>& ij, TensorT<T>* d_ij) {
    TensorT<T> df(fused.c, fused.h, fused.w), dj(fused.c, fused.h, fused.w);
    const double d = l1_mean(fused, ij, &df, &dj);
    if (d < margin) {
      loss += margin - d;
      if (d_fused)
        for (size_t i = 0; i < df.v.size(); ++i) d_fused->v[i] -= df.v[i];
      if (d_ij)
        for (size_t i = 0; i < dj.v.size(); ++i) d_ij->v[i] -= dj.v[i];
    }
  };
  branch(drop_ir, d_drop_ir);
  branch(drop_vi, d_drop_vi);
  return loss;
}

// Gradients of the full objective w.r.t. the five pass outputs and the
// baseline gates.
template <class T>
struct BundleGrads {
  TensorT<T> d_baseline, d_comp, d_random, d_drop_ir, d_drop_vi;
  std::array<TensorT<T>, 3> d_gates;

  void init_like(const FusionBundleT<T>& b) {
    auto zero_like = [](const TensorT<T>& t) { return TensorT<T>(t.c, t.h, t.w); };
    d_baseline = zero_like(b.baseline);
    d_comp = zero_like(b.comp);
    d_random = zero_like(b.random);
    d_drop_ir = zero_like(b.drop_ir);
    d_drop_vi = zero_like(b.drop_vi);
    for (int k = 0; k < 3; ++k) d_gates[k] = zero_like(b.gates_baseline[k]);
  }
};

// L = L_f + alpha L_inv + beta L_nec, with Gbar aggregated from the baseline
// pass gates.
template <class T>
LossBreakdown total_loss(const FusionBundleT<T>& bundle, const TensorT<T>& vi_luma, const TensorT<T>& ir,
                         const LossWeights& w, BundleGrads<T>* grads = nullptr) {
  LossBreakdown out;
  out.weights = w;

  TensorT<T>* d_base = grads ? &grads->d_baseline : nullptr;
  // fidelity (gradient scale 1)
  out.fidelity = fidelity_loss(bundle.baseline, vi_luma, ir, w.lambda1, d_base);

  // consistency on a temporary gradient set, scaled by alpha when folded in
  const TensorT<T> gbar =
      aggregate_gates(bundle.gates_baseline[0], bundle.gates_baseline[1], bundle.gates_baseline[2]);
  TensorT<T> d_gbar;
  out.reg = gate_regularizer(gbar, w.eta);  // reported separately for the log
  if (grads) {
    d_gbar = TensorT<T>(gbar.c, gbar.h, gbar.w);
    TensorT<T> d_f(bundle.baseline.c, bundle.baseline.h, bundle.baseline.w);
    TensorT<T> d_c(bundle.comp.c, bundle.comp.h, bundle.comp.w);
    TensorT<T> d_r(bundle.random.c, bundle.random.h, bundle.random.w);
    out.inv = intervention_consistency_loss(bundle.baseline, bundle.comp, bundle.random, gbar, w.eta, &d_f,
                                            &d_c, &d_r, &d_gbar);
    const T a = static_cast<T>(w.alpha);
    for (size_t i = 0; i < d_f.v.size(); ++i) grads->d_baseline.v[i] += a * d_f.v[i];
    for (size_t i = 0; i < d_c.v.size(); ++i) grads->d_comp.v[i] += a * d_c.v[i];
    for (size_t i = 0; i < d_r.v.size(); ++i) grads->d_random.v[i] += a * d_r.v[i];
    for (auto& x : d_gbar.v) x *= a;
    aggregate_gates_backward(d_gbar, grads->d_gates);
  } else {
    out.inv = intervention_consistency_loss(bundle.baseline, bundle.comp, bundle.random, gbar, w.eta);
  }

  if (grads) {
    TensorT<T> d_f(bundle.baseline.c, bundle.baseline.h, bundle.baseline.w);
    TensorT<T> d_i(bundle.drop_ir.c, bundle.drop_ir.h, bundle.drop_ir.w);
    TensorT<T> d_v(bundle.drop_vi.c, bundle.drop_vi.h, bundle.drop_vi.w);
    out.nec = modal_necessity_loss(bundle.baseline, bundle.drop_ir, bundle.drop_vi, w.nec_mode, w.nec_margin,
                                   &d_f, &d_i, &d_v);
    const T b = static_cast<T>(w.beta);
    for (size_t i = 0; i < d_f.v.size(); ++i) grads->d_baseline.v[i] += b * d_f.v[i];
    for (size_t i = 0; i < d_i.v.size(); ++i) grads->d_drop_ir.v[i] += b * d_i.v[i];
    for (size_t i = 0; i < d_v.v.size(); ++i) grads->d_drop_vi.v[i] += b * d_v.v[i];
  } else {
    out.nec = modal_necessity_loss(bundle.baseline, bundle.drop_ir, bundle.drop_vi, w.nec_mode, w.nec_margin);
  }

  out.total = out.fidelity + w.alpha * out.inv + w.beta * out.nec;
  return out;
}

}  // namespace ivf
