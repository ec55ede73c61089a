#pragma once

#include <array>
#include <functional>
#include <string>

#include "ivf/masks.hpp"
#include "ivf/nn.hpp"

namespace ivf {

struct ModelConfig {
  int c1 = 32, c2 = 64, c3 = 128;
  int pool_r = 8;
  int attention_heads = 1;
  nn::PoolOp pool_op = nn::PoolOp::avg;
  float leaky_slope = 0.2f;
  std::string activation = "leaky_relu";  // descriptor; only leaky_relu is defined
  std::string norm = "none";

  void validate() const {
    if (c1 < 1 || c2 < 1 || c3 < 1) throw ConfigError("channels must be positive");
    if (pool_r < 1) throw ConfigError("pool_r must be >= 1");
    if (attention_heads < 1) throw ConfigError("attention_heads must be >= 1");
    if (c1 % attention_heads || c2 % attention_heads || c3 % attention_heads)
      throw ConfigError("channels must be divisible by attention_heads");
    if (activation != "leaky_relu") throw ConfigError("unsupported activation: " + activation);
    if (norm != "none") throw ConfigError("unsupported norm: " + norm);
  }
};

template <class T>
struct FeaturePyramidT {
  TensorT<T> theta1, theta2, theta3;  // strides 1, 2, 4
};

// Five forward outputs plus the baseline pass gates (scales 1..3).
template <class T>
struct FusionBundleT {
  TensorT<T> baseline, comp, random, drop_ir, drop_vi;  // [1,H,W]
  std::array<TensorT<T>, 3> gates_baseline;
};
using FusionBundle = FusionBundleT<float>;

// ---- forward traces (activation caches for backward) ----

template <class T>
struct EncTrace {
  TensorT<T> x;                      // encoder input [1,H,W]
  TensorT<T> y1a, y1b, y2a, y2b, y3a, y3b;  // post-activation outputs
};

template <class T>
struct CfiTrace {
  TensorT<T> q_vis, k_vis, v_vis, q_ir, k_ir, v_ir;
  TensorT<T> pk_vis, pv_vis, pk_ir, pv_ir;  // pooled K/V [C,r,r]
  std::vector<int> am_k_vis, am_v_vis, am_k_ir, am_v_ir;
  std::vector<T> probs_v2i, probs_i2v;
  TensorT<T> att_v2i, att_i2v;
  TensorT<T> theta_c, theta_l;
  TensorT<T> gate;  // [1,h,w], post-sigmoid
  TensorT<T> out;
};

template <class T>
struct DecTrace {
  TensorT<T> up3, cat2, m2y, d2y;
  TensorT<T> up2, cat1, m1y, d1y;
  TensorT<T> fused;  // [1,H,W] post-sigmoid
};

template <class T>
struct ForwardTrace {
  EncTrace<T> enc_ir, enc_vi;
  std::array<CfiTrace<T>, 3> cfi;
  DecTrace<T> dec;
};

template <class T>
struct ModelGrads;

// Siamese U-Net with a Causal Feature Integrator at every scale. The two
// encoders share one set of weights; gates come out of each CFI so the loss
// can weight intervention consistency by feature stability.
template <class T>
class FusionModelT {
 public:
  ModelConfig cfg;

  nn::ConvLayer<T> e1a, e1b, e2a, e2b, e3a, e3b;
  struct CfiParams {
    nn::ConvLayer<T> wq, wk, wv, gate;
  };
  std::array<CfiParams, 3> cfi;
  nn::ConvLayer<T> m2, d2, m1, d1, head;

  FusionModelT() : FusionModelT(ModelConfig{}) {}

  explicit FusionModelT(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    e1a.configure(1, cfg.c1, 3);
    e1b.configure(cfg.c1, cfg.c1, 3);
    e2a.configure(cfg.c1, cfg.c2, 3, 2);
    e2b.configure(cfg.c2, cfg.c2, 3);
    e3a.configure(cfg.c2, cfg.c3, 3, 2);
    e3b.configure(cfg.c3, cfg.c3, 3);
    const int cs[3] = {cfg.c1, cfg.c2, cfg.c3};
    for (int k = 0; k < 3; ++k) {
      cfi[k].wq.configure(cs[k], cs[k], 1);
      cfi[k].wk.configure(cs[k], cs[k], 1);
      cfi[k].wv.configure(cs[k], cs[k], 1);
      cfi[k].gate.configure(cs[k], 1, 3);
    }
    m2.configure(cfg.c3 + cfg.c2, cfg.c2, 1);
    d2.configure(cfg.c2, cfg.c2, 3);
    m1.configure(cfg.c2 + cfg.c1, cfg.c1, 1);
    d1.configure(cfg.c1, cfg.c1, 3);
    head.configure(cfg.c1, 1, 1);
  }

  void init_weights(uint64_t seed) {
    Rng rng(derive_seed(seed, {0x1417ULL}));
    for (auto* l : {&e1a, &e1b, &e2a, &e2b, &e3a, &e3b, &d2, &d1}) l->init(rng, nn::Init::conv_block);
    for (auto* l : {&m2, &m1}) l->init(rng, nn::Init::conv_block);
    for (auto& c : cfi) {
      c.wq.init(rng, nn::Init::projection);
      c.wk.init(rng, nn::Init::projection);
      c.wv.init(rng, nn::Init::projection);
      c.gate.init(rng, nn::Init::conv_block);
    }
    head.init(rng, nn::Init::projection);
  }

  // Visits every layer in a fixed order; the same order defines the parameter
  // list used by the optimizer and the checkpoint layout.
  template <class F>
  void visit_layers(F&& f) {
    f("enc.b1.conv1", e1a);
    f("enc.b1.conv2", e1b);
    f("enc.b2.conv1", e2a);
    f("enc.b2.conv2", e2b);
    f("enc.b3.conv1", e3a);
    f("enc.b3.conv2", e3b);
    for (int k = 0; k < 3; ++k) {
      const std::string p = "cfi" + std::to_string(k + 1) + ".";
      f(p + "wq", cfi[k].wq);
      f(p + "wk", cfi[k].wk);
      f(p + "wv", cfi[k].wv);
      f(p + "gate", cfi[k].gate);
    }
    f("dec.merge2", m2);
    f("dec.conv2", d2);
    f("dec.merge1", m1);
    f("dec.conv1", d1);
    f("dec.head", head);
  }
  template <class F>
  void visit_layers(F&& f) const {
    const_cast<FusionModelT*>(this)->visit_layers([&](const std::string& n, nn::ConvLayer<T>& l) {
      f(n, static_cast<const nn::ConvLayer<T>&>(l));
    });
  }

  size_t parameter_count() const {
    size_t n = 0;
    visit_layers([&](const std::string&, const nn::ConvLayer<T>& l) { n += l.weight_count(); });
    return n;
  }

  // ---- forward ----

  FeaturePyramidT<T> encode(const TensorT<T>& x, EncTrace<T>& t, nn::Workspace<T>& ws) const {
    if (x.c != 1) throw ShapeError("encode: expected [1,H,W], got " + x.shape_str());
    if (x.h % 4 || x.w % 4)
      throw ShapeError("encode: spatial dims must be multiples of 4, got " + x.shape_str());
    const T s = static_cast<T>(cfg.leaky_slope);
    t.x = x;
    t.y1a = nn::conv2d(x, e1a, ws);
    nn::leaky_relu_inplace(t.y1a, s);
    t.y1b = nn::conv2d(t.y1a, e1b, ws);
    nn::leaky_relu_inplace(t.y1b, s);
    t.y2a = nn::conv2d(t.y1b, e2a, ws);
    nn::leaky_relu_inplace(t.y2a, s);
    t.y2b = nn::conv2d(t.y2a, e2b, ws);
    nn::leaky_relu_inplace(t.y2b, s);
    t.y3a = nn::conv2d(t.y2b, e3a, ws);
    nn::leaky_relu_inplace(t.y3a, s);
    t.y3b = nn::conv2d(t.y3a, e3b, ws);
    nn::leaky_relu_inplace(t.y3b, s);
    return {t.y1b, t.y2b, t.y3b};
  }

  // CFI at scale k: bidirectional pooled cross-attention, gate, gated blend.
  TensorT<T> cfi_fuse(int k, const TensorT<T>& theta_vis, const TensorT<T>& theta_ir, CfiTrace<T>& t,
                      nn::Workspace<T>& ws) const {
    check_same_shape(theta_vis, theta_ir, "cfi_fuse");
    const CfiParams& p = cfi[k];
    const int r = cfg.pool_r;
    const bool mx = cfg.pool_op == nn::PoolOp::max;

    t.q_vis = nn::conv2d(theta_vis, p.wq, ws);
    t.k_vis = nn::conv2d(theta_vis, p.wk, ws);
    t.v_vis = nn::conv2d(theta_vis, p.wv, ws);
    t.q_ir = nn::conv2d(theta_ir, p.wq, ws);
    t.k_ir = nn::conv2d(theta_ir, p.wk, ws);
    t.v_ir = nn::conv2d(theta_ir, p.wv, ws);

    t.pk_vis = nn::adaptive_pool(t.k_vis, r, cfg.pool_op, mx ? &t.am_k_vis : nullptr);
    t.pv_vis = nn::adaptive_pool(t.v_vis, r, cfg.pool_op, mx ? &t.am_v_vis : nullptr);
    t.pk_ir = nn::adaptive_pool(t.k_ir, r, cfg.pool_op, mx ? &t.am_k_ir : nullptr);
    t.pv_ir = nn::adaptive_pool(t.v_ir, r, cfg.pool_op, mx ? &t.am_v_ir : nullptr);

    // Theta^{v->i}: visible queries attend over pooled infrared keys/values.
    t.att_v2i = nn::attention(t.q_vis, t.pk_ir, t.pv_ir, cfg.attention_heads, t.probs_v2i);
    t.att_i2v = nn::attention(t.q_ir, t.pk_vis, t.pv_vis, cfg.attention_heads, t.probs_i2v);

    t.theta_c = t.att_v2i;
    for (size_t i = 0; i < t.theta_c.v.size(); ++i) t.theta_c.v[i] += t.att_i2v.v[i];
    t.theta_l = theta_vis;
    for (size_t i = 0; i < t.theta_l.v.size(); ++i) t.theta_l.v[i] += theta_ir.v[i];

    t.gate = nn::conv2d(t.theta_c, p.gate, ws);
    nn::sigmoid_inplace(t.gate);

    t.out = TensorT<T>(t.theta_c.c, t.theta_c.h, t.theta_c.w);
    const size_t plane = t.gate.plane();
    for (int c = 0; c < t.out.c; ++c) {
      const T* tc = t.theta_c.data() + c * plane;
      const T* tl = t.theta_l.data() + c * plane;
      T* o = t.out.data() + c * plane;
      for (size_t i = 0; i < plane; ++i) {
        const T g = t.gate.v[i];
        o[i] = g * tc[i] + (T(1) - g) * tl[i];
      }
    }
    return t.out;
  }

  TensorT<T> decode(const TensorT<T>& cfi1, const TensorT<T>& cfi2, const TensorT<T>& cfi3, DecTrace<T>& t,
                    nn::Workspace<T>& ws) const {
    if (cfi2.h * 2 != cfi1.h || cfi3.h * 4 != cfi1.h || cfi2.w * 2 != cfi1.w || cfi3.w * 4 != cfi1.w)
      throw ShapeError("decode: inconsistent pyramid shapes");
    const T s = static_cast<T>(cfg.leaky_slope);
    t.up3 = nn::bilinear_resize(cfi3, cfi2.h, cfi2.w);
    t.cat2 = nn::concat_channels(t.up3, cfi2);
    t.m2y = nn::conv2d(t.cat2, m2, ws);
    nn::leaky_relu_inplace(t.m2y, s);
    t.d2y = nn::conv2d(t.m2y, d2, ws);
    nn::leaky_relu_inplace(t.d2y, s);
    t.up2 = nn::bilinear_resize(t.d2y, cfi1.h, cfi1.w);
    t.cat1 = nn::concat_channels(t.up2, cfi1);
    t.m1y = nn::conv2d(t.cat1, m1, ws);
    nn::leaky_relu_inplace(t.m1y, s);
    t.d1y = nn::conv2d(t.m1y, d1, ws);
    nn::leaky_relu_inplace(t.d1y, s);
    t.fused = nn::conv2d(t.d1y, head, ws);
    nn::sigmoid_inplace(t.fused);
    return t.fused;
  }

  // Full pass: F(I_ir, I_vi) -> fused [1,H,W]; gates recorded in the trace.
  TensorT<T> forward(const TensorT<T>& ir, const TensorT<T>& vi, ForwardTrace<T>& t,
                     nn::Workspace<T>& ws) const {
    check_same_shape(ir, vi, "forward");
    const FeaturePyramidT<T> pi = encode(ir, t.enc_ir, ws);
    const FeaturePyramidT<T> pv = encode(vi, t.enc_vi, ws);
    const TensorT<T> c1 = cfi_fuse(0, pv.theta1, pi.theta1, t.cfi[0], ws);
    const TensorT<T> c2 = cfi_fuse(1, pv.theta2, pi.theta2, t.cfi[1], ws);
    const TensorT<T> c3 = cfi_fuse(2, pv.theta3, pi.theta3, t.cfi[2], ws);
    return decode(c1, c2, c3, t.dec, ws);
  }

  TensorT<T> forward(const TensorT<T>& ir, const TensorT<T>& vi) const {
    ForwardTrace<T> t;
    nn::Workspace<T> ws;
    return forward(ir, vi, t, ws);
  }

  // Baseline + the three interventions of the training objective. Dropout
  // passes feed an all-zero map for the removed modality.
  FusionBundleT<T> forward_with_interventions(const TensorT<T>& ir, const TensorT<T>& vi,
                                              const InterventionSet& set,
                                              std::array<ForwardTrace<T>, 5>* traces = nullptr) const {
    std::array<ForwardTrace<T>, 5> local;
    std::array<ForwardTrace<T>, 5>& tr = traces ? *traces : local;
    nn::Workspace<T> ws;
    FusionBundleT<T> b;
    b.baseline = forward(ir, vi, tr[0], ws);
    for (int k = 0; k < 3; ++k) b.gates_baseline[k] = tr[0].cfi[k].gate;
    b.comp = forward(apply_mask(ir, set.comp_ir), apply_mask(vi, set.comp_vi), tr[1], ws);
    b.random = forward(apply_mask(ir, set.random_shared), apply_mask(vi, set.random_shared), tr[2], ws);
    TensorT<T> zero(1, ir.h, ir.w);
    b.drop_ir = forward(zero, vi, tr[3], ws);
    b.drop_vi = forward(ir, zero, tr[4], ws);
    return b;
  }

  // ---- backward ----

  void encode_backward(const EncTrace<T>& t, TensorT<T> d1_, TensorT<T> d2_, TensorT<T> d3_,
                       ModelGrads<T>& g, TensorT<T>* dx, nn::Workspace<T>& ws) const {
    const T s = static_cast<T>(cfg.leaky_slope);
    // scale 3
    nn::leaky_relu_backward_inplace(t.y3b, d3_, s);
    TensorT<T> dy3a(t.y3a.c, t.y3a.h, t.y3a.w);
    nn::conv2d_backward(t.y3a, e3b, d3_, &dy3a, g.e3b, ws);
    nn::leaky_relu_backward_inplace(t.y3a, dy3a, s);
    nn::conv2d_backward(t.y2b, e3a, dy3a, &d2_, g.e3a, ws);
    // scale 2
    nn::leaky_relu_backward_inplace(t.y2b, d2_, s);
    TensorT<T> dy2a(t.y2a.c, t.y2a.h, t.y2a.w);
    nn::conv2d_backward(t.y2a, e2b, d2_, &dy2a, g.e2b, ws);
    nn::leaky_relu_backward_inplace(t.y2a, dy2a, s);
    nn::conv2d_backward(t.y1b, e2a, dy2a, &d1_, g.e2a, ws);
    // scale 1
    nn::leaky_relu_backward_inplace(t.y1b, d1_, s);
    TensorT<T> dy1a(t.y1a.c, t.y1a.h, t.y1a.w);
    nn::conv2d_backward(t.y1a, e1b, d1_, &dy1a, g.e1b, ws);
    nn::leaky_relu_backward_inplace(t.y1a, dy1a, s);
    nn::conv2d_backward(t.x, e1a, dy1a, dx, g.e1a, ws);
  }

  // d_out: gradient w.r.t. the CFI output; d_gate_inj: externally injected
  // gate gradient (aggregate-gate path), may be null.
  void cfi_backward(int k, const TensorT<T>& theta_vis, const TensorT<T>& theta_ir, const CfiTrace<T>& t,
                    const TensorT<T>& d_out, const TensorT<T>* d_gate_inj, ModelGrads<T>& g,
                    TensorT<T>& d_theta_vis, TensorT<T>& d_theta_ir, nn::Workspace<T>& ws) const {
    const CfiParams& p = cfi[k];
    auto& pg = g.cfi[k];
    const size_t plane = t.gate.plane();

    // blend: out = g*c + (1-g)*l
    TensorT<T> d_c(t.theta_c.c, t.theta_c.h, t.theta_c.w);
    TensorT<T> d_l(t.theta_l.c, t.theta_l.h, t.theta_l.w);
    TensorT<T> d_gate(1, t.gate.h, t.gate.w);
    if (d_gate_inj) d_gate = *d_gate_inj;
    for (int c = 0; c < d_c.c; ++c) {
      const T* tc = t.theta_c.data() + c * plane;
      const T* tl = t.theta_l.data() + c * plane;
      const T* dy = d_out.data() + c * plane;
      T* dc = d_c.data() + c * plane;
      T* dl = d_l.data() + c * plane;
      for (size_t i = 0; i < plane; ++i) {
        const T gv = t.gate.v[i];
        dc[i] = dy[i] * gv;
        dl[i] = dy[i] * (T(1) - gv);
        d_gate.v[i] += dy[i] * (tc[i] - tl[i]);
      }
    }

    // gate = sigmoid(conv3x3(theta_c))
    TensorT<T> d_gate_pre = nn::sigmoid_backward(t.gate, d_gate);
    nn::conv2d_backward(t.theta_c, p.gate, d_gate_pre, &d_c, pg.gate, ws);

    // theta_l = theta_vis + theta_ir
    for (size_t i = 0; i < d_l.v.size(); ++i) {
      d_theta_vis.v[i] += d_l.v[i];
      d_theta_ir.v[i] += d_l.v[i];
    }

    // theta_c = att_v2i + att_i2v; attention backward for both directions.
    TensorT<T> dq_vis(t.q_vis.c, t.q_vis.h, t.q_vis.w), dq_ir(t.q_ir.c, t.q_ir.h, t.q_ir.w);
    TensorT<T> dpk_vis(t.pk_vis.c, t.pk_vis.h, t.pk_vis.w), dpv_vis(t.pv_vis.c, t.pv_vis.h, t.pv_vis.w);
    TensorT<T> dpk_ir(t.pk_ir.c, t.pk_ir.h, t.pk_ir.w), dpv_ir(t.pv_ir.c, t.pv_ir.h, t.pv_ir.w);
    nn::attention_backward(t.q_vis, t.pk_ir, t.pv_ir, cfg.attention_heads, t.probs_v2i, d_c, dq_vis, dpk_ir,
                           dpv_ir);
    nn::attention_backward(t.q_ir, t.pk_vis, t.pv_vis, cfg.attention_heads, t.probs_i2v, d_c, dq_ir, dpk_vis,
                           dpv_vis);

    // pooled K/V adjoints
    TensorT<T> dk_vis(t.k_vis.c, t.k_vis.h, t.k_vis.w), dv_vis(t.v_vis.c, t.v_vis.h, t.v_vis.w);
    TensorT<T> dk_ir(t.k_ir.c, t.k_ir.h, t.k_ir.w), dv_ir(t.v_ir.c, t.v_ir.h, t.v_ir.w);
    nn::adaptive_pool_backward(dpk_vis, t.k_vis.h, t.k_vis.w, cfg.pool_op, t.am_k_vis, dk_vis);
    nn::adaptive_pool_backward(dpv_vis, t.v_vis.h, t.v_vis.w, cfg.pool_op, t.am_v_vis, dv_vis);
    nn::adaptive_pool_backward(dpk_ir, t.k_ir.h, t.k_ir.w, cfg.pool_op, t.am_k_ir, dk_ir);
    nn::adaptive_pool_backward(dpv_ir, t.v_ir.h, t.v_ir.w, cfg.pool_op, t.am_v_ir, dv_ir);

    // projection convs (weights shared across modalities)
    nn::conv2d_backward(theta_vis, p.wq, dq_vis, &d_theta_vis, pg.wq, ws);
    nn::conv2d_backward(theta_ir, p.wq, dq_ir, &d_theta_ir, pg.wq, ws);
    nn::conv2d_backward(theta_vis, p.wk, dk_vis, &d_theta_vis, pg.wk, ws);
    nn::conv2d_backward(theta_ir, p.wk, dk_ir, &d_theta_ir, pg.wk, ws);
    nn::conv2d_backward(theta_vis, p.wv, dv_vis, &d_theta_vis, pg.wv, ws);
    nn::conv2d_backward(theta_ir, p.wv, dv_ir, &d_theta_ir, pg.wv, ws);
  }

  // Backward through one full pass. d_gates may be null (the intervened
  // passes receive no external gate gradient).
  void backward(const ForwardTrace<T>& t, const TensorT<T>& d_fused,
                const std::array<TensorT<T>, 3>* d_gates, ModelGrads<T>& g, TensorT<T>* d_ir = nullptr,
                TensorT<T>* d_vi = nullptr) const {
    nn::Workspace<T> ws;
    const T s = static_cast<T>(cfg.leaky_slope);

    // decoder
    TensorT<T> dh = nn::sigmoid_backward(t.dec.fused, d_fused);
    TensorT<T> dd1y(t.dec.d1y.c, t.dec.d1y.h, t.dec.d1y.w);
    nn::conv2d_backward(t.dec.d1y, head, dh, &dd1y, g.head, ws);
    nn::leaky_relu_backward_inplace(t.dec.d1y, dd1y, s);
    TensorT<T> dm1y(t.dec.m1y.c, t.dec.m1y.h, t.dec.m1y.w);
    nn::conv2d_backward(t.dec.m1y, d1, dd1y, &dm1y, g.d1, ws);
    nn::leaky_relu_backward_inplace(t.dec.m1y, dm1y, s);
    TensorT<T> dcat1(t.dec.cat1.c, t.dec.cat1.h, t.dec.cat1.w);
    nn::conv2d_backward(t.dec.cat1, m1, dm1y, &dcat1, g.m1, ws);
    TensorT<T> dup2(t.dec.up2.c, t.dec.up2.h, t.dec.up2.w);
    TensorT<T> dcfi1(t.cfi[0].out.c, t.cfi[0].out.h, t.cfi[0].out.w);
    nn::split_channels_add(dcat1, dup2, dcfi1);
    TensorT<T> dd2y(t.dec.d2y.c, t.dec.d2y.h, t.dec.d2y.w);
    nn::bilinear_resize_backward(dup2, t.dec.d2y.h, t.dec.d2y.w, dd2y);
    nn::leaky_relu_backward_inplace(t.dec.d2y, dd2y, s);
    TensorT<T> dm2y(t.dec.m2y.c, t.dec.m2y.h, t.dec.m2y.w);
    nn::conv2d_backward(t.dec.m2y, d2, dd2y, &dm2y, g.d2, ws);
    nn::leaky_relu_backward_inplace(t.dec.m2y, dm2y, s);
    TensorT<T> dcat2(t.dec.cat2.c, t.dec.cat2.h, t.dec.cat2.w);
    nn::conv2d_backward(t.dec.cat2, m2, dm2y, &dcat2, g.m2, ws);
    TensorT<T> dup3(t.dec.up3.c, t.dec.up3.h, t.dec.up3.w);
    TensorT<T> dcfi2(t.cfi[1].out.c, t.cfi[1].out.h, t.cfi[1].out.w);
    nn::split_channels_add(dcat2, dup3, dcfi2);
    TensorT<T> dcfi3(t.cfi[2].out.c, t.cfi[2].out.h, t.cfi[2].out.w);
    nn::bilinear_resize_backward(dup3, t.cfi[2].out.h, t.cfi[2].out.w, dcfi3);

    // CFIs -> pyramid grads
    const TensorT<T>* dcfis[3] = {&dcfi1, &dcfi2, &dcfi3};
    const TensorT<T>* th_vis[3] = {&t.enc_vi.y1b, &t.enc_vi.y2b, &t.enc_vi.y3b};
    const TensorT<T>* th_ir[3] = {&t.enc_ir.y1b, &t.enc_ir.y2b, &t.enc_ir.y3b};
    std::array<TensorT<T>, 3> d_pyr_vis, d_pyr_ir;
    for (int k = 0; k < 3; ++k) {
      d_pyr_vis[k] = TensorT<T>(th_vis[k]->c, th_vis[k]->h, th_vis[k]->w);
      d_pyr_ir[k] = TensorT<T>(th_ir[k]->c, th_ir[k]->h, th_ir[k]->w);
      cfi_backward(k, *th_vis[k], *th_ir[k], t.cfi[k], *dcfis[k], d_gates ? &(*d_gates)[k] : nullptr, g,
                   d_pyr_vis[k], d_pyr_ir[k], ws);
    }

    encode_backward(t.enc_vi, std::move(d_pyr_vis[0]), std::move(d_pyr_vis[1]), std::move(d_pyr_vis[2]), g,
                    d_vi, ws);
    encode_backward(t.enc_ir, std::move(d_pyr_ir[0]), std::move(d_pyr_ir[1]), std::move(d_pyr_ir[2]), g,
                    d_ir, ws);
  }
};

template <class T>
struct ModelGrads {
  nn::ConvGrad<T> e1a, e1b, e2a, e2b, e3a, e3b;
  struct CfiGrads {
    nn::ConvGrad<T> wq, wk, wv, gate;
  };
  std::array<CfiGrads, 3> cfi;
  nn::ConvGrad<T> m2, d2, m1, d1, head;

  void init_like(const FusionModelT<T>& m) {
    e1a.init_like(m.e1a);
    e1b.init_like(m.e1b);
    e2a.init_like(m.e2a);
    e2b.init_like(m.e2b);
    e3a.init_like(m.e3a);
    e3b.init_like(m.e3b);
    for (int k = 0; k < 3; ++k) {
      cfi[k].wq.init_like(m.cfi[k].wq);
      cfi[k].wk.init_like(m.cfi[k].wk);
      cfi[k].wv.init_like(m.cfi[k].wv);
      cfi[k].gate.init_like(m.cfi[k].gate);
    }
    m2.init_like(m.m2);
    d2.init_like(m.d2);
    m1.init_like(m.m1);
    d1.init_like(m.d1);
    head.init_like(m.head);
  }

  template <class F>
  void visit(F&& f) {
    f(e1a);
    f(e1b);
    f(e2a);
    f(e2b);
    f(e3a);
    f(e3b);
    for (int k = 0; k < 3; ++k) {
      f(cfi[k].wq);
      f(cfi[k].wk);
      f(cfi[k].wv);
      f(cfi[k].gate);
    }
    f(m2);
    f(d2);
    f(m1);
    f(d1);
    f(head);
  }

  void zero() {
    visit([](nn::ConvGrad<T>& g) {
      std::fill(g.dw.begin(), g.dw.end(), T(0));
      std::fill(g.db.begin(), g.db.end(), T(0));
    });
  }

  void add_scaled(const ModelGrads<T>& o, T scale) {
    auto acc = [scale](AlignedVec<T>& a, const AlignedVec<T>& b) {
      for (size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
    };
    // parallel structure walk
    const nn::ConvGrad<T>* src[23];
    nn::ConvGrad<T>* dst[23];
    int i = 0;
    const_cast<ModelGrads<T>&>(o).visit([&](nn::ConvGrad<T>& g) { src[i++] = &g; });
    i = 0;
    visit([&](nn::ConvGrad<T>& g) { dst[i++] = &g; });
    for (int j = 0; j < i; ++j) {
      acc(dst[j]->dw, src[j]->dw);
      acc(dst[j]->db, src[j]->db);
    }
  }

  double squared_norm() {
    double s = 0;
    visit([&](nn::ConvGrad<T>& g) {
      for (T x : g.dw) s += static_cast<double>(x) * x;
      for (T x : g.db) s += static_cast<double>(x) * x;
    });
    return s;
  }
};

using FusionModel = FusionModelT<float>;

// Fuses a full-resolution pair: symmetric-pads to multiples of 4, runs the
// model, crops the padding back off.
template <class T>
TensorT<T> fuse_image(const FusionModelT<T>& model, const TensorT<T>& vi_luma, const TensorT<T>& ir) {
  check_same_shape(vi_luma, ir, "fuse_image");
  nn::PadInfo info;
  const TensorT<T> vp = nn::pad_to_multiple(vi_luma, 4, info);
  const TensorT<T> ip = nn::pad_to_multiple(ir, 4, info);
  return nn::crop_to(model.forward(ip, vp), info);
}

}  // namespace ivf
