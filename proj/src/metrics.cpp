#include "ivf/metrics.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ivf::metrics {

namespace {

void check_single(const DTensor& t, const char* what) {
  if (t.c != 1) throw ShapeError(std::string(what) + ": expected [1,H,W], got " + t.shape_str());
}

void check_triple(const DTensor& f, const DTensor& a, const DTensor& b, const char* what) {
  check_single(f, what);
  check_same_shape(f, a, what);
  check_same_shape(f, b, what);
}

double mse(const DTensor& x, const DTensor& y) {
  double s = 0;
  for (size_t i = 0; i < x.v.size(); ++i) {
    const double d = x.v[i] - y.v[i];
    s += d * d;
  }
  return s / static_cast<double>(x.size());
}

double pearson(const DTensor& x, const DTensor& y) {
  const size_t n = x.size();
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += x.v[i];
    my += y.v[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = x.v[i] - mx, dy = y.v[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) return 0;  // constant image
  return sxy / std::sqrt(sxx * syy);
}

inline int reflect(int i, int n) { return i < 0 ? -1 - i : (i >= n ? 2 * n - 1 - i : i); }

// Sobel with symmetric borders; g = magnitude, alpha = atan(gy/gx).
void sobel(const DTensor& img, DTensor& g, DTensor& alpha) {
  const int H = img.h, W = img.w;
  g = DTensor(1, H, W);
  alpha = DTensor(1, H, W);
  auto px = [&](int y, int x) { return img.at(0, reflect(y, H), reflect(x, W)); };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double gx = px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1) - px(y - 1, x - 1) -
                        2 * px(y, x - 1) - px(y + 1, x - 1);
      const double gy = px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1) - px(y - 1, x - 1) -
                        2 * px(y - 1, x) - px(y - 1, x + 1);
      g.at(0, y, x) = std::sqrt(gx * gx + gy * gy);
      if (gx == 0)
        alpha.at(0, y, x) = gy == 0 ? 0.0 : (gy > 0 ? M_PI / 2 : -M_PI / 2);
      else
        alpha.at(0, y, x) = std::atan(gy / gx);
    }
}

// Sigmoid preservation curves normalized so that perfect preservation scores
// the published ceiling constant.
struct Preservation {
  double gamma, kappa, sigma, norm;
  Preservation(double g, double k, double s) : gamma(g), kappa(k), sigma(s) {
    norm = 1.0 / (1.0 + std::exp(k * (1.0 - s)));
  }
  double operator()(double x) const { return gamma * (1.0 / (1.0 + std::exp(kappa * (x - sigma)))) / norm; }
};

const Preservation kQg(0.9994, -15.0, 0.5);
const Preservation kQa(0.9879, -22.0, 0.8);

}  // namespace

double ag(const DTensor& f) {
  check_single(f, "ag");
  if (f.h < 2 || f.w < 2) return 0;
  double s = 0;
  for (int y = 0; y + 1 < f.h; ++y)
    for (int x = 0; x + 1 < f.w; ++x) {
      const double dx = f.at(0, y, x + 1) - f.at(0, y, x);
      const double dy = f.at(0, y + 1, x) - f.at(0, y, x);
      s += std::sqrt((dx * dx + dy * dy) / 2.0);
    }
  return s / (static_cast<double>(f.h - 1) * (f.w - 1));
}

double sf(const DTensor& f) {
  check_single(f, "sf");
  double rf = 0, cf = 0;
  if (f.w > 1) {
    for (int y = 0; y < f.h; ++y)
      for (int x = 1; x < f.w; ++x) {
        const double d = f.at(0, y, x) - f.at(0, y, x - 1);
        rf += d * d;
      }
    rf /= static_cast<double>(f.h) * (f.w - 1);
  }
  if (f.h > 1) {
    for (int y = 1; y < f.h; ++y)
      for (int x = 0; x < f.w; ++x) {
        const double d = f.at(0, y, x) - f.at(0, y - 1, x);
        cf += d * d;
      }
    cf /= static_cast<double>(f.h - 1) * f.w;
  }
  return std::sqrt(rf + cf);
}

double psnr(const DTensor& f, const DTensor& a, const DTensor& b) {
  check_triple(f, a, b, "psnr");
  const double m = 0.5 * (mse(f, a) + mse(f, b));
  constexpr double peak2 = 255.0 * 255.0;
  if (m < peak2 * 1e-10) return 100.0;
  return 10.0 * std::log10(peak2 / m);
}

double cc(const DTensor& f, const DTensor& a, const DTensor& b) {
  check_triple(f, a, b, "cc");
  return 0.5 * (pearson(f, a) + pearson(f, b));
}

double qabf(const DTensor& f, const DTensor& a, const DTensor& b) {
  check_triple(f, a, b, "qabf");
  DTensor gf, af, ga, aa, gb, ab;
  sobel(f, gf, af);
  sobel(a, ga, aa);
  sobel(b, gb, ab);

  auto preserve = [&](double gs, double as_, double gfv, double afv) {
    // relative edge strength: ratio of weaker to stronger; 1 when both vanish
    const double hi = std::max(gs, gfv), lo = std::min(gs, gfv);
    const double G = hi == 0 ? 1.0 : lo / hi;
    const double A = 1.0 - std::abs(as_ - afv) / (M_PI / 2.0);
    return kQg(G) * kQa(A);
  };

  double num = 0, den = 0;
  for (size_t i = 0; i < f.v.size(); ++i) {
    const double wa = ga.v[i], wb = gb.v[i];
    num += preserve(ga.v[i], aa.v[i], gf.v[i], af.v[i]) * wa +
           preserve(gb.v[i], ab.v[i], gf.v[i], af.v[i]) * wb;
    den += wa + wb;
  }
  return den == 0 ? 0.0 : num / den;
}

DTensor to_eight_bit_scale(const Tensor& t01) {
  DTensor out(t01.c, t01.h, t01.w);
  for (size_t i = 0; i < t01.v.size(); ++i) out.v[i] = static_cast<double>(t01.v[i]) * 255.0;
  return out;
}

MetricRow compute_row(const std::string& id, const DTensor& fused, const DTensor& a, const DTensor& b) {
  MetricRow r;
  r.id = id;
  r.ag = ag(fused);
  r.sf = sf(fused);
  r.psnr = psnr(fused, a, b);
  r.cc = cc(fused, a, b);
  r.qabf = qabf(fused, a, b);
  return r;
}

MetricReport evaluate_dataset(const Dataset& dataset, const std::function<Tensor(size_t)>& fuse,
                              const std::string& checkpoint_id) {
  if (dataset.empty()) throw IoError("evaluate_dataset: empty dataset " + dataset.id());
  MetricReport rep;
  rep.dataset_id = dataset.id();
  rep.checkpoint_id = checkpoint_id;
  {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::ostringstream ss;
    ss << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
    rep.timestamp = ss.str();
  }
  rep.mean.id = "mean";
  for (size_t i = 0; i < dataset.size(); ++i) {
    const ImagePair pair = dataset.load(i);
    const Tensor fused = fuse(i);
    if (fused.h != pair.height() || fused.w != pair.width())
      throw ShapeError("fused output for pair " + pair.id + " has wrong shape " + fused.shape_str());
    const DTensor f = to_eight_bit_scale(fused);
    const DTensor a = to_eight_bit_scale(rgb_to_luma(pair.visible));
    const DTensor b = to_eight_bit_scale(pair.infrared);
    rep.rows.push_back(compute_row(pair.id, f, a, b));
    rep.mean.ag += rep.rows.back().ag;
    rep.mean.sf += rep.rows.back().sf;
    rep.mean.psnr += rep.rows.back().psnr;
    rep.mean.cc += rep.rows.back().cc;
    rep.mean.qabf += rep.rows.back().qabf;
  }
  const double n = static_cast<double>(rep.rows.size());
  rep.mean.ag /= n;
  rep.mean.sf /= n;
  rep.mean.psnr /= n;
  rep.mean.cc /= n;
  rep.mean.qabf /= n;
  return rep;
}

namespace {

void format_row(std::ostream& os, const MetricRow& r) {
  os << r.id << ',' << r.ag << ',' << r.sf << ',' << r.psnr << ',' << r.cc << ',' << r.qabf << '\n';
}

nlohmann::json row_json(const MetricRow& r) {
  return {{"id", r.id}, {"AG", r.ag}, {"SF", r.sf}, {"PSNR", r.psnr}, {"CC", r.cc}, {"Qabf", r.qabf}};
}

}  // namespace

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "id,AG,SF,PSNR,CC,Qabf\n";
  for (const auto& r : rows) format_row(os, r);
  format_row(os, mean);
  return os.str();
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["metadata"] = {{"dataset", dataset_id}, {"checkpoint", checkpoint_id}, {"timestamp", timestamp}};
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) j["rows"].push_back(row_json(r));
  j["mean"] = row_json(mean);
  return j.dump(2);
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(20) << "id" << std::right << std::setw(10) << "AG" << std::setw(10) << "SF"
     << std::setw(10) << "PSNR" << std::setw(10) << "CC" << std::setw(10) << "Qabf" << '\n';
  auto line = [&](const MetricRow& r) {
    os << std::left << std::setw(20) << r.id << std::right << std::fixed << std::setprecision(4)
       << std::setw(10) << r.ag << std::setw(10) << r.sf << std::setw(10) << r.psnr << std::setw(10) << r.cc
       << std::setw(10) << r.qabf << '\n';
    os.unsetf(std::ios::fixed);
  };
  for (const auto& r : rows) line(r);
  os << std::string(70, '-') << '\n';
  line(mean);
  return os.str();
}

}  // namespace ivf::metrics
