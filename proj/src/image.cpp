#include "ivf/image.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace fs = std::filesystem;

namespace ivf {

namespace {

constexpr float kWr = 0.299f, kWg = 0.587f, kWb = 0.114f;
// Cb = (B-Y)/1.772 + 0.5, Cr = (R-Y)/1.402 + 0.5 and the exact algebraic inverse.
constexpr float kCbDiv = 1.772f, kCrDiv = 1.402f;

inline float clamp01(float x) { return x < 0.f ? 0.f : (x > 1.f ? 1.f : x); }

void check_rgb(const Tensor& rgb, const char* what) {
  if (rgb.c != 3) throw ShapeError(std::string(what) + ": expected [3,H,W], got " + rgb.shape_str());
}

}  // namespace

LumaChroma rgb_to_luma_chroma(const Tensor& rgb) {
  check_rgb(rgb, "rgb_to_luma_chroma");
  LumaChroma out{Tensor(1, rgb.h, rgb.w), Tensor(2, rgb.h, rgb.w)};
  const size_t n = rgb.plane();
  const float *r = rgb.data(), *g = rgb.data() + n, *b = rgb.data() + 2 * n;
  float* y = out.luma.data();
  float *cb = out.chroma.data(), *cr = out.chroma.data() + n;
  for (size_t i = 0; i < n; ++i) {
    y[i] = kWr * r[i] + kWg * g[i] + kWb * b[i];
    cb[i] = (b[i] - y[i]) / kCbDiv + 0.5f;
    cr[i] = (r[i] - y[i]) / kCrDiv + 0.5f;
  }
  return out;
}

Tensor rgb_to_luma(const Tensor& rgb) {
  check_rgb(rgb, "rgb_to_luma");
  Tensor y(1, rgb.h, rgb.w);
  const size_t n = rgb.plane();
  const float *r = rgb.data(), *g = rgb.data() + n, *b = rgb.data() + 2 * n;
  for (size_t i = 0; i < n; ++i) y.v[i] = kWr * r[i] + kWg * g[i] + kWb * b[i];
  return y;
}

Tensor chroma_reinject(const Tensor& fused_luma, const Tensor& chroma) {
  if (fused_luma.c != 1) throw ShapeError("chroma_reinject: luma must be [1,H,W]");
  if (chroma.c != 2 || chroma.h != fused_luma.h || chroma.w != fused_luma.w)
    throw ShapeError("chroma_reinject: chroma " + chroma.shape_str() + " does not match luma " +
                     fused_luma.shape_str());
  Tensor rgb(3, fused_luma.h, fused_luma.w);
  const size_t n = fused_luma.plane();
  const float* y = fused_luma.data();
  const float *cb = chroma.data(), *cr = chroma.data() + n;
  float *r = rgb.data(), *g = rgb.data() + n, *b = rgb.data() + 2 * n;
  for (size_t i = 0; i < n; ++i) {
    const float rv = y[i] + kCrDiv * (cr[i] - 0.5f);
    const float bv = y[i] + kCbDiv * (cb[i] - 0.5f);
    const float gv = (y[i] - kWr * rv - kWb * bv) / kWg;
    r[i] = clamp01(rv);
    g[i] = clamp01(gv);
    b[i] = clamp01(bv);
  }
  return rgb;
}

Tensor load_image(const std::string& path) {
  if (!fs::exists(path)) throw IoError("image file not found: " + path);
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("failed to decode image: " + path);
  if (m.depth() != CV_8U) throw IoError("expected 8-bit image: " + path);
  if (m.channels() == 4) {
    cv::Mat tmp;
    cv::mixChannels({m}, {tmp = cv::Mat(m.rows, m.cols, CV_8UC3)}, {0, 0, 1, 1, 2, 2});
    m = tmp;
  }
  const int ch = m.channels();
  if (ch != 1 && ch != 3) throw IoError("unsupported channel count in " + path);
  Tensor t(ch, m.rows, m.cols);
  const size_t n = t.plane();
  for (int y = 0; y < m.rows; ++y) {
    const uint8_t* row = m.ptr<uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) {
      if (ch == 1) {
        t.v[static_cast<size_t>(y) * m.cols + x] = row[x] / 255.f;
      } else {
        // OpenCV decodes BGR.
        const size_t i = static_cast<size_t>(y) * m.cols + x;
        t.v[i] = row[3 * x + 2] / 255.f;
        t.v[n + i] = row[3 * x + 1] / 255.f;
        t.v[2 * n + i] = row[3 * x + 0] / 255.f;
      }
    }
  }
  return t;
}

ImagePair load_image_pair(const std::string& visible_path, const std::string& infrared_path,
                          const std::string& id) {
  Tensor vi = load_image(visible_path);
  Tensor ir = load_image(infrared_path);
  if (vi.h != ir.h || vi.w != ir.w)
    throw ShapeError("image pair dimension mismatch: visible " + vi.shape_str() + " (" + visible_path +
                     ") vs infrared " + ir.shape_str() + " (" + infrared_path + ")");
  ImagePair pair;
  if (vi.c == 1) {
    // Grayscale visible: replicate to 3 channels.
    Tensor v3(3, vi.h, vi.w);
    const size_t n = vi.plane();
    for (int c = 0; c < 3; ++c) std::copy(vi.v.begin(), vi.v.end(), v3.v.begin() + c * n);
    pair.visible = std::move(v3);
  } else {
    pair.visible = std::move(vi);
  }
  pair.infrared = ir.c == 3 ? rgb_to_luma(ir) : std::move(ir);
  pair.id = id.empty() ? fs::path(visible_path).stem().string() : id;
  return pair;
}

namespace {

void write_png(const std::string& path, const cv::Mat& m) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  if (!cv::imwrite(path, m)) throw IoError("failed to write " + path);
}

inline uint8_t to_u8(float x) { return static_cast<uint8_t>(std::lround(clamp01(x) * 255.f)); }

}  // namespace

void save_gray_png(const std::string& path, const Tensor& img) {
  if (img.c != 1) throw ShapeError("save_gray_png: expected [1,H,W], got " + img.shape_str());
  cv::Mat m(img.h, img.w, CV_8UC1);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) m.at<uint8_t>(y, x) = to_u8(img.at(0, y, x));
  write_png(path, m);
}

void save_rgb_png(const std::string& path, const Tensor& img) {
  if (img.c != 3) throw ShapeError("save_rgb_png: expected [3,H,W], got " + img.shape_str());
  cv::Mat m(img.h, img.w, CV_8UC3);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      m.at<cv::Vec3b>(y, x) = {to_u8(img.at(2, y, x)), to_u8(img.at(1, y, x)), to_u8(img.at(0, y, x))};
  write_png(path, m);
}

PatchPair sample_patch(const ImagePair& pair, int patch, Rng& rng, bool enable_flips) {
  const int H = pair.height(), W = pair.width();
  if (H < patch || W < patch)
    throw SizeError("image " + pair.id + " (" + std::to_string(H) + "x" + std::to_string(W) +
                    ") smaller than patch " + std::to_string(patch));
  // Fixed draw order: row, col, hflip, vflip.
  const int r0 = rng.uniform_int(0, H - patch);
  const int c0 = rng.uniform_int(0, W - patch);
  const bool hflip = enable_flips && rng.bernoulli(0.5);
  const bool vflip = enable_flips && rng.bernoulli(0.5);

  PatchPair out{Tensor(1, patch, patch), Tensor(1, patch, patch), patch};
  for (int i = 0; i < patch; ++i) {
    const int sy = r0 + (vflip ? patch - 1 - i : i);
    for (int j = 0; j < patch; ++j) {
      const int sx = c0 + (hflip ? patch - 1 - j : j);
      out.visible_luma.at(0, i, j) =
          kWr * pair.visible.at(0, sy, sx) + kWg * pair.visible.at(1, sy, sx) + kWb * pair.visible.at(2, sy, sx);
      out.infrared.at(0, i, j) = pair.infrared.at(0, sy, sx);
    }
  }
  return out;
}

namespace {

bool has_image_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ".png" || e == ".jpg" || e == ".jpeg" || e == ".bmp";
}

}  // namespace

Dataset Dataset::scan_directory(const std::string& root) {
  const fs::path vi_dir = fs::path(root) / "vi";
  const fs::path ir_dir = fs::path(root) / "ir";
  if (!fs::is_directory(vi_dir) || !fs::is_directory(ir_dir))
    throw IoError("dataset root must contain vi/ and ir/ directories: " + root);
  std::vector<Entry> entries;
  for (const auto& de : fs::directory_iterator(vi_dir)) {
    if (!de.is_regular_file() || !has_image_ext(de.path())) continue;
    const fs::path ir_path = ir_dir / de.path().filename();
    if (!fs::exists(ir_path))
      throw IoError("missing infrared counterpart for pair id '" + de.path().stem().string() +
                    "': " + ir_path.string());
    entries.push_back({de.path().stem().string(), de.path().string(), ir_path.string()});
  }
  return from_entries(std::move(entries), root);
}

Dataset Dataset::from_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest: " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<Entry> entries;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string id, vi_path, ir_path;
    if (!std::getline(ss, id, '\t') || !std::getline(ss, vi_path, '\t') || !std::getline(ss, ir_path))
      throw IoError("manifest line " + std::to_string(lineno) + " is not `id\\tvi\\tir`: " + manifest_path);
    auto resolve = [&](const std::string& p) {
      return fs::path(p).is_absolute() ? p : (base / p).string();
    };
    entries.push_back({id, resolve(vi_path), resolve(ir_path)});
  }
  return from_entries(std::move(entries), manifest_path);
}

Dataset Dataset::open(const std::string& root_or_manifest) {
  if (fs::is_directory(root_or_manifest)) {
    const fs::path manifest = fs::path(root_or_manifest) / "manifest.tsv";
    if (fs::exists(manifest)) return from_manifest(manifest.string());
    return scan_directory(root_or_manifest);
  }
  if (fs::is_regular_file(root_or_manifest)) return from_manifest(root_or_manifest);
  throw IoError("dataset path not found: " + root_or_manifest);
}

Dataset Dataset::from_entries(std::vector<Entry> entries, std::string id) {
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.id < b.id; });
  Dataset d;
  d.entries_ = std::move(entries);
  d.id_ = std::move(id);
  return d;
}

ImagePair Dataset::load(size_t i) const {
  counter_->fetch_add(1);
  const Entry& e = entries_.at(i);
  return load_image_pair(e.vi_path, e.ir_path, e.id);
}

}  // namespace ivf
