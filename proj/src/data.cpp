#include "ssc/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "ssc/image_io.hpp"
#include "ssc/nn.hpp"
#include "ssc/ssdt.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ssc {

double dynamic_scale(const std::vector<ExemplarBox>& boxes, const DisConfig& cfg) {
  if (boxes.empty()) throw DimensionError("dynamic_scale: needs at least one box");
  if (cfg.eta <= 0.0) throw Error("dynamic_scale: eta must be positive");
  double mean_w = 0.0, mean_h = 0.0;
  for (const auto& b : boxes) {
    if (b.width() <= 0.0 || b.height() <= 0.0) {
      throw DimensionError("dynamic_scale: degenerate box");
    }
    mean_w += b.width();
    mean_h += b.height();
  }
  mean_w /= static_cast<double>(boxes.size());
  mean_h /= static_cast<double>(boxes.size());
  const double m = std::min(mean_w, mean_h);
  if (m >= cfg.gamma) return 1.0;
  return (cfg.gamma - m) / cfg.eta + 1.0;
}

void validate_sample(const Sample& s) {
  if (s.boxes.empty()) throw Error("sample: needs K >= 1 exemplar boxes");
  double h = -1, w = -1;
  if (s.has_image()) {
    if (s.image.ndim() != 3 || s.image.dim(0) != 3) {
      throw DimensionError("sample: image must be [3,H,W], got " +
                           shape_str(s.image.shape()));
    }
    h = static_cast<double>(s.image.dim(1));
    w = static_cast<double>(s.image.dim(2));
  } else if (s.feature_ref.empty()) {
    throw Error("sample: needs an image or a feature reference");
  }
  for (const auto& b : s.boxes) {
    if (!(b.x2 > b.x1) || !(b.y2 > b.y1)) throw Error("sample: degenerate exemplar box");
    if (h >= 0 && (b.x1 < 0 || b.y1 < 0 || b.x2 > w || b.y2 > h)) {
      throw Error("sample: exemplar box outside image bounds");
    }
  }
  for (const auto& p : s.points) {
    if (h >= 0 && (p[0] < 0 || p[1] < 0 || p[0] > w || p[1] > h)) {
      throw Error("sample: annotation point outside image bounds");
    }
  }
}

Sample resize_sample(const Sample& s, double scale) {
  if (scale < 1.0) throw Error("resize_sample: scale must be >= 1");
  Sample out = s;
  if (scale == 1.0) return out;
  if (s.has_image()) {
    const int64_t nh = std::llround(scale * static_cast<double>(s.image.dim(1)));
    const int64_t nw = std::llround(scale * static_cast<double>(s.image.dim(2)));
    NoGradGuard ng;
    out.image = upsample_bilinear(s.image, nh, nw, 1);
  }
  for (auto& b : out.boxes) {
    b.x1 *= scale;
    b.y1 *= scale;
    b.x2 *= scale;
    b.y2 *= scale;
  }
  for (auto& p : out.points) {
    p[0] *= scale;
    p[1] *= scale;
  }
  return out;
}

Sample pad_sample_to_multiple(const Sample& s, int64_t multiple) {
  if (!s.has_image()) return s;
  const int64_t h = s.image.dim(1), w = s.image.dim(2);
  const int64_t nh = (h + multiple - 1) / multiple * multiple;
  const int64_t nw = (w + multiple - 1) / multiple * multiple;
  if (nh == h && nw == w) return s;
  Sample out = s;
  const auto& src = s.image.data();
  std::vector<float> data(static_cast<size_t>(3 * nh * nw), 0.0f);
  for (int64_t c = 0; c < 3; ++c) {
    for (int64_t y = 0; y < h; ++y) {
      const float* sp = &src[static_cast<size_t>((c * h + y) * w)];
      float* dp = &data[static_cast<size_t>((c * nh + y) * nw)];
      std::copy(sp, sp + w, dp);
    }
  }
  out.image = Tensor<float>::from({3, nh, nw}, std::move(data));
  return out;
}

Sample load_sample(const std::string& json_path) {
  std::ifstream is(json_path);
  if (!is) throw IoError("annotation: cannot open: " + json_path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw IoError("annotation: bad JSON in " + json_path + ": " + e.what());
  }
  Sample s;
  const std::string image_rel = j.at("image").get<std::string>();
  const fs::path image_path = fs::path(json_path).parent_path() / image_rel;
  for (const auto& p : j.at("points")) {
    s.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  }
  for (const auto& b : j.at("boxes")) {
    s.boxes.push_back({b.at(0).get<double>(), b.at(1).get<double>(),
                       b.at(2).get<double>(), b.at(3).get<double>()});
  }
  s.category_id = j.value("category_id", 0);
  if (image_path.extension() == ".json") {
    s.feature_ref = image_path.string();
  } else {
    s.image = load_ppm(image_path.string());
  }
  validate_sample(s);
  return s;
}

void save_annotation(const std::string& json_path, const std::string& image_rel,
                     const Sample& s) {
  json j;
  j["image"] = image_rel;
  j["points"] = json::array();
  for (const auto& p : s.points) j["points"].push_back({p[0], p[1]});
  j["boxes"] = json::array();
  for (const auto& b : s.boxes) j["boxes"].push_back({b.x1, b.y1, b.x2, b.y2});
  j["category_id"] = s.category_id;
  std::ofstream os(json_path);
  if (!os) throw IoError("annotation: cannot open for writing: " + json_path);
  os << j.dump(2) << "\n";
}

template <typename T>
void FeaturePyramid<T>::validate() const {
  if (groups.empty()) throw DimensionError("pyramid: no groups");
  int64_t prev_h = INT64_MAX, prev_w = INT64_MAX;
  for (size_t p = 0; p < groups.size(); ++p) {
    const auto& g = groups[p];
    if (g.levels.empty()) throw DimensionError("pyramid: empty group");
    const Shape& s0 = g.levels[0].shape();
    if (s0.size() != 3) throw DimensionError("pyramid: levels must be [C,H,W]");
    for (const auto& lvl : g.levels) {
      if (lvl.shape() != s0) {
        throw DimensionError("pyramid: level shape mismatch within group " +
                             std::to_string(p + 1) + ": " + shape_str(lvl.shape()) +
                             " vs " + shape_str(s0));
      }
    }
    if (s0[1] >= prev_h || s0[2] >= prev_w) {
      throw DimensionError("pyramid: spatial extents must strictly decrease with p");
    }
    prev_h = s0[1];
    prev_w = s0[2];
  }
}

template <typename T>
void save_pyramid(const std::string& manifest_path, const FeaturePyramid<T>& pyr,
                  int64_t image_h, int64_t image_w) {
  pyr.validate();
  const fs::path dir = fs::path(manifest_path).parent_path();
  json j;
  j["image_h"] = image_h;
  j["image_w"] = image_w;
  j["groups"] = json::array();
  for (size_t p = 0; p < pyr.groups.size(); ++p) {
    json g;
    g["stride"] = pyr.groups[p].stride;
    g["levels"] = json::array();
    for (size_t l = 0; l < pyr.groups[p].levels.size(); ++l) {
      const std::string name =
          "L" + std::to_string(p + 1) + "_" + std::to_string(l + 1) + ".ssdt";
      save_ssdt((dir / name).string(), pyr.groups[p].levels[l]);
      g["levels"].push_back(name);
    }
    j["groups"].push_back(g);
  }
  std::ofstream os(manifest_path);
  if (!os) throw IoError("pyramid: cannot open for writing: " + manifest_path);
  os << j.dump(2) << "\n";
}

template <typename T>
FeaturePyramid<T> load_pyramid(const std::string& manifest_path, int64_t* image_h,
                               int64_t* image_w) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("pyramid: cannot open: " + manifest_path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw IoError("pyramid: bad JSON in " + manifest_path + ": " + e.what());
  }
  const fs::path dir = fs::path(manifest_path).parent_path();
  FeaturePyramid<T> pyr;
  for (const auto& g : j.at("groups")) {
    typename FeaturePyramid<T>::Group group;
    group.stride = g.at("stride").get<int>();
    for (const auto& name : g.at("levels")) {
      group.levels.push_back(load_ssdt<T>((dir / name.get<std::string>()).string()));
    }
    pyr.groups.push_back(std::move(group));
  }
  if (image_h) *image_h = j.at("image_h").get<int64_t>();
  if (image_w) *image_w = j.at("image_w").get<int64_t>();
  pyr.validate();
  return pyr;
}

// -- roi_align ---------------------------------------------------------------------

namespace {

struct BilinearTap {
  int64_t idx[4];
  double w[4];
};

// Bilinear read at feature-grid position (u, v) (centers at integers), edge
// clamped; weight already includes the 1/4 sample average.
BilinearTap make_tap(double u, double v, int64_t hf, int64_t wf, double sample_w) {
  const auto clampf = [](double x, double hi) {
    return x < 0.0 ? 0.0 : (x > hi ? hi : x);
  };
  u = clampf(u, static_cast<double>(hf - 1));
  v = clampf(v, static_cast<double>(wf - 1));
  const int64_t y0 = static_cast<int64_t>(std::floor(u));
  const int64_t x0 = static_cast<int64_t>(std::floor(v));
  const int64_t y1 = std::min(y0 + 1, hf - 1);
  const int64_t x1 = std::min(x0 + 1, wf - 1);
  const double fy = u - static_cast<double>(y0);
  const double fx = v - static_cast<double>(x0);
  BilinearTap t;
  t.idx[0] = y0 * wf + x0;
  t.idx[1] = y0 * wf + x1;
  t.idx[2] = y1 * wf + x0;
  t.idx[3] = y1 * wf + x1;
  t.w[0] = (1.0 - fy) * (1.0 - fx) * sample_w;
  t.w[1] = (1.0 - fy) * fx * sample_w;
  t.w[2] = fy * (1.0 - fx) * sample_w;
  t.w[3] = fy * fx * sample_w;
  return t;
}

template <typename U>
using NodePtr = std::shared_ptr<detail::Node<U>>;

}  // namespace

template <typename T>
Tensor<T> roi_align(const Tensor<T>& feat, const ExemplarBox& box, int out_h,
                    int out_w, double feat_stride) {
  if (feat.ndim() != 3) {
    throw DimensionError("roi_align: expected [C,H,W], got " + shape_str(feat.shape()));
  }
  if (out_h < 1 || out_w < 1 || feat_stride <= 0.0) {
    throw DimensionError("roi_align: invalid output geometry");
  }
  if (!(box.x2 > box.x1) || !(box.y2 > box.y1)) {
    throw DimensionError("roi_align: degenerate box");
  }
  const int64_t c = feat.dim(0), hf = feat.dim(1), wf = feat.dim(2);
  if (box.x2 <= 0.0 || box.y2 <= 0.0 ||
      box.x1 >= static_cast<double>(wf) * feat_stride ||
      box.y1 >= static_cast<double>(hf) * feat_stride) {
    throw DimensionError("roi_align: box fully outside the feature map");
  }

  const double bin_h = box.height() / static_cast<double>(out_h);
  const double bin_w = box.width() / static_cast<double>(out_w);
  std::vector<BilinearTap> taps;
  taps.reserve(static_cast<size_t>(out_h * out_w * 4));
  for (int by = 0; by < out_h; ++by) {
    for (int bx = 0; bx < out_w; ++bx) {
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const double y = box.y1 + (by + (sy + 0.5) / 2.0) * bin_h;
          const double x = box.x1 + (bx + (sx + 0.5) / 2.0) * bin_w;
          taps.push_back(make_tap(y / feat_stride - 0.5, x / feat_stride - 0.5, hf, wf, 0.25));
        }
      }
    }
  }

  const auto& fv = feat.data();
  std::vector<T> out(static_cast<size_t>(c * out_h * out_w), T(0));
  for (int64_t ch = 0; ch < c; ++ch) {
    const T* plane = &fv[static_cast<size_t>(ch * hf * wf)];
    T* dst = &out[static_cast<size_t>(ch * out_h * out_w)];
    for (int64_t bin = 0; bin < out_h * out_w; ++bin) {
      T acc = T(0);
      for (int s = 0; s < 4; ++s) {
        const BilinearTap& t = taps[static_cast<size_t>(bin * 4 + s)];
        for (int q = 0; q < 4; ++q) acc += static_cast<T>(t.w[q]) * plane[t.idx[q]];
      }
      dst[bin] = acc;
    }
  }

  auto node = std::make_shared<detail::Node<T>>();
  node->shape = {c, out_h, out_w};
  node->data = std::make_shared<std::vector<T>>(std::move(out));
  node->op = "roi_align";
  check_finite(*node->data, "roi_align");
  auto pf = feat.node();
  if (grad_enabled() && pf->requires_grad) {
    node->requires_grad = true;
    node->parents = {pf};
    const int64_t bins = out_h * out_w;
    node->backward = [pf, taps, c, hf, wf, bins](detail::Node<T>& self) {
      pf->ensure_grad();
      for (int64_t ch = 0; ch < c; ++ch) {
        T* gplane = &pf->grad[static_cast<size_t>(ch * hf * wf)];
        const T* g = &self.grad[static_cast<size_t>(ch * bins)];
        for (int64_t bin = 0; bin < bins; ++bin) {
          const T gv = g[bin];
          if (gv == T(0)) continue;
          for (int s = 0; s < 4; ++s) {
            const BilinearTap& t = taps[static_cast<size_t>(bin * 4 + s)];
            for (int q = 0; q < 4; ++q) gplane[t.idx[q]] += static_cast<T>(t.w[q]) * gv;
          }
        }
      }
    };
  }
  return Tensor<T>(node);
}

#define SSC_INSTANTIATE(T)                                                             \
  template struct FeaturePyramid<T>;                                                   \
  template void save_pyramid<T>(const std::string&, const FeaturePyramid<T>&, int64_t, \
                                int64_t);                                              \
  template FeaturePyramid<T> load_pyramid<T>(const std::string&, int64_t*, int64_t*);  \
  template Tensor<T> roi_align<T>(const Tensor<T>&, const ExemplarBox&, int, int,      \
                                  double);

SSC_INSTANTIATE(float)
SSC_INSTANTIATE(double)

#undef SSC_INSTANTIATE

}  // namespace ssc
