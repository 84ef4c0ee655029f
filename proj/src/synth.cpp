#include "ssc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "ssc/image_io.hpp"
#include "ssc/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ssc {

namespace {

struct Blob {
  double cx, cy, rx, ry;
  int category;
};

// Procedural per-category appearance: a saturated base color, stripe field
// and speckle, all derived from the category id so train/val category sets
// stay visually disjoint.
struct CategoryStyle {
  double base[3];
  double alt[3];
  double freq_x, freq_y, phase;

  explicit CategoryStyle(int category) {
    Rng rng(mix_seed(0x5eedc0de, static_cast<uint64_t>(category)));
    const int hue = static_cast<int>(rng.uniform_int(0, 5));
    const double hi = rng.uniform(0.75, 0.95);
    const double lo = rng.uniform(0.05, 0.25);
    const double mid = rng.uniform(0.3, 0.6);
    const double palette[6][3] = {{hi, lo, lo},  {lo, hi, lo},  {lo, lo, hi},
                                  {hi, hi, lo},  {hi, lo, hi},  {lo, hi, hi}};
    for (int c = 0; c < 3; ++c) {
      base[c] = palette[hue][c];
      alt[c] = std::clamp(palette[hue][c] * 0.4 + mid * 0.4, 0.0, 1.0);
    }
    freq_x = rng.uniform(0.5, 1.6) * (rng.uniform() < 0.5 ? 1.0 : -1.0);
    freq_y = rng.uniform(0.5, 1.6);
    phase = rng.uniform(0.0, 6.28318530717958647692);
  }
};

bool overlaps(const Blob& a, const Blob& b, double gap) {
  return std::abs(a.cx - b.cx) < a.rx + b.rx + gap &&
         std::abs(a.cy - b.cy) < a.ry + b.ry + gap;
}

void render(std::vector<float>& img, int64_t h, int64_t w, const Blob& blob,
            const CategoryStyle& style) {
  const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(blob.cy - blob.ry - 1));
  const int64_t y1 = std::min<int64_t>(h - 1, static_cast<int64_t>(blob.cy + blob.ry + 1));
  const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(blob.cx - blob.rx - 1));
  const int64_t x1 = std::min<int64_t>(w - 1, static_cast<int64_t>(blob.cx + blob.rx + 1));
  for (int64_t y = y0; y <= y1; ++y) {
    for (int64_t x = x0; x <= x1; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double dx = (px - blob.cx) / blob.rx, dy = (py - blob.cy) / blob.ry;
      const double r2 = dx * dx + dy * dy;
      if (r2 > 1.0) continue;
      const double stripe =
          0.5 + 0.5 * std::sin(style.freq_x * (px - blob.cx) +
                               style.freq_y * (py - blob.cy) + style.phase);
      const double edge = std::min(1.0, 4.0 * (1.0 - r2));  // soft rim
      for (int c = 0; c < 3; ++c) {
        const double v = style.base[c] * stripe + style.alt[c] * (1.0 - stripe);
        float& dst = img[static_cast<size_t>((c * h + y) * w + x)];
        dst = static_cast<float>(edge * v + (1.0 - edge) * dst);
      }
    }
  }
}

}  // namespace

Sample synth_sample(const SynthConfig& cfg, uint64_t index) {
  if (cfg.categories.empty()) throw Error("synth: needs a category pool");
  if (cfg.shots < 1) throw Error("synth: shots must be >= 1");
  Rng rng(mix_seed(cfg.seed, index));

  const int64_t h = cfg.image_h, w = cfg.image_w;
  const int target_cat =
      cfg.categories[static_cast<size_t>(rng.uniform_int(0, cfg.categories.size() - 1))];

  int want = static_cast<int>(rng.uniform_int(cfg.count_min, cfg.count_max));
  int distractors = static_cast<int>(rng.uniform_int(cfg.distractor_min, cfg.distractor_max));

  std::vector<Blob> placed;
  auto try_place = [&](int category) -> bool {
    for (int attempt = 0; attempt < 200; ++attempt) {
      Blob b;
      b.rx = rng.uniform(cfg.blob_half_min, cfg.blob_half_max);
      b.ry = rng.uniform(cfg.blob_half_min, cfg.blob_half_max);
      b.cx = rng.uniform(b.rx + 1.0, static_cast<double>(w) - b.rx - 1.0);
      b.cy = rng.uniform(b.ry + 1.0, static_cast<double>(h) - b.ry - 1.0);
      b.category = category;
      bool ok = true;
      for (const auto& other : placed) {
        if (overlaps(b, other, 2.0)) {
          ok = false;
          break;
        }
      }
      if (ok) {
        placed.push_back(b);
        return true;
      }
    }
    return false;
  };

  std::vector<size_t> target_idx;
  for (int i = 0; i < want; ++i) {
    if (try_place(target_cat)) {
      target_idx.push_back(placed.size() - 1);
    }
    // placement failure silently reduces the object count
  }
  if (target_idx.empty()) throw Error("synth: could not place any target blob");
  for (int i = 0; i < distractors; ++i) {
    int cat = target_cat;
    while (cat == target_cat) {
      cat = cfg.categories[static_cast<size_t>(rng.uniform_int(0, cfg.categories.size() - 1))];
    }
    try_place(cat);
  }

  // Background: gentle gradient plus speckle.
  std::vector<float> img(static_cast<size_t>(3 * h * w));
  const double g0 = rng.uniform(0.35, 0.5);
  const double gx = rng.uniform(-0.08, 0.08) / static_cast<double>(w);
  const double gy = rng.uniform(-0.08, 0.08) / static_cast<double>(h);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const double base = g0 + gx * static_cast<double>(x) + gy * static_cast<double>(y) +
                          0.03 * (rng.uniform() - 0.5);
      for (int c = 0; c < 3; ++c) {
        img[static_cast<size_t>((c * h + y) * w + x)] =
            static_cast<float>(std::clamp(base, 0.0, 1.0));
      }
    }
  }
  for (const auto& b : placed) render(img, h, w, b, CategoryStyle(b.category));

  Sample s;
  s.image = Tensor<float>::from({3, h, w}, std::move(img));
  s.category_id = target_cat;
  for (size_t i : target_idx) {
    s.points.push_back({placed[i].cx, placed[i].cy});
  }
  std::vector<size_t> pool = target_idx;
  std::shuffle(pool.begin(), pool.end(), rng.engine());
  const int k = std::min<int>(cfg.shots, static_cast<int>(pool.size()));
  for (int i = 0; i < k; ++i) {
    const Blob& b = placed[pool[static_cast<size_t>(i)]];
    s.boxes.push_back({b.cx - b.rx, b.cy - b.ry, b.cx + b.rx, b.cy + b.ry});
  }
  // Top up by repeating boxes when fewer targets than shots were placed.
  while (static_cast<int>(s.boxes.size()) < cfg.shots) s.boxes.push_back(s.boxes.front());
  validate_sample(s);
  return s;
}

void synth_dataset(const SynthConfig& cfg, const std::string& out_dir, int n) {
  fs::create_directories(out_dir);
  json manifest;
  manifest["samples"] = json::array();
  for (int i = 0; i < n; ++i) {
    const Sample s = synth_sample(cfg, static_cast<uint64_t>(i));
    char stem[32];
    std::snprintf(stem, sizeof(stem), "sample_%05d", i);
    const std::string ppm = std::string(stem) + ".ppm";
    const std::string ann = std::string(stem) + ".json";
    save_ppm((fs::path(out_dir) / ppm).string(), s.image);
    save_annotation((fs::path(out_dir) / ann).string(), ppm, s);
    manifest["samples"].push_back(ann);
  }
  std::ofstream os((fs::path(out_dir) / "dataset.json").string());
  if (!os) throw IoError("synth: cannot write dataset manifest in " + out_dir);
  os << manifest.dump(2) << "\n";
}

std::vector<std::string> list_dataset(const std::string& dir) {
  const std::string manifest_path = (fs::path(dir) / "dataset.json").string();
  std::ifstream is(manifest_path);
  if (!is) throw IoError("dataset: cannot open: " + manifest_path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw IoError("dataset: bad JSON in " + manifest_path + ": " + e.what());
  }
  std::vector<std::string> out;
  for (const auto& name : j.at("samples")) {
    out.push_back((fs::path(dir) / name.get<std::string>()).string());
  }
  return out;
}

}  // namespace ssc
