#pragma once

#include "ssc/data.hpp"

namespace ssc {

// Synthetic counting scenes: N non-overlapping textured blobs of one target
// category plus a few distractor blobs of other categories, on a noisy
// background. Points mark target blob centers; K exemplar boxes wrap randomly
// chosen target blobs. Fully deterministic per (seed, sample index).
struct SynthConfig {
  int64_t image_h = 128;
  int64_t image_w = 192;
  int count_min = 4;
  int count_max = 15;
  int shots = 3;
  int distractor_min = 1;
  int distractor_max = 4;
  double blob_half_min = 6.0;   // blob half-extents, pixels
  double blob_half_max = 12.0;
  std::vector<int> categories = {0, 1, 2, 3, 4, 5, 6, 7};
  uint64_t seed = 0;
};

Sample synth_sample(const SynthConfig& cfg, uint64_t index);

// Writes sample_%05d.{ppm,json} plus dataset.json into out_dir.
void synth_dataset(const SynthConfig& cfg, const std::string& out_dir, int n);

// Lists annotation paths from out_dir/dataset.json.
std::vector<std::string> list_dataset(const std::string& dir);

}  // namespace ssc
