#pragma once

#include <array>
#include <string>
#include <vector>

#include "ssc/tensor.hpp"

namespace ssc {

struct ExemplarBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
};

// Dynamic image scale hyperparameters (threshold / divisor, in pixels).
struct DisConfig {
  double gamma = 32.0;
  double eta = 12.0;
};

// Mean exemplar extent against the DIS threshold: 1.0 when min of the mean
// (width, height) reaches gamma, otherwise (gamma - min)/eta + 1.
double dynamic_scale(const std::vector<ExemplarBox>& boxes, const DisConfig& cfg);

// One annotated query: an image (or a reference to a precomputed feature
// pyramid), K exemplar boxes and the dot annotations.
struct Sample {
  Tensor<float> image;      // [3,H,W] in [0,1]; undefined when feature_ref set
  std::string feature_ref;  // pyramid manifest path ("" for image samples)
  std::vector<ExemplarBox> boxes;
  std::vector<std::array<double, 2>> points;  // (x, y) pixel coordinates
  int category_id = 0;

  bool has_image() const { return image.defined(); }
  int64_t count() const { return static_cast<int64_t>(points.size()); }
};

// Throws unless K >= 1, boxes are proper and inside the image, points inside.
void validate_sample(const Sample& s);

// Bilinear image resize by `scale` >= 1 with box/point coordinates scaled.
Sample resize_sample(const Sample& s, double scale);

// Zero-pads the image on the bottom/right to the next multiple; annotations
// are unchanged (they stay within the original extents).
Sample pad_sample_to_multiple(const Sample& s, int64_t multiple);

// Annotation JSON: {image, points, boxes, category_id}; the image path is
// resolved relative to the JSON file. An image path ending in .json is
// treated as a feature-pyramid manifest reference.
Sample load_sample(const std::string& json_path);
void save_annotation(const std::string& json_path, const std::string& image_rel,
                     const Sample& s);

template <typename T>
struct FeaturePyramid {
  struct Group {
    int stride = 0;
    std::vector<Tensor<T>> levels;  // equal [C,Hp,Wp] within the group
  };
  std::vector<Group> groups;  // spatial extents strictly decrease with p

  void validate() const;
};

// Pyramid manifest JSON {image_h, image_w, groups:[{stride, levels:[...]}]}
// with per-level SSDT files L{p}_{l}.ssdt next to it.
template <typename T>
void save_pyramid(const std::string& manifest_path, const FeaturePyramid<T>& pyr,
                  int64_t image_h, int64_t image_w);
template <typename T>
FeaturePyramid<T> load_pyramid(const std::string& manifest_path, int64_t* image_h,
                               int64_t* image_w);

// RoIAlign: the box is split into out_h x out_w bins, each averaging 2x2
// bilinear samples taken at quarter offsets. feat_stride maps image pixels to
// feature cells; feature cell centers sit at (i + 0.5) * feat_stride.
// Differentiable w.r.t. feat.
template <typename T>
Tensor<T> roi_align(const Tensor<T>& feat, const ExemplarBox& box, int out_h,
                    int out_w, double feat_stride);

}  // namespace ssc
