#pragma once

#include <string>

#include "ssc/tensor.hpp"

namespace ssc {

// Binary PPM (P6, maxval 255) <-> [3,H,W] float tensor in [0,1].
Tensor<float> load_ppm(const std::string& path);
void save_ppm(const std::string& path, const Tensor<float>& image);

// Binary PGM (P5, maxval 255). Values are mapped [lo,hi] -> 0..255; callers
// record (lo,hi) in a sidecar so the export stays invertible.
template <typename T>
void save_pgm(const std::string& path, const Tensor<T>& plane, double lo, double hi);
Tensor<float> load_pgm(const std::string& path);  // -> [H,W] in [0,1]

}  // namespace ssc
