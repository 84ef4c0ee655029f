#pragma once

#include <string>

#include "ssc/tensor.hpp"

// SSDT tensor file format, version 1:
//   bytes 0..3   magic "SSDT"
//   u32          version (= 1)
//   u8           dtype: 0 = f32, 1 = f64
//   u32          ndim
//   ndim x u32   extents
//   payload      row-major values, little-endian
// All integers little-endian. Used for feature ingestion, checkpoints and
// density-map export.

namespace ssc {

// Writes with dtype matching T (float -> f32, double -> f64).
template <typename T>
void save_ssdt(const std::string& path, const Tensor<T>& t);

// Reads any dtype, converting values to T.
template <typename T>
Tensor<T> load_ssdt(const std::string& path);

}  // namespace ssc
