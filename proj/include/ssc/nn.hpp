#pragma once

#include "ssc/tensor.hpp"

namespace ssc {

// Cross-correlation of x[Cin,H,W] with w[Cout,Cin,k,k] (k odd), zero padding.
// Pass an undefined tensor as `bias` for no bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int stride, int pad);

// Bilinear upscale of axes (h_axis, h_axis+1) to (out_h, out_w), half-pixel
// centers with edge clamping: src = (i + 0.5) * in / out - 0.5.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int64_t out_h, int64_t out_w,
                            int h_axis = 1);

// Normalizes each channel group to zero mean / unit variance over all of its
// channels and spatial positions, then applies the per-channel affine.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5));

}  // namespace ssc
