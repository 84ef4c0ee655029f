#pragma once

#include "ssc/tensor.hpp"

namespace ssc {

// Point-to-point ReLU'd cosine similarity between every query position of
// eq[C,H,W] and every exemplar position of es[C,h,w] -> [H,W,h,w] in [0,1].
// Zero-norm vectors are handled by clamping each norm at 1e-8.
template <typename T>
Tensor<T> cosine_similarity_4d(const Tensor<T>& eq, const Tensor<T>& es);

// Stacks the per-level 4D tensors of each large layer along a new leading
// axis: groups[p] of n levels -> [n,Hp,Wp,h,w], for one exemplar.
template <typename T>
std::vector<Tensor<T>> build_similarity_pyramid(
    const std::vector<std::vector<Tensor<T>>>& query_groups,
    const std::vector<std::vector<Tensor<T>>>& exemplar_groups);

}  // namespace ssc
