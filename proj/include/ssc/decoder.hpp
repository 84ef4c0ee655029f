#pragma once

#include "ssc/params.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

struct DecoderConfig {
  std::vector<int> widths = {16, 8, 4};  // one conv width per upsample block
};

// Regression decoder: repeated [conv3x3 -> relu -> upsample x2] blocks until
// the input-image extents are reached, then a 1x1 conv + relu head emitting a
// nonnegative single-channel density map.
template <typename T>
class Decoder {
 public:
  Decoder(const DecoderConfig& cfg, int in_channels, Rng& rng);

  // m: [C,H1,W1]; out_h/out_w must equal H1,W1 times 2^blocks.
  Tensor<T> forward(const Tensor<T>& m, int64_t out_h, int64_t out_w) const;

  void collect_params(const std::string& prefix, ParamList<T>& out);

 private:
  struct Conv {
    Tensor<T> w, b;
  };
  DecoderConfig cfg_;
  std::vector<Conv> blocks_;
  Conv head_;
};

// Pointwise mean of the K per-exemplar density maps.
template <typename T>
Tensor<T> average_exemplars(const std::vector<Tensor<T>>& maps);

}  // namespace ssc
