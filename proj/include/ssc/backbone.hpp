#pragma once

#include "ssc/data.hpp"
#include "ssc/params.hpp"
#include "ssc/rng.hpp"

namespace ssc {

struct BackboneConfig {
  int channels = 32;                  // group channels are (c, 2c, 4c, ...)
  std::vector<int> levels = {2, 2, 2};  // |L_p| per group; size() == P
  bool frozen = false;
};

// Small deterministic conv stack emitting P groups at strides 8, 16, 32, ...
// Group p holds `levels[p]` feature maps of identical shape; adjacent groups
// halve the spatial extents and double the channels.
template <typename T>
class ToyBackbone {
 public:
  ToyBackbone(const BackboneConfig& cfg, Rng& rng);

  // Requires H and W divisible by 8 * 2^(P-1).
  FeaturePyramid<T> forward(const Tensor<T>& image) const;

  void collect_params(const std::string& prefix, ParamList<T>& out);
  int group_stride(size_t p) const { return 8 << static_cast<int>(p); }
  const BackboneConfig& config() const { return cfg_; }

 private:
  struct Conv {
    Tensor<T> w, b;
  };
  Conv make_conv(int cin, int cout, int k, Rng& rng);

  BackboneConfig cfg_;
  std::vector<Conv> stem_;              // three stride-2 convs
  std::vector<std::vector<Conv>> blocks_;  // per group, one conv per level
  std::vector<Conv> downs_;             // stride-2 transitions between groups
};

}  // namespace ssc
