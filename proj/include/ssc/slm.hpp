#pragma once

#include <atomic>
#include <memory>

#include "ssc/params.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

// Multiply counters for one 4D conv layer, filled while profiling is on.
// dense_equiv is what a full k^4 4D kernel would have cost on the same call.
struct Cp4dFlops {
  std::atomic<uint64_t> cp4d{0};
  std::atomic<uint64_t> dense_equiv{0};
};

void set_flop_profiling(bool on);
bool flop_profiling();

// One center-pivot 4D convolution: a query-axes kernel applied with the
// support position pinned at its pivot, plus a support-axes kernel applied
// with the query position pinned. Equivalent to a dense 4D convolution whose
// kernel is nonzero only where one of the two 2D offsets is zero (the shared
// center tap being the sum of both banks). No bias; normalization follows.
template <typename T>
struct Cp4dLayer {
  Tensor<T> w_query;    // [Cout,Cin,k,k] over the query axes
  Tensor<T> w_support;  // [Cout,Cin,k,k] over the exemplar axes
  Tensor<T> gn_gamma, gn_beta;
  int stride_q = 1;
  int stride_s = 1;
  std::shared_ptr<Cp4dFlops> flops = std::make_shared<Cp4dFlops>();
};

// s: [Cin,H,W,h,w], zero padding k/2 on all four spatial axes.
template <typename T>
Tensor<T> cp4d_conv(const Tensor<T>& s, const Cp4dLayer<T>& layer);

struct SlmConfig {
  std::vector<int> widths = {8, 16, 32};          // encoder output dims
  std::vector<int> support_strides = {2, 2, 2};   // per encoder layer
  int kernel = 3;
  int gn_groups = 4;
  double gn_eps = 1e-5;
};

// Similarity Learning Module: per-group strided 4D encoders, top-down fusion
// at stride 1, and mean pooling over the exemplar axes.
template <typename T>
class Slm {
 public:
  Slm(const SlmConfig& cfg, const std::vector<int>& group_in_channels, Rng& rng);

  // sim: [|L_p|,Hp,Wp,h,w] -> [Cout,Hp,Wp,h',w']
  Tensor<T> encode_group(const Tensor<T>& sim, size_t group) const;

  // encoded (one per group, extents decreasing) -> fused map [Cout,H1,W1]
  Tensor<T> fuse_topdown(const std::vector<Tensor<T>>& encoded) const;

  Tensor<T> forward(const std::vector<Tensor<T>>& sim_pyramid) const;

  void collect_params(const std::string& prefix, ParamList<T>& out);
  int out_channels() const { return cfg_.widths.back(); }
  const SlmConfig& config() const { return cfg_; }

  struct LayerFlops {
    std::string name;
    uint64_t cp4d;
    uint64_t dense_equiv;
  };
  std::vector<LayerFlops> flop_report() const;
  void reset_flops();

 private:
  Cp4dLayer<T> make_layer(int cin, int cout, int stride_s, Rng& rng);
  Tensor<T> run_stack(const std::vector<Cp4dLayer<T>>& stack, Tensor<T> x) const;

  SlmConfig cfg_;
  std::vector<std::vector<Cp4dLayer<T>>> encoders_;  // [P][depth]
  std::vector<std::vector<Cp4dLayer<T>>> fusers_;    // [P-1][depth], stride 1
};

}  // namespace ssc
