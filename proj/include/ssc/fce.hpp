#pragma once

#include "ssc/params.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

struct FceConfig {
  bool enabled = true;
  int ratio = 2;             // embedded channels = C / ratio
  bool dual_softmax = false;  // renormalize attention over query positions
                              // for the exemplar path
  bool per_level = false;     // separate params per pyramid level
};

// Mutual attention enhancement of query and exemplar features. One parameter
// set per large layer (optionally per level); the modulation branches start
// zero-initialized so enhancement begins as the identity.
template <typename T>
class Fce {
 public:
  Fce(const FceConfig& cfg, const std::vector<int>& group_channels,
      const std::vector<int>& group_levels, Rng& rng);

  // fq: [C,H,W]; fs: [C,K,h,w]. Row-normalized attention [(HW) x (Khw)].
  Tensor<T> attention(const Tensor<T>& fq, const Tensor<T>& fs, size_t group,
                      size_t level = 0) const;

  struct Enhanced {
    Tensor<T> query;     // [C,H,W]
    Tensor<T> exemplar;  // [C,K,h,w]
  };
  Enhanced enhance(const Tensor<T>& fq, const Tensor<T>& fs, size_t group,
                   size_t level = 0) const;

  void collect_params(const std::string& prefix, ParamList<T>& out);
  const FceConfig& config() const { return cfg_; }

 private:
  struct Params {
    Tensor<T> proj_v_w, proj_v_b;  // [Ce,C,1,1] shared value transform
    Tensor<T> proj_q_w, proj_q_b;
    Tensor<T> proj_k_w, proj_k_b;
    Tensor<T> mlp_q_w1, mlp_q_b1, mlp_q_w2, mlp_q_b2;  // per-position C->C->C
    Tensor<T> mlp_s_w1, mlp_s_b1, mlp_s_w2, mlp_s_b2;
    Tensor<T> trans_q_w, trans_q_b;  // [C,Ce,1,1], zero-initialized
    Tensor<T> trans_s_w, trans_s_b;
  };
  const Params& at(size_t group, size_t level) const;

  FceConfig cfg_;
  std::vector<int> channels_;
  std::vector<std::vector<Params>> params_;  // [group][level or 0]
};

}  // namespace ssc
