#pragma once

#include <optional>

#include "ssc/config.hpp"
#include "ssc/decoder.hpp"
#include "ssc/fce.hpp"
#include "ssc/similarity.hpp"

namespace ssc {

// The full counting pipeline: (DIS ->) backbone -> RoIAlign -> FCE ->
// 4D similarity pyramid -> SLM -> decoder, averaged over exemplars.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t seed);

  struct RunOptions {
    bool apply_dis = true;
    DisConfig dis;
    bool want_similarity = false;  // keep per-(k,p) similarity stacks
    bool want_trace = false;       // keep raw/enhanced feature levels
  };

  struct Forward {
    Tensor<T> density;                    // [1,Hs,Ws], DIS-scaled extents
    std::vector<Tensor<T>> per_exemplar;  // K maps, same extents
    double scale = 1.0;
    int64_t image_h = 0, image_w = 0;
    std::vector<std::vector<Tensor<T>>> similarity;  // [K][P]
    std::vector<Tensor<T>> raw_levels;       // trace: backbone outputs
    std::vector<Tensor<T>> enhanced_levels;  // trace: post-FCE query features
  };

  Forward run(const Sample& s, const RunOptions& opts) const;

  static double predicted_count(const Tensor<T>& density);

  ParamList<T>& params() { return params_; }
  const ModelConfig& config() const { return cfg_; }
  Slm<T>& slm() { return slm_; }

  void save_checkpoint(const std::string& dir) const;
  static Model load_checkpoint(const std::string& dir);

 private:
  ModelConfig cfg_;
  ToyBackbone<T> backbone_;
  std::optional<Fce<T>> fce_;
  Slm<T> slm_;
  Decoder<T> decoder_;
  ParamList<T> params_;

  static std::vector<int> group_channels(const ModelConfig& cfg);
  static std::vector<int> group_levels(const ModelConfig& cfg);
};

}  // namespace ssc
