#pragma once

#include "ssc/model.hpp"

namespace ssc {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

// Decoupled-weight-decay Adam with bias correction. Steps with non-finite
// gradients are skipped (and counted) rather than applied.
template <typename T>
class AdamW {
 public:
  AdamW(ParamList<T> params, AdamWConfig cfg);

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }

  // grad_scale multiplies every gradient on read (batch averaging/clipping).
  // Returns false when the step was skipped due to non-finite gradients.
  bool step(double grad_scale = 1.0);
  void zero_grad();
  int64_t skipped_steps() const { return skipped_; }

 private:
  ParamList<T> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  int64_t t_ = 0;
  int64_t skipped_ = 0;
};

// Global L2 norm over all accumulated gradients (0 for absent grads).
template <typename T>
double grad_global_norm(const ParamList<T>& params);

struct EvalReport {
  double mae = 0.0;
  double rmse = 0.0;
  std::vector<std::pair<double, double>> per_sample;  // (gt, pred)
};

// MAE / RMSE over (gt, pred) pairs; enforces rmse >= mae.
EvalReport compute_metrics(const std::vector<std::pair<double, double>>& gt_pred);

template <typename T>
EvalReport evaluate_model(const Model<T>& model, const std::vector<Sample>& samples,
                          bool apply_dis, const DisConfig& dis);

struct TrainResult {
  std::string log_path;
  std::string checkpoint_dir;
  double final_train_mae = 0.0;
  double epoch0_train_mae = 0.0;
  EvalReport final_val;
};

// Full training run over data_dir/{train,val}; writes train_log.jsonl and a
// final checkpoint into out_dir. Deterministic given cfg.train.seed.
TrainResult run_training(const RunConfig& cfg, const std::string& data_dir,
                         const std::string& out_dir);

// Loads every annotation listed by the split's dataset.json, truncating
// exemplar boxes to `shots`.
std::vector<Sample> load_split(const std::string& dir, int shots);

}  // namespace ssc
