#include "ssc/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ssc/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ssc {

template <typename T>
AdamW<T>::AdamW(ParamList<T> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.value.numel()), T(0));
    v_.emplace_back(static_cast<size_t>(p.value.numel()), T(0));
  }
}

template <typename T>
bool AdamW<T>::step(double grad_scale) {
  for (const auto& p : params_) {
    if (!p.value.has_grad()) continue;
    for (T g : p.value.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        ++skipped_;
        return false;
      }
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const bool has_grad = p.value.has_grad();
    const std::vector<T>* grad = has_grad ? &p.value.grad() : nullptr;
    auto& m = m_[i];
    auto& v = v_[i];
    p.value.apply_update([&](std::vector<T>& w) {
      for (size_t j = 0; j < w.size(); ++j) {
        const double g = has_grad ? static_cast<double>((*grad)[j]) * grad_scale : 0.0;
        const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * g;
        const double vj =
            cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * g * g;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double m_hat = mj / bc1;
        const double v_hat = vj / bc2;
        double wj = static_cast<double>(w[j]);
        wj -= cfg_.lr * cfg_.weight_decay * wj;  // decoupled decay
        wj -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        w[j] = static_cast<T>(wj);
      }
    });
  }
  return true;
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template <typename T>
double grad_global_norm(const ParamList<T>& params) {
  double acc = 0.0;
  for (const auto& p : params) {
    if (!p.value.has_grad()) continue;
    for (T g : p.value.grad()) {
      const double gg = static_cast<double>(g);
      acc += gg * gg;
    }
  }
  return std::sqrt(acc);
}

EvalReport compute_metrics(const std::vector<std::pair<double, double>>& gt_pred) {
  if (gt_pred.empty()) throw Error("metrics: empty report");
  EvalReport r;
  r.per_sample = gt_pred;
  double abs_sum = 0.0, sq_sum = 0.0;
  for (const auto& [gt, pred] : gt_pred) {
    const double d = pred - gt;
    abs_sum += std::abs(d);
    sq_sum += d * d;
  }
  const double n = static_cast<double>(gt_pred.size());
  r.mae = abs_sum / n;
  r.rmse = std::sqrt(sq_sum / n);
  if (r.rmse + 1e-12 < r.mae) throw NumericError("metrics: rmse < mae");
  return r;
}

template <typename T>
EvalReport evaluate_model(const Model<T>& model, const std::vector<Sample>& samples,
                          bool apply_dis, const DisConfig& dis) {
  if (samples.empty()) throw Error("evaluate: empty dataset");
  NoGradGuard ng;
  typename Model<T>::RunOptions opts;
  opts.apply_dis = apply_dis;
  opts.dis = dis;
  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(samples.size());
  for (const auto& s : samples) {
    auto fwd = model.run(s, opts);
    pairs.emplace_back(static_cast<double>(s.count()),
                       Model<T>::predicted_count(fwd.density));
  }
  return compute_metrics(pairs);
}

std::vector<Sample> load_split(const std::string& dir, int shots) {
  std::vector<Sample> out;
  for (const auto& path : list_dataset(dir)) {
    Sample s = load_sample(path);
    if (shots > 0 && static_cast<int>(s.boxes.size()) > shots) {
      s.boxes.resize(static_cast<size_t>(shots));
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

void fisher_yates(std::vector<size_t>& idx, Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
}

std::vector<std::array<double, 2>> scaled_points(const Sample& s, double scale) {
  auto pts = s.points;
  for (auto& p : pts) {
    p[0] *= scale;
    p[1] *= scale;
  }
  return pts;
}

void append_log(std::ofstream& os, const json& line) {
  const std::string text = line.dump();
  os << text << "\n";
  os.flush();
  std::cout << text << "\n";
}

}  // namespace

TrainResult run_training(const RunConfig& cfg, const std::string& data_dir,
                         const std::string& out_dir) {
  ModelConfig model_cfg = cfg.model;
  model_cfg.fce.enabled = cfg.train.fce;  // ablation toggle

  const TrainConfig& tc = cfg.train;
  if (tc.batch_size < 1 || tc.epochs < 0 || tc.lr <= 0.0 || tc.lr_decay <= 0.0 ||
      tc.lr_decay > 1.0) {
    throw Error("train: invalid schedule configuration");
  }

  std::vector<Sample> train_set = load_split((fs::path(data_dir) / "train").string(), tc.shots);
  std::vector<Sample> val_set = load_split((fs::path(data_dir) / "val").string(), tc.shots);
  if (train_set.empty() || val_set.empty()) throw Error("train: empty split");

  fs::create_directories(out_dir);
  std::ofstream log((fs::path(out_dir) / "train_log.jsonl").string());
  if (!log) throw IoError("train: cannot open log in " + out_dir);

  Model<float> model(model_cfg, tc.seed);
  AdamWConfig optim_cfg{tc.lr, tc.beta1, tc.beta2, 1e-8, tc.weight_decay};
  ParamList<float> trainable;
  for (auto& p : model.params()) {
    if (p.value.requires_grad()) trainable.push_back(p);
  }
  AdamW<float> optim(trainable, optim_cfg);

  typename Model<float>::RunOptions run_opts;
  run_opts.apply_dis = tc.dis;
  run_opts.dis = tc.dis_cfg;

  TrainResult result;
  result.log_path = (fs::path(out_dir) / "train_log.jsonl").string();

  {
    const EvalReport train_eval = evaluate_model(model, train_set, tc.dis, tc.dis_cfg);
    const EvalReport val_eval = evaluate_model(model, val_set, tc.dis, tc.dis_cfg);
    result.epoch0_train_mae = train_eval.mae;
    json line = {{"epoch", 0},
                 {"train_mae", train_eval.mae},
                 {"val_mae", val_eval.mae},
                 {"val_rmse", val_eval.rmse},
                 {"lr", tc.lr}};
    append_log(log, line);
  }

  Rng shuffle_rng(mix_seed(tc.seed, 0x73687566));
  double lr = tc.lr;
  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    fisher_yates(order, shuffle_rng);
    double loss_sum = 0.0;
    double abs_err_sum = 0.0;
    int64_t ot_iters = 0, ot_solves = 0;
    size_t cursor = 0;
    while (cursor < order.size()) {
      const size_t batch_end = std::min(cursor + static_cast<size_t>(tc.batch_size),
                                        order.size());
      const size_t batch_n = batch_end - cursor;
      optim.zero_grad();
      for (size_t bi = cursor; bi < batch_end; ++bi) {
        const Sample& s = train_set[order[bi]];
        try {
          auto fwd = model.run(s, run_opts);
          Tensor<float> loss;
          if (tc.gloss) {
            OtStats stats;
            loss = generalized_loss(fwd.density, scaled_points(s, fwd.scale), tc.ot,
                                    &stats);
            ot_iters += stats.iterations;
            ++ot_solves;
          } else {
            loss = mse_density_loss(fwd.density, scaled_points(s, fwd.scale), tc.mse_sigma);
          }
          loss_sum += static_cast<double>(loss.data()[0]);
          abs_err_sum += std::abs(Model<float>::predicted_count(fwd.density) -
                                  static_cast<double>(s.count()));
          loss.backward();
        } catch (const NumericError& e) {
          json diag = {{"epoch", epoch},
                       {"sample_index", static_cast<int64_t>(order[bi])},
                       {"error", e.what()}};
          std::ofstream ds((fs::path(out_dir) / "diagnostics.json").string());
          ds << diag.dump(2) << "\n";
          throw;
        }
      }
      double scale_factor = 1.0 / static_cast<double>(batch_n);
      const double norm = grad_global_norm(trainable) * scale_factor;
      if (std::isfinite(norm)) {
        if (tc.clip_norm > 0.0 && norm > tc.clip_norm) {
          scale_factor *= tc.clip_norm / norm;
        }
        optim.set_lr(lr);
        optim.step(scale_factor);
      } else {
        optim.step(scale_factor);  // skipped and counted inside
      }
      cursor = batch_end;
    }

    lr *= tc.lr_decay;
    const EvalReport val_eval = evaluate_model(model, val_set, tc.dis, tc.dis_cfg);
    result.final_train_mae = abs_err_sum / static_cast<double>(train_set.size());
    result.final_val = val_eval;
    json line = {{"epoch", epoch},
                 {"train_loss", loss_sum / static_cast<double>(train_set.size())},
                 {"train_mae", result.final_train_mae},
                 {"val_mae", val_eval.mae},
                 {"val_rmse", val_eval.rmse},
                 {"lr", lr},
                 {"skipped_steps", optim.skipped_steps()}};
    if (ot_solves > 0) {
      line["ot_iters_mean"] =
          static_cast<double>(ot_iters) / static_cast<double>(ot_solves);
    }
    append_log(log, line);
  }

  // atomic checkpoint: write into a temp dir, then rename
  const fs::path final_dir = fs::path(out_dir) / "checkpoint";
  const fs::path tmp_dir = fs::path(out_dir) / "checkpoint.tmp";
  std::error_code ec;
  fs::remove_all(tmp_dir, ec);
  model.save_checkpoint(tmp_dir.string());
  fs::remove_all(final_dir, ec);
  fs::rename(tmp_dir, final_dir);
  result.checkpoint_dir = final_dir.string();
  return result;
}

#define SSC_INSTANTIATE(T)                                                      \
  template class AdamW<T>;                                                      \
  template double grad_global_norm<T>(const ParamList<T>&);                     \
  template EvalReport evaluate_model<T>(const Model<T>&, const std::vector<Sample>&, \
                                        bool, const DisConfig&);

SSC_INSTANTIATE(float)
SSC_INSTANTIATE(double)

#undef SSC_INSTANTIATE

}  // namespace ssc
