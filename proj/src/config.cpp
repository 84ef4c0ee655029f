#include "ssc/config.hpp"

#include <fstream>

using nlohmann::json;

namespace ssc {

RunConfig desk_run_config() {
  RunConfig cfg;
  cfg.model.backbone.channels = 32;
  cfg.model.backbone.levels = {2, 2, 2};
  cfg.model.roi_size = 8;
  cfg.model.slm.widths = {8, 16, 32};
  cfg.model.slm.support_strides = {2, 2, 2};
  cfg.model.decoder.widths = {16, 8, 4};
  cfg.train.epochs = 30;
  cfg.train.lr = 2e-3;
  cfg.train.dis_cfg.gamma = 16.0;  // desk blobs are small; 32 would upscale everything
  cfg.train.ot.pool_stride = 4;
  return cfg;
}

RunConfig full_run_config() {
  RunConfig cfg;
  cfg.model.backbone.channels = 32;
  cfg.model.backbone.levels = {4, 6, 3};
  cfg.model.roi_size = 16;
  cfg.model.slm.widths = {32, 128, 256};
  cfg.model.slm.support_strides = {2, 2, 2};
  cfg.model.decoder.widths = {128, 64, 32};
  cfg.synth.image_h = 384;
  cfg.synth.image_w = 576;
  return cfg;
}

json model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["backbone"] = {{"channels", cfg.backbone.channels},
                   {"levels", cfg.backbone.levels},
                   {"frozen", cfg.backbone.frozen}};
  j["roi_size"] = cfg.roi_size;
  j["fce"] = {{"enabled", cfg.fce.enabled},
              {"ratio", cfg.fce.ratio},
              {"dual_softmax", cfg.fce.dual_softmax},
              {"per_level", cfg.fce.per_level}};
  j["slm"] = {{"widths", cfg.slm.widths},
              {"support_strides", cfg.slm.support_strides},
              {"kernel", cfg.slm.kernel},
              {"gn_groups", cfg.slm.gn_groups},
              {"gn_eps", cfg.slm.gn_eps}};
  j["decoder"] = {{"widths", cfg.decoder.widths}};
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  if (j.contains("backbone")) {
    const auto& b = j["backbone"];
    cfg.backbone.channels = b.value("channels", cfg.backbone.channels);
    if (b.contains("levels")) cfg.backbone.levels = b["levels"].get<std::vector<int>>();
    cfg.backbone.frozen = b.value("frozen", cfg.backbone.frozen);
  }
  cfg.roi_size = j.value("roi_size", cfg.roi_size);
  if (j.contains("fce")) {
    const auto& f = j["fce"];
    cfg.fce.enabled = f.value("enabled", cfg.fce.enabled);
    cfg.fce.ratio = f.value("ratio", cfg.fce.ratio);
    cfg.fce.dual_softmax = f.value("dual_softmax", cfg.fce.dual_softmax);
    cfg.fce.per_level = f.value("per_level", cfg.fce.per_level);
  }
  if (j.contains("slm")) {
    const auto& s = j["slm"];
    if (s.contains("widths")) cfg.slm.widths = s["widths"].get<std::vector<int>>();
    if (s.contains("support_strides")) {
      cfg.slm.support_strides = s["support_strides"].get<std::vector<int>>();
    }
    cfg.slm.kernel = s.value("kernel", cfg.slm.kernel);
    cfg.slm.gn_groups = s.value("gn_groups", cfg.slm.gn_groups);
    cfg.slm.gn_eps = s.value("gn_eps", cfg.slm.gn_eps);
  }
  if (j.contains("decoder") && j["decoder"].contains("widths")) {
    cfg.decoder.widths = j["decoder"]["widths"].get<std::vector<int>>();
  }
  return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["lr"] = cfg.lr;
  j["lr_decay"] = cfg.lr_decay;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["weight_decay"] = cfg.weight_decay;
  j["seed"] = cfg.seed;
  j["fce"] = cfg.fce;
  j["gloss"] = cfg.gloss;
  j["dis"] = cfg.dis;
  j["shots"] = cfg.shots;
  j["dis_gamma"] = cfg.dis_cfg.gamma;
  j["dis_eta"] = cfg.dis_cfg.eta;
  j["ot"] = {{"eps", cfg.ot.eps},
             {"tau", cfg.ot.tau},
             {"max_iter", cfg.ot.max_iter},
             {"tol", cfg.ot.tol},
             {"pool_stride", cfg.ot.pool_stride}};
  j["mse_sigma"] = cfg.mse_sigma;
  j["clip_norm"] = cfg.clip_norm;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  cfg.lr = j.value("lr", cfg.lr);
  cfg.lr_decay = j.value("lr_decay", cfg.lr_decay);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.fce = j.value("fce", cfg.fce);
  cfg.gloss = j.value("gloss", cfg.gloss);
  cfg.dis = j.value("dis", cfg.dis);
  cfg.shots = j.value("shots", cfg.shots);
  cfg.dis_cfg.gamma = j.value("dis_gamma", cfg.dis_cfg.gamma);
  cfg.dis_cfg.eta = j.value("dis_eta", cfg.dis_cfg.eta);
  if (j.contains("ot")) {
    const auto& o = j["ot"];
    cfg.ot.eps = o.value("eps", cfg.ot.eps);
    cfg.ot.tau = o.value("tau", cfg.ot.tau);
    cfg.ot.max_iter = o.value("max_iter", cfg.ot.max_iter);
    cfg.ot.tol = o.value("tol", cfg.ot.tol);
    cfg.ot.pool_stride = o.value("pool_stride", cfg.ot.pool_stride);
  }
  cfg.mse_sigma = j.value("mse_sigma", cfg.mse_sigma);
  cfg.clip_norm = j.value("clip_norm", cfg.clip_norm);
  return cfg;
}

namespace {

json synth_config_to_json(const SynthConfig& cfg) {
  json j;
  j["image_h"] = cfg.image_h;
  j["image_w"] = cfg.image_w;
  j["count_min"] = cfg.count_min;
  j["count_max"] = cfg.count_max;
  j["shots"] = cfg.shots;
  j["distractor_min"] = cfg.distractor_min;
  j["distractor_max"] = cfg.distractor_max;
  j["blob_half_min"] = cfg.blob_half_min;
  j["blob_half_max"] = cfg.blob_half_max;
  j["categories"] = cfg.categories;
  j["seed"] = cfg.seed;
  return j;
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig cfg;
  cfg.image_h = j.value("image_h", cfg.image_h);
  cfg.image_w = j.value("image_w", cfg.image_w);
  cfg.count_min = j.value("count_min", cfg.count_min);
  cfg.count_max = j.value("count_max", cfg.count_max);
  cfg.shots = j.value("shots", cfg.shots);
  cfg.distractor_min = j.value("distractor_min", cfg.distractor_min);
  cfg.distractor_max = j.value("distractor_max", cfg.distractor_max);
  cfg.blob_half_min = j.value("blob_half_min", cfg.blob_half_min);
  cfg.blob_half_max = j.value("blob_half_max", cfg.blob_half_max);
  if (j.contains("categories")) cfg.categories = j["categories"].get<std::vector<int>>();
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  const std::string preset = j.value("preset", "desk");
  RunConfig cfg;
  if (preset == "desk") {
    cfg = desk_run_config();
  } else if (preset == "full") {
    cfg = full_run_config();
  } else {
    throw Error("config: unknown preset '" + preset + "'");
  }
  if (j.contains("model")) {
    json merged = model_config_to_json(cfg.model);
    merged.merge_patch(j["model"]);
    cfg.model = model_config_from_json(merged);
  }
  if (j.contains("train")) {
    json merged = train_config_to_json(cfg.train);
    merged.merge_patch(j["train"]);
    cfg.train = train_config_from_json(merged);
  }
  if (j.contains("synth")) {
    json merged = synth_config_to_json(cfg.synth);
    merged.merge_patch(j["synth"]);
    cfg.synth = synth_config_from_json(merged);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw IoError("config: bad JSON in " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
  json j;
  j["model"] = model_config_to_json(cfg.model);
  j["train"] = train_config_to_json(cfg.train);
  j["synth"] = synth_config_to_json(cfg.synth);
  std::ofstream os(path);
  if (!os) throw IoError("config: cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

}  // namespace ssc
