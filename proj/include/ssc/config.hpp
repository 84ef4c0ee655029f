#pragma once

#include <string>

#include "json.hpp"
#include "ssc/backbone.hpp"
#include "ssc/data.hpp"
#include "ssc/decoder.hpp"
#include "ssc/fce.hpp"
#include "ssc/gen_loss.hpp"
#include "ssc/slm.hpp"
#include "ssc/synth.hpp"

namespace ssc {

struct ModelConfig {
  BackboneConfig backbone;
  int roi_size = 8;
  FceConfig fce;
  SlmConfig slm;
  DecoderConfig decoder;
};

struct TrainConfig {
  double lr = 1e-4;
  double lr_decay = 0.95;
  int batch_size = 4;
  int epochs = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-2;
  uint64_t seed = 0;
  bool fce = true;
  bool gloss = true;
  bool dis = true;
  int shots = 3;
  DisConfig dis_cfg;
  OtConfig ot;
  double mse_sigma = 2.0;
  double clip_norm = 10.0;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
};

// Desk-scale defaults: 3 groups at channels (32,64,128), 2 levels each,
// 8x8 exemplar features, SLM widths (8,16,32).
RunConfig desk_run_config();

// Full-scale layout: levels (4,6,3), 16x16 exemplars, SLM widths (32,128,256).
RunConfig full_run_config();

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Reads {"preset": "desk"|"full", "model": {...}, "train": {...}, "synth":
// {...}}; explicit fields override the preset.
RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_json(const nlohmann::json& j);
void save_run_config(const std::string& path, const RunConfig& cfg);

}  // namespace ssc
