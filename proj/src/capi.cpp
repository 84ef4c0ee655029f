#include "ssc/capi.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "ssc/gradsuite.hpp"
#include "ssc/image_io.hpp"
#include "ssc/ssdt.hpp"
#include "ssc/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

ssc_status status_of(const std::exception& e) {
  if (dynamic_cast<const ssc::NumericError*>(&e)) return SSC_ERR_NUMERIC;
  if (dynamic_cast<const ssc::IoError*>(&e)) return SSC_ERR_IO;
  if (dynamic_cast<const ssc::DimensionError*>(&e)) return SSC_ERR_INVALID;
  if (dynamic_cast<const ssc::Error*>(&e)) return SSC_ERR_INVALID;
  return SSC_ERR_INTERNAL;
}

template <typename Fn>
ssc_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return SSC_OK;
  } catch (const std::exception& e) {
    set_error(e.what());
    return status_of(e);
  } catch (...) {
    set_error("unknown error");
    return SSC_ERR_INTERNAL;
  }
}

ssc::RunConfig load_config_or_preset(const char* path) {
  return path ? ssc::load_run_config(path) : ssc::desk_run_config();
}

}  // namespace

struct ssc_tensor {
  ssc::Tensor<double> value;
};

struct ssc_model {
  ssc::Model<float> value;
};

extern "C" {

const char* ssc_last_error(void) { return g_last_error.c_str(); }

ssc_tensor* ssc_tensor_load(const char* path) {
  ssc_tensor* out = nullptr;
  guarded([&] {
    if (!path) throw ssc::Error("tensor_load: null path");
    out = new ssc_tensor{ssc::load_ssdt<double>(path)};
  });
  return out;
}

ssc_tensor* ssc_tensor_create(const uint32_t* extents, int ndim, const double* data) {
  ssc_tensor* out = nullptr;
  guarded([&] {
    if (!extents || ndim < 1 || !data) throw ssc::Error("tensor_create: bad arguments");
    ssc::Shape shape(extents, extents + ndim);
    std::vector<double> values(data, data + ssc::shape_numel(shape));
    out = new ssc_tensor{ssc::Tensor<double>::from(std::move(shape), std::move(values))};
  });
  return out;
}

ssc_status ssc_tensor_save(const ssc_tensor* t, const char* path) {
  return guarded([&] {
    if (!t || !path) throw ssc::Error("tensor_save: bad arguments");
    ssc::save_ssdt(path, t->value);
  });
}

int ssc_tensor_ndim(const ssc_tensor* t) {
  return t ? static_cast<int>(t->value.ndim()) : -1;
}

ssc_status ssc_tensor_extents(const ssc_tensor* t, uint32_t* out, int cap) {
  return guarded([&] {
    if (!t || !out) throw ssc::Error("tensor_extents: bad arguments");
    const ssc::Shape& s = t->value.shape();
    if (cap < static_cast<int>(s.size())) throw ssc::Error("tensor_extents: buffer too small");
    for (size_t i = 0; i < s.size(); ++i) out[i] = static_cast<uint32_t>(s[i]);
  });
}

int64_t ssc_tensor_numel(const ssc_tensor* t) { return t ? t->value.numel() : -1; }

ssc_status ssc_tensor_read(const ssc_tensor* t, double* out, int64_t cap) {
  return guarded([&] {
    if (!t || !out) throw ssc::Error("tensor_read: bad arguments");
    if (cap < t->value.numel()) throw ssc::Error("tensor_read: buffer too small");
    const auto& v = t->value.data();
    std::memcpy(out, v.data(), v.size() * sizeof(double));
  });
}

void ssc_tensor_free(ssc_tensor* t) { delete t; }

ssc_model* ssc_model_create(const char* config_json_or_null, uint64_t seed) {
  ssc_model* out = nullptr;
  guarded([&] {
    const ssc::RunConfig cfg = load_config_or_preset(config_json_or_null);
    out = new ssc_model{ssc::Model<float>(cfg.model, seed)};
  });
  return out;
}

ssc_model* ssc_model_load(const char* checkpoint_dir) {
  ssc_model* out = nullptr;
  guarded([&] {
    if (!checkpoint_dir) throw ssc::Error("model_load: null path");
    out = new ssc_model{ssc::Model<float>::load_checkpoint(checkpoint_dir)};
  });
  return out;
}

ssc_status ssc_model_save(const ssc_model* m, const char* checkpoint_dir) {
  return guarded([&] {
    if (!m || !checkpoint_dir) throw ssc::Error("model_save: bad arguments");
    m->value.save_checkpoint(checkpoint_dir);
  });
}

void ssc_model_free(ssc_model* m) { delete m; }

ssc_status ssc_synth(const char* config_json_or_null, const char* out_dir, int n,
                     uint64_t seed, int image_h, int image_w) {
  return guarded([&] {
    if (!out_dir) throw ssc::Error("synth: null output directory");
    ssc::RunConfig cfg = load_config_or_preset(config_json_or_null);
    ssc::SynthConfig synth = cfg.synth;
    synth.seed = seed;
    if (image_h > 0) synth.image_h = image_h;
    if (image_w > 0) synth.image_w = image_w;
    const int train_n = n > 0 ? n : 64;

    ssc::synth_dataset(synth, (fs::path(out_dir) / "train").string(), train_n);

    // held-out split: disjoint category pool, independent sample stream
    ssc::SynthConfig val = synth;
    val.categories.clear();
    for (int c = 0; c < 4; ++c) val.categories.push_back(1000 + c);
    val.seed = ssc::mix_seed(seed, 0x76616cull);
    const int val_n = std::max(4, train_n / 4);
    ssc::synth_dataset(val, (fs::path(out_dir) / "val").string(), val_n);
  });
}

ssc_status ssc_train(const char* config_json_or_null, const char* overrides_json_or_null,
                     const char* data_dir, const char* out_dir) {
  return guarded([&] {
    if (!data_dir || !out_dir) throw ssc::Error("train: null data/out directory");
    json merged;
    if (config_json_or_null) {
      std::ifstream is(config_json_or_null);
      if (!is) throw ssc::IoError(std::string("train: cannot open config: ") +
                                  config_json_or_null);
      is >> merged;
    } else {
      merged = json::object();
    }
    if (overrides_json_or_null && std::strlen(overrides_json_or_null) > 0) {
      merged.merge_patch(json::parse(overrides_json_or_null));
    }
    const ssc::RunConfig cfg = ssc::run_config_from_json(merged);
    fs::create_directories(out_dir);
    ssc::save_run_config((fs::path(out_dir) / "config.json").string(), cfg);
    ssc::run_training(cfg, data_dir, out_dir);
  });
}

ssc_status ssc_predict(ssc_model* m, const char* sample_json,
                       const ssc_predict_options* opts, double* count_out) {
  return guarded([&] {
    if (!m || !sample_json || !opts || !opts->density_out) {
      throw ssc::Error("predict: bad arguments");
    }
    const ssc::Sample sample = ssc::load_sample(sample_json);
    typename ssc::Model<float>::RunOptions run_opts;
    run_opts.apply_dis = opts->apply_dis != 0;
    if (opts->dis_gamma > 0) run_opts.dis.gamma = opts->dis_gamma;
    if (opts->dis_eta > 0) run_opts.dis.eta = opts->dis_eta;
    run_opts.want_similarity = opts->similarity_dir != nullptr;

    if (opts->profile) {
      m->value.slm().reset_flops();
      ssc::set_flop_profiling(true);
    }
    ssc::NoGradGuard ng;
    auto fwd = m->value.run(sample, run_opts);
    if (opts->profile) ssc::set_flop_profiling(false);

    ssc::save_ssdt(opts->density_out, fwd.density);
    if (count_out) *count_out = ssc::Model<float>::predicted_count(fwd.density);

    if (opts->pgm_out) {
      const auto& v = fwd.density.data();
      double lo = v[0], hi = v[0];
      for (float x : v) {
        lo = std::min(lo, static_cast<double>(x));
        hi = std::max(hi, static_cast<double>(x));
      }
      ssc::save_pgm(opts->pgm_out, fwd.density, lo, hi);
      json sidecar = {{"min", lo},
                      {"max", hi},
                      {"scale", fwd.scale},
                      {"image_h", fwd.image_h},
                      {"image_w", fwd.image_w}};
      std::ofstream os(std::string(opts->pgm_out) + ".json");
      os << sidecar.dump(2) << "\n";
    }
    if (opts->similarity_dir) {
      fs::create_directories(opts->similarity_dir);
      for (size_t k = 0; k < fwd.similarity.size(); ++k) {
        for (size_t p = 0; p < fwd.similarity[k].size(); ++p) {
          const std::string name =
              "sim_p" + std::to_string(p + 1) + "_k" + std::to_string(k + 1) + ".ssdt";
          ssc::save_ssdt((fs::path(opts->similarity_dir) / name).string(),
                         fwd.similarity[k][p]);
        }
      }
    }
    if (opts->profile) {
      json layers = json::array();
      for (const auto& l : m->value.slm().flop_report()) {
        layers.push_back({{"layer", l.name},
                          {"flops_cp4d", l.cp4d},
                          {"flops_dense_equiv", l.dense_equiv}});
      }
      std::ofstream os(std::string(opts->density_out) + ".flops.json");
      os << json{{"layers", layers}}.dump(2) << "\n";
    }
  });
}

ssc_status ssc_evaluate(ssc_model* m, const char* data_dir, int shots, int apply_dis,
                        double dis_gamma, double dis_eta,
                        const char* report_json_or_null, double* mae_out,
                        double* rmse_out) {
  return guarded([&] {
    if (!m || !data_dir) throw ssc::Error("evaluate: bad arguments");
    std::vector<ssc::Sample> samples = ssc::load_split(data_dir, shots);
    ssc::DisConfig dis;
    if (dis_gamma > 0) dis.gamma = dis_gamma;
    if (dis_eta > 0) dis.eta = dis_eta;
    const ssc::EvalReport report =
        ssc::evaluate_model(m->value, samples, apply_dis != 0, dis);
    if (mae_out) *mae_out = report.mae;
    if (rmse_out) *rmse_out = report.rmse;
    if (report_json_or_null) {
      json per = json::array();
      for (const auto& [gt, pred] : report.per_sample) per.push_back({gt, pred});
      json j = {{"mae", report.mae}, {"rmse", report.rmse}, {"per_sample", per}};
      std::ofstream os(report_json_or_null);
      if (!os) throw ssc::IoError(std::string("evaluate: cannot write report: ") +
                                  report_json_or_null);
      os << j.dump(2) << "\n";
    }
  });
}

ssc_status ssc_gradcheck(const char* module_or_null, const char* report_json_or_null,
                         int* failures_out) {
  return guarded([&] {
    const auto entries = ssc::run_grad_suite(module_or_null ? module_or_null : "");
    int failures = 0;
    json lines = json::array();
    for (const auto& e : entries) {
      if (!e.pass) ++failures;
      lines.push_back({{"module", e.module},
                       {"check", e.check},
                       {"max_rel_err", e.max_rel_err},
                       {"tol", e.tol},
                       {"pass", e.pass}});
    }
    if (failures_out) *failures_out = failures;
    if (report_json_or_null) {
      std::ofstream os(report_json_or_null);
      if (!os) throw ssc::IoError(std::string("gradcheck: cannot write report: ") +
                                  report_json_or_null);
      os << json{{"checks", lines}, {"failures", failures}}.dump(2) << "\n";
    }
  });
}

}  // extern "C"
