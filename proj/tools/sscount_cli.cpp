// Command-line front end; talks to the library strictly through the C API.
#include <cstdint>
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "ssc/capi.h"

namespace {

int fail(const char* what) {
  std::fprintf(stderr, "error: %s: %s\n", what, ssc_last_error());
  return 1;
}

const char* opt_cstr(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

bool parse_size(const std::string& text, int* h, int* w) {
  const size_t x = text.find('x');
  if (x == std::string::npos) return false;
  try {
    *h = std::stoi(text.substr(0, x));
    *w = std::stoi(text.substr(x + 1));
  } catch (...) {
    return false;
  }
  return *h > 0 && *w > 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot object counting via 4D similarity learning"};
  app.require_subcommand(1);

  // --- synth ---
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset (train + val)");
  std::string synth_out, synth_size, synth_config;
  int synth_n = 64;
  uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--n", synth_n, "number of training samples");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--size", synth_size, "image size HxW, e.g. 128x192");
  synth->add_option("--config", synth_config, "run config JSON");

  // --- train ---
  auto* train = app.add_subcommand("train", "train a model on a dataset directory");
  std::string train_config, train_data, train_out, train_loss = "generalized";
  bool no_fce = false, no_dis = false;
  int train_shots = -1;
  uint64_t train_seed = UINT64_MAX;
  int train_epochs = -1;
  train->add_option("--config", train_config, "run config JSON (desk preset if absent)");
  train->add_option("--data", train_data, "dataset directory with train/ and val/")->required();
  train->add_option("--out", train_out, "output directory (log + checkpoint)")->required();
  train->add_flag("--no-fce", no_fce, "disable the feature cross enhancement module");
  train->add_flag("--no-dis", no_dis, "disable dynamic image scaling");
  train->add_option("--loss", train_loss, "generalized | mse")
      ->check(CLI::IsMember({"generalized", "mse"}));
  train->add_option("--shots", train_shots, "exemplar boxes per sample");
  train->add_option("--seed", train_seed, "training seed");
  train->add_option("--epochs", train_epochs, "epochs override");

  // --- eval ---
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::string eval_ckpt, eval_data, eval_report;
  int eval_shots = 0;
  bool eval_no_dis = false;
  double eval_gamma = 0, eval_eta = 0;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint directory")->required();
  eval->add_option("--data", eval_data, "dataset split directory")->required();
  eval->add_option("--report", eval_report, "write per-sample JSON report here");
  eval->add_option("--shots", eval_shots, "truncate exemplar boxes (0 = all)");
  eval->add_flag("--no-dis", eval_no_dis, "disable dynamic image scaling");
  eval->add_option("--dis-gamma", eval_gamma, "DIS threshold in pixels");
  eval->add_option("--dis-eta", eval_eta, "DIS divisor in pixels");

  // --- predict ---
  auto* predict = app.add_subcommand("predict", "run one sample through a checkpoint");
  std::string pr_ckpt, pr_sample, pr_out, pr_pgm, pr_simdir;
  bool pr_profile = false, pr_no_dis = false;
  double pr_gamma = 0, pr_eta = 0;
  predict->add_option("--ckpt", pr_ckpt, "checkpoint directory")->required();
  predict->add_option("--sample", pr_sample, "annotation JSON")->required();
  predict->add_option("--out", pr_out, "density map SSDT output")->required();
  predict->add_option("--pgm", pr_pgm, "also export a PGM view (+ .json sidecar)");
  predict->add_option("--dump-similarity", pr_simdir, "dump per-(p,k) similarity SSDTs");
  predict->add_flag("--profile", pr_profile, "write 4D-conv multiply counts");
  predict->add_flag("--no-dis", pr_no_dis, "disable dynamic image scaling");
  predict->add_option("--dis-gamma", pr_gamma, "DIS threshold in pixels");
  predict->add_option("--dis-eta", pr_eta, "DIS divisor in pixels");

  // --- gradcheck ---
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::string gc_module, gc_report;
  gradcheck->add_option("--module", gc_module,
                        "tensor|nn|roi|fce|similarity|slm|decoder|loss|pipeline");
  gradcheck->add_option("--report", gc_report, "write JSON report here");

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) {
    int h = 0, w = 0;
    if (!synth_size.empty() && !parse_size(synth_size, &h, &w)) {
      std::fprintf(stderr, "error: --size expects HxW, got '%s'\n", synth_size.c_str());
      return 1;
    }
    if (ssc_synth(opt_cstr(synth_config), synth_out.c_str(), synth_n, synth_seed, h, w) !=
        SSC_OK) {
      return fail("synth");
    }
    std::printf("wrote %s/train and %s/val\n", synth_out.c_str(), synth_out.c_str());
    return 0;
  }

  if (train->parsed()) {
    std::string overrides = "{\"train\":{";
    bool first = true;
    auto field = [&](const std::string& kv) {
      if (!first) overrides += ",";
      overrides += kv;
      first = false;
    };
    if (no_fce) field("\"fce\":false");
    if (no_dis) field("\"dis\":false");
    if (train_loss == "mse") field("\"gloss\":false");
    if (train_shots >= 1) field("\"shots\":" + std::to_string(train_shots));
    if (train_seed != UINT64_MAX) field("\"seed\":" + std::to_string(train_seed));
    if (train_epochs >= 0) field("\"epochs\":" + std::to_string(train_epochs));
    overrides += "}}";
    const char* ov = first ? nullptr : overrides.c_str();
    if (ssc_train(opt_cstr(train_config), ov, train_data.c_str(), train_out.c_str()) !=
        SSC_OK) {
      return fail("train");
    }
    std::printf("training finished; log at %s/train_log.jsonl\n", train_out.c_str());
    return 0;
  }

  if (eval->parsed()) {
    ssc_model* model = ssc_model_load(eval_ckpt.c_str());
    if (!model) return fail("eval: load checkpoint");
    double mae = 0, rmse = 0;
    const ssc_status st =
        ssc_evaluate(model, eval_data.c_str(), eval_shots, eval_no_dis ? 0 : 1,
                     eval_gamma, eval_eta, opt_cstr(eval_report), &mae, &rmse);
    ssc_model_free(model);
    if (st != SSC_OK) return fail("eval");
    std::printf("{\"mae\": %.6f, \"rmse\": %.6f}\n", mae, rmse);
    return 0;
  }

  if (predict->parsed()) {
    ssc_model* model = ssc_model_load(pr_ckpt.c_str());
    if (!model) return fail("predict: load checkpoint");
    ssc_predict_options opts{};
    opts.density_out = pr_out.c_str();
    opts.pgm_out = opt_cstr(pr_pgm);
    opts.similarity_dir = opt_cstr(pr_simdir);
    opts.profile = pr_profile ? 1 : 0;
    opts.apply_dis = pr_no_dis ? 0 : 1;
    opts.dis_gamma = pr_gamma;
    opts.dis_eta = pr_eta;
    double count = 0;
    const ssc_status st = ssc_predict(model, pr_sample.c_str(), &opts, &count);
    ssc_model_free(model);
    if (st != SSC_OK) return fail("predict");
    std::printf("{\"count\": %.4f, \"density\": \"%s\"}\n", count, pr_out.c_str());
    return 0;
  }

  if (gradcheck->parsed()) {
    int failures = 0;
    if (ssc_gradcheck(opt_cstr(gc_module), opt_cstr(gc_report), &failures) != SSC_OK) {
      return fail("gradcheck");
    }
    std::printf("gradcheck: %s (%d failing checks)\n", failures == 0 ? "PASS" : "FAIL",
                failures);
    return failures == 0 ? 0 : 1;
  }
  return 0;
}
