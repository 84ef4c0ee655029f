// Exercises the shared-library surface the CLI uses.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "ssc/capi.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string tmp_dir(const char* name) {
  const fs::path p = fs::temp_directory_path() / "ssc_capi" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string write_tiny_config(const std::string& dir) {
  json j;
  j["preset"] = "desk";
  j["model"] = {{"backbone", {{"channels", 8}, {"levels", {1, 1}}}},
                {"roi_size", 4},
                {"slm", {{"widths", {4, 8}}, {"support_strides", {2, 2}}, {"gn_groups", 2}}},
                {"decoder", {{"widths", {4, 2, 2}}}}};
  j["train"] = {{"epochs", 1}, {"shots", 2}, {"lr", 1e-3},
                {"dis_gamma", 8.0}, {"ot", {{"pool_stride", 4}}}};
  j["synth"] = {{"image_h", 32},      {"image_w", 48},     {"count_min", 2},
                {"count_max", 4},     {"shots", 2},        {"blob_half_min", 3.0},
                {"blob_half_max", 5.0}, {"distractor_min", 0}, {"distractor_max", 1}};
  const std::string path = dir + "/config.json";
  std::ofstream os(path);
  os << j.dump(2);
  return path;
}

}  // namespace

TEST_CASE("tensor creation, io and error reporting") {
  const std::string dir = tmp_dir("tensor");
  const uint32_t extents[2] = {2, 3};
  const double data[6] = {1, 2, 3, 4, 5, 6};
  ssc_tensor* t = ssc_tensor_create(extents, 2, data);
  REQUIRE(t != nullptr);
  CHECK(ssc_tensor_ndim(t) == 2);
  CHECK(ssc_tensor_numel(t) == 6);

  const std::string path = dir + "/t.ssdt";
  CHECK(ssc_tensor_save(t, path.c_str()) == SSC_OK);
  ssc_tensor* back = ssc_tensor_load(path.c_str());
  REQUIRE(back != nullptr);
  uint32_t ext[2] = {0, 0};
  CHECK(ssc_tensor_extents(back, ext, 2) == SSC_OK);
  CHECK(ext[0] == 2);
  CHECK(ext[1] == 3);
  double out[6] = {0};
  CHECK(ssc_tensor_read(back, out, 6) == SSC_OK);
  CHECK(out[5] == 6.0);
  ssc_tensor_free(t);
  ssc_tensor_free(back);

  CHECK(ssc_tensor_load((dir + "/missing.ssdt").c_str()) == nullptr);
  CHECK(std::strlen(ssc_last_error()) > 0);
}

TEST_CASE("synth, train, evaluate, predict and gradcheck through the C API") {
  const std::string root = tmp_dir("pipeline");
  const std::string config = write_tiny_config(root);
  const std::string data = root + "/data";
  const std::string out = root + "/run";

  REQUIRE(ssc_synth(config.c_str(), data.c_str(), 6, 11, 0, 0) == SSC_OK);
  CHECK(fs::exists(data + "/train/dataset.json"));
  CHECK(fs::exists(data + "/val/dataset.json"));

  REQUIRE(ssc_train(config.c_str(), "{\"train\":{\"epochs\":1}}", data.c_str(),
                    out.c_str()) == SSC_OK);
  CHECK(fs::exists(out + "/train_log.jsonl"));
  CHECK(fs::exists(out + "/checkpoint/manifest.json"));

  ssc_model* model = ssc_model_load((out + "/checkpoint").c_str());
  REQUIRE(model != nullptr);

  double mae = -1, rmse = -1;
  REQUIRE(ssc_evaluate(model, (data + "/val").c_str(), 2, 1, 8.0, 12.0,
                       (root + "/report.json").c_str(), &mae, &rmse) == SSC_OK);
  CHECK(mae >= 0.0);
  CHECK(rmse >= mae - 1e-9);
  CHECK(fs::exists(root + "/report.json"));

  ssc_predict_options opts{};
  const std::string density = root + "/density.ssdt";
  const std::string pgm = root + "/density.pgm";
  const std::string simdir = root + "/sims";
  opts.density_out = density.c_str();
  opts.pgm_out = pgm.c_str();
  opts.similarity_dir = simdir.c_str();
  opts.profile = 1;
  opts.apply_dis = 1;
  opts.dis_gamma = 8.0;
  opts.dis_eta = 12.0;
  double count = -1;
  REQUIRE(ssc_predict(model, (data + "/val/sample_00000.json").c_str(), &opts,
                      &count) == SSC_OK);
  CHECK(count >= 0.0);
  CHECK(fs::exists(density));
  CHECK(fs::exists(pgm));
  CHECK(fs::exists(pgm + ".json"));
  CHECK(fs::exists(density + ".flops.json"));
  CHECK(fs::exists(simdir + "/sim_p1_k1.ssdt"));
  CHECK(fs::exists(simdir + "/sim_p2_k2.ssdt"));

  // density SSDT loads back and its sum equals the reported count
  ssc_tensor* dt = ssc_tensor_load(density.c_str());
  REQUIRE(dt != nullptr);
  std::vector<double> values(static_cast<size_t>(ssc_tensor_numel(dt)));
  REQUIRE(ssc_tensor_read(dt, values.data(), static_cast<int64_t>(values.size())) ==
          SSC_OK);
  double sum = 0.0;
  for (double v : values) sum += v;
  CHECK(sum == doctest::Approx(count).epsilon(1e-4));
  ssc_tensor_free(dt);

  // flops report carries the cp4d vs dense accounting
  {
    std::ifstream is(density + ".flops.json");
    json flops;
    is >> flops;
    REQUIRE(flops.at("layers").size() > 0);
    for (const auto& layer : flops.at("layers")) {
      const double cp = layer.at("flops_cp4d").get<double>();
      const double dense = layer.at("flops_dense_equiv").get<double>();
      CHECK(cp > 0.0);
      CHECK(cp / dense <= 0.25);
    }
  }

  ssc_model_free(model);

  int failures = -1;
  REQUIRE(ssc_gradcheck("tensor", nullptr, &failures) == SSC_OK);
  CHECK(failures == 0);
}

TEST_CASE("train with a missing data directory reports an IO-ish failure") {
  const std::string root = tmp_dir("bad_train");
  const ssc_status st = ssc_train(nullptr, nullptr, (root + "/nope").c_str(),
                                  (root + "/out").c_str());
  CHECK(st != SSC_OK);
  CHECK(std::strlen(ssc_last_error()) > 0);
}
