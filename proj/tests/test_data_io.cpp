#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ssc/backbone.hpp"
#include "ssc/image_io.hpp"
#include "ssc/ssdt.hpp"
#include "ssc/synth.hpp"
#include "ssc/train.hpp"
#include "test_util.hpp"

using namespace ssc;
using testutil::rand_tensor;
namespace fs = std::filesystem;

namespace {
using D = Tensor<double>;
using F = Tensor<float>;

std::string tmp_dir(const char* name) {
  const fs::path p = fs::temp_directory_path() / "ssc_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}
}  // namespace

TEST_CASE("ssdt round trip and header bytes") {
  const std::string dir = tmp_dir("ssdt");
  D t = D::from({2, 3}, {1.5, -2.0, 0.0, 4.25, 1e-7, 3e5});
  const std::string path = dir + "/t.ssdt";
  save_ssdt(path, t);

  const auto bytes = slurp(path);
  REQUIRE(bytes.size() == 4 + 4 + 1 + 4 + 2 * 4 + 6 * 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SSDT");
  CHECK(bytes[4] == 1);  // version u32 LE
  CHECK(bytes[5] == 0);
  CHECK(bytes[8] == 1);  // dtype f64
  CHECK(bytes[9] == 2);  // ndim u32 LE
  CHECK(bytes[13] == 2);  // extent 0
  CHECK(bytes[17] == 3);  // extent 1

  D back = load_ssdt<double>(path);
  CHECK(back.shape() == t.shape());
  CHECK(testutil::max_abs_diff(back, t) == 0.0);

  // f32 payload read back as double
  F tf = F::from({4}, {0.5f, 1.5f, -2.5f, 3.0f});
  save_ssdt(dir + "/f.ssdt", tf);
  D widened = load_ssdt<double>(dir + "/f.ssdt");
  CHECK(widened[2] == -2.5);
}

TEST_CASE("ssdt rejects malformed files") {
  const std::string dir = tmp_dir("ssdt_bad");
  {
    std::ofstream os(dir + "/bad.ssdt", std::ios::binary);
    os << "NOPE";
  }
  CHECK_THROWS_AS(load_ssdt<double>(dir + "/bad.ssdt"), IoError);
  CHECK_THROWS_AS(load_ssdt<double>(dir + "/missing.ssdt"), IoError);

  D t = D::from({4}, {1, 2, 3, 4});
  save_ssdt(dir + "/t.ssdt", t);
  const auto bytes = slurp(dir + "/t.ssdt");
  std::ofstream os(dir + "/trunc.ssdt", std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size() - 9));
  os.close();
  CHECK_THROWS_AS(load_ssdt<double>(dir + "/trunc.ssdt"), IoError);
}

TEST_CASE("ppm round trip preserves quantized pixels") {
  const std::string dir = tmp_dir("ppm");
  Rng rng(31);
  F img = rand_tensor<float>({3, 6, 5}, rng, 0.0, 1.0);
  save_ppm(dir + "/a.ppm", img);
  F back = load_ppm(dir + "/a.ppm");
  CHECK(back.shape() == img.shape());
  CHECK(testutil::max_abs_diff(back, img) <= 0.5 / 255.0 + 1e-6);
  save_ppm(dir + "/b.ppm", back);
  CHECK(slurp(dir + "/a.ppm") == slurp(dir + "/b.ppm"));
}

TEST_CASE("dynamic scale formula") {
  const DisConfig cfg;  // paper defaults gamma=32, eta=12
  auto boxes_with_min = [](double w, double h) {
    return std::vector<ExemplarBox>{{0, 0, w, h}};
  };
  CHECK(dynamic_scale(boxes_with_min(32, 40), cfg) == 1.0);
  CHECK(dynamic_scale(boxes_with_min(20, 30), cfg) == doctest::Approx(2.0));
  CHECK(dynamic_scale(boxes_with_min(8, 50), cfg) == doctest::Approx(3.0));

  // mean over K boxes feeds the rule
  std::vector<ExemplarBox> boxes{{0, 0, 16, 40}, {0, 0, 24, 40}};  // mean w = 20
  CHECK(dynamic_scale(boxes, cfg) == doctest::Approx(2.0));

  CHECK_THROWS_AS(dynamic_scale({{0, 0, 0, 5}}, cfg), DimensionError);
}

TEST_CASE("dynamic scale properties") {
  const DisConfig cfg;
  Rng rng(32);
  double prev_scale = 1e18;
  for (int i = 0; i < 200; ++i) {
    const double w = rng.uniform(1.0, 64.0), h = rng.uniform(1.0, 64.0);
    const double s = dynamic_scale({{0, 0, w, h}}, cfg);
    CHECK(s >= 1.0);
    CHECK((s == 1.0) == (std::min(w, h) >= cfg.gamma));
  }
  for (double m = 1.0; m <= 64.0; m += 0.5) {  // nonincreasing in min extent
    const double s = dynamic_scale({{0, 0, m, m}}, cfg);
    CHECK(s <= prev_scale + 1e-12);
    prev_scale = s;
  }
}

TEST_CASE("resize_sample scales image and annotations together") {
  SynthConfig cfg;
  cfg.image_h = 32;
  cfg.image_w = 48;
  cfg.count_min = 3;
  cfg.count_max = 3;
  cfg.shots = 2;
  cfg.blob_half_min = 4;
  cfg.blob_half_max = 6;
  Sample s = synth_sample(cfg, 0);

  Sample same = resize_sample(s, 1.0);
  CHECK(testutil::max_abs_diff(same.image, s.image) == 0.0);

  Sample doubled = resize_sample(s, 2.0);
  CHECK(doubled.image.dim(1) == 64);
  CHECK(doubled.image.dim(2) == 96);
  CHECK(doubled.points.size() == s.points.size());
  for (size_t i = 0; i < s.points.size(); ++i) {
    CHECK(doubled.points[i][0] == doctest::Approx(2.0 * s.points[i][0]));
    CHECK(doubled.points[i][1] == doctest::Approx(2.0 * s.points[i][1]));
  }
  CHECK(doubled.boxes[0].width() == doctest::Approx(2.0 * s.boxes[0].width()));
  CHECK_THROWS_AS(resize_sample(s, 0.5), Error);
}

TEST_CASE("pad_sample_to_multiple zero-fills bottom right") {
  SynthConfig cfg;
  cfg.image_h = 33;
  cfg.image_w = 50;
  cfg.count_min = 2;
  cfg.count_max = 2;
  cfg.shots = 1;
  cfg.blob_half_min = 4;
  cfg.blob_half_max = 6;
  Sample s = synth_sample(cfg, 1);
  Sample p = pad_sample_to_multiple(s, 16);
  CHECK(p.image.dim(1) == 48);
  CHECK(p.image.dim(2) == 64);
  CHECK(p.points == s.points);
  CHECK(p.image.at({0, 40, 60}) == 0.0f);
  for (int64_t y = 0; y < 33; ++y) {
    CHECK(p.image.at({1, y, 10}) == s.image.at({1, y, 10}));
  }
}

TEST_CASE("toy backbone emits the documented pyramid shapes") {
  BackboneConfig cfg;  // c=32, levels (2,2,2)
  Rng rng(33);
  ToyBackbone<float> bb(cfg, rng);
  F img = rand_tensor<float>({3, 128, 192}, rng, 0.0, 1.0);
  NoGradGuard ng;
  auto pyr = bb.forward(img);
  REQUIRE(pyr.groups.size() == 3);
  const Shape expect[3] = {{32, 16, 24}, {64, 8, 12}, {128, 4, 6}};
  for (int p = 0; p < 3; ++p) {
    CHECK(pyr.groups[p].stride == 8 << p);
    REQUIRE(pyr.groups[p].levels.size() == 2);
    for (const auto& lvl : pyr.groups[p].levels) CHECK(lvl.shape() == expect[p]);
  }
  pyr.validate();
}

TEST_CASE("toy backbone is deterministic per seed") {
  BackboneConfig cfg;
  cfg.channels = 8;
  cfg.levels = {1, 1};
  Rng rng_a(77), rng_b(77), rng_c(78);
  ToyBackbone<float> a(cfg, rng_a), b(cfg, rng_b), c(cfg, rng_c);
  Rng img_rng(5);
  F img = rand_tensor<float>({3, 32, 32}, img_rng, 0.0, 1.0);
  NoGradGuard ng;
  auto pa = a.forward(img), pb = b.forward(img), pc = c.forward(img);
  CHECK(testutil::max_abs_diff(pa.groups[1].levels[0], pb.groups[1].levels[0]) == 0.0);
  CHECK(testutil::max_abs_diff(pa.groups[1].levels[0], pc.groups[1].levels[0]) > 0.0);
}

TEST_CASE("frozen backbone accumulates no gradients") {
  BackboneConfig cfg;
  cfg.channels = 8;
  cfg.levels = {1};
  cfg.frozen = true;
  Rng rng(34);
  ToyBackbone<double> bb(cfg, rng);
  D img = rand_tensor<double>({3, 16, 16}, rng, 0.0, 1.0);
  auto pyr = bb.forward(img);
  ParamList<double> params;
  bb.collect_params("bb", params);
  CHECK_FALSE(params.empty());
  sum_all(pyr.groups[0].levels[0]).backward();
  for (const auto& p : params) {
    CHECK_FALSE(p.value.requires_grad());
    CHECK_FALSE(p.value.has_grad());
  }
}

TEST_CASE("backbone rejects indivisible extents") {
  BackboneConfig cfg;
  Rng rng(35);
  ToyBackbone<float> bb(cfg, rng);
  CHECK_THROWS_AS(bb.forward(F::zeros({3, 100, 128})), DimensionError);
}

TEST_CASE("roi_align constants and exact alignment") {
  // constant map -> constant output
  D feat = D::full({2, 6, 6}, 1.25);
  D out = roi_align(feat, {1.3, 0.7, 5.2, 4.9}, 3, 3, 1.0);
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(1.25));

  // 2x2-pixel bins aligned with the grid: all samples land on pixel centers,
  // each bin reproduces its block of pixels (averaged) exactly
  Rng rng(36);
  D f = rand_tensor<double>({1, 8, 8}, rng);
  D got = roi_align(f, {2.0, 2.0, 6.0, 6.0}, 2, 2, 1.0);
  for (int by = 0; by < 2; ++by) {
    for (int bx = 0; bx < 2; ++bx) {
      const int64_t y0 = 2 + 2 * by, x0 = 2 + 2 * bx;
      const double mean = (f.at({0, y0, x0}) + f.at({0, y0, x0 + 1}) +
                           f.at({0, y0 + 1, x0}) + f.at({0, y0 + 1, x0 + 1})) /
                          4.0;
      CHECK(got.at({0, by, bx}) == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("roi_align matches the dense bilinear sampling oracle") {
  Rng rng(37);
  D f = rand_tensor<double>({2, 7, 9}, rng);
  const ExemplarBox box{3.7, 2.1, 14.9, 11.3};
  const double stride = 2.0;
  D got = roi_align(f, box, 3, 4, stride);
  for (int64_t c = 0; c < 2; ++c) {
    std::vector<double> plane(f.data().begin() + c * 63, f.data().begin() + (c + 1) * 63);
    const double bh = box.height() / 3.0, bw = box.width() / 4.0;
    for (int by = 0; by < 3; ++by) {
      for (int bx = 0; bx < 4; ++bx) {
        double acc = 0.0;
        for (int sy = 0; sy < 2; ++sy) {
          for (int sx = 0; sx < 2; ++sx) {
            const double y = box.y1 + (by + (sy + 0.5) / 2.0) * bh;
            const double x = box.x1 + (bx + (sx + 0.5) / 2.0) * bw;
            acc += testutil::bilinear_at(plane, 7, 9, y / stride - 0.5, x / stride - 0.5);
          }
        }
        CHECK(std::abs(got.at({c, by, bx}) - acc / 4.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("roi_align is linear in the feature map") {
  Rng rng(38);
  D f1 = rand_tensor<double>({2, 6, 6}, rng);
  D f2 = rand_tensor<double>({2, 6, 6}, rng);
  const ExemplarBox box{0.5, 1.0, 5.0, 5.5};
  D lhs = roi_align(add(scale(f1, 2.0), scale(f2, -0.7)), box, 3, 3, 1.0);
  D rhs = add(scale(roi_align(f1, box, 3, 3, 1.0), 2.0),
              scale(roi_align(f2, box, 3, 3, 1.0), -0.7));
  CHECK(testutil::max_abs_diff(lhs, rhs) < 1e-5);
}

TEST_CASE("roi_align rejects out-of-map and degenerate boxes") {
  D f = D::zeros({1, 4, 4});
  CHECK_THROWS_AS(roi_align(f, {10.0, 10.0, 12.0, 12.0}, 2, 2, 1.0), DimensionError);
  CHECK_THROWS_AS(roi_align(f, {2.0, 2.0, 2.0, 3.0}, 2, 2, 1.0), DimensionError);
}

TEST_CASE("synthetic samples honor the construction contract") {
  SynthConfig cfg;
  cfg.count_min = 5;
  cfg.count_max = 5;
  cfg.shots = 3;
  Sample s = synth_sample(cfg, 4);
  CHECK(s.points.size() == 5);  // distractors never contribute points
  CHECK(s.boxes.size() == 3);
  validate_sample(s);
  for (const auto& b : s.boxes) {
    CHECK(b.width() >= 2 * cfg.blob_half_min - 1e-9);
    CHECK(b.width() <= 2 * cfg.blob_half_max + 1e-9);
  }
}

TEST_CASE("synth_dataset is byte-identical per seed") {
  SynthConfig cfg;
  cfg.image_h = 64;
  cfg.image_w = 64;
  cfg.count_min = 3;
  cfg.count_max = 6;
  const std::string d1 = tmp_dir("synth_a");
  const std::string d2 = tmp_dir("synth_b");
  synth_dataset(cfg, d1, 3);
  synth_dataset(cfg, d2, 3);
  for (const char* name : {"dataset.json", "sample_00000.ppm", "sample_00001.json",
                           "sample_00002.ppm"}) {
    CHECK(slurp(d1 + "/" + name) == slurp(d2 + "/" + name));
  }
}

TEST_CASE("annotation json round trip") {
  const std::string dir = tmp_dir("ann");
  SynthConfig cfg;
  cfg.image_h = 32;
  cfg.image_w = 32;
  cfg.count_min = 2;
  cfg.count_max = 3;
  cfg.shots = 2;
  cfg.blob_half_min = 3;
  cfg.blob_half_max = 5;
  Sample s = synth_sample(cfg, 9);
  save_ppm(dir + "/img.ppm", s.image);
  save_annotation(dir + "/img.json", "img.ppm", s);
  Sample back = load_sample(dir + "/img.json");
  CHECK(back.points == s.points);
  CHECK(back.boxes.size() == s.boxes.size());
  CHECK(back.category_id == s.category_id);
  CHECK(back.image.shape() == s.image.shape());
}

TEST_CASE("pyramid manifest round trip and feature ingestion") {
  const std::string dir = tmp_dir("pyr");
  Rng rng(39);
  FeaturePyramid<float> pyr;
  pyr.groups.push_back({8, {rand_tensor<float>({4, 8, 8}, rng),
                            rand_tensor<float>({4, 8, 8}, rng)}});
  pyr.groups.push_back({16, {rand_tensor<float>({8, 4, 4}, rng)}});
  save_pyramid(dir + "/pyr.json", pyr, 64, 64);
  CHECK(fs::exists(dir + "/L1_1.ssdt"));
  CHECK(fs::exists(dir + "/L2_1.ssdt"));

  int64_t h = 0, w = 0;
  auto back = load_pyramid<float>(dir + "/pyr.json", &h, &w);
  CHECK(h == 64);
  CHECK(w == 64);
  REQUIRE(back.groups.size() == 2);
  CHECK(testutil::max_abs_diff(back.groups[0].levels[1], pyr.groups[0].levels[1]) == 0.0);

  // a sample annotation can point at the manifest instead of an image
  Sample s;
  s.feature_ref = dir + "/pyr.json";
  s.boxes = {{4, 4, 20, 20}};
  s.points = {{10, 10}};
  save_annotation(dir + "/feat_sample.json", "pyr.json", s);
  Sample loaded = load_sample(dir + "/feat_sample.json");
  CHECK_FALSE(loaded.has_image());
  CHECK(loaded.feature_ref == dir + "/pyr.json");
}

TEST_CASE("pyramid validation rejects mixed groups") {
  Rng rng(40);
  FeaturePyramid<float> pyr;
  pyr.groups.push_back({8, {rand_tensor<float>({4, 8, 8}, rng),
                            rand_tensor<float>({4, 6, 8}, rng)}});
  CHECK_THROWS_AS(pyr.validate(), DimensionError);
}
